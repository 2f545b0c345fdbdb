"""Numerical equivariance audits for single layers and whole networks."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .group import GroupSpec, enumerate_group
from .layers import (g_batch_norm, g_max_pool, g_projection, g_upsample, gconv_g_to_g, gconv_z2_to_g,
                     transform_feature_g, transform_feature_z2)
from .segnet import SegNet
from .tensor import Tensor, no_grad

LAYERS = ("gconv_z2_to_g", "gconv_g_to_g", "g_upsample", "g_projection", "g_max_pool", "g_batch_norm")


def _layer_case(name: str, group: GroupSpec, rng):
    """A random instance of layer ``name``: (fn, input, input kind, output kind)."""
    S = group.order
    B, C, K, k = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.choice([1, 3, 5]))
    H = int(rng.choice([6, 8, 10]))
    z2 = rng.standard_normal((B, C, H, H))
    gmap = rng.standard_normal((B, C, S, H, H))
    if name == "gconv_z2_to_g":
        w, b = Tensor(rng.standard_normal((K, C, k, k))), Tensor(rng.standard_normal(K))
        return (lambda x: gconv_z2_to_g(x, w, group, padding=k // 2, bias=b)), z2, "z2", "g"
    if name == "gconv_g_to_g":
        w, b = Tensor(rng.standard_normal((K, C, S, k, k))), Tensor(rng.standard_normal(K))
        return (lambda x: gconv_g_to_g(x, w, group, padding=k // 2, bias=b)), gmap, "g", "g"
    if name == "g_upsample":
        return (lambda x: g_upsample(x, 2)), gmap, "g", "g"
    if name == "g_projection":
        return g_projection, gmap, "g", "z2"
    if name == "g_max_pool":
        return (lambda x: g_max_pool(x, 2)), gmap, "g", "g"
    if name == "g_batch_norm":
        gamma, beta = Tensor(rng.uniform(0.5, 1.5, C)), Tensor(rng.standard_normal(C))
        training = bool(rng.integers(2))
        rm, rv = rng.standard_normal(C), rng.uniform(0.5, 2.0, C)

        def bn(x):
            return g_batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training=training)
        return bn, gmap, "g", "g"
    raise ValueError(f"unknown layer {name!r}")


def _transform(kind, g, x, group):
    return transform_feature_z2(g, x) if kind == "z2" else transform_feature_g(g, x, group)


def layer_equivariance(name: str, group: GroupSpec, trials: int = 50, seed: int = 0) -> float:
    """Max |L(T_g x) - T_g L(x)| over ``trials`` random instances and every stabilizer ``g``."""
    group = GroupSpec.parse(group)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for _ in range(trials):
            fn, x, kin, kout = _layer_case(name, group, rng)
            base = fn(Tensor(x)).data
            for g in enumerate_group(group):
                moved = fn(Tensor(_transform(kin, g, x, group))).data
                worst = max(worst, float(np.abs(moved - _transform(kout, g, base, group)).max()))
    return worst


def equivariance_report(group: GroupSpec, trials: int = 50, seed: int = 0) -> dict[str, float]:
    return {name: layer_equivariance(name, group, trials, seed) for name in LAYERS}


def trivial_group_deviation(name: str, trials: int = 20, seed: int = 0) -> float:
    """Max difference between a G-layer under P1 and its planar counterpart."""
    rng = np.random.default_rng(seed)
    P1 = GroupSpec.P1
    worst = 0.0
    with no_grad():
        for _ in range(trials):
            B, C, K, k, H = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.choice([1, 3, 5])), 8
            x = rng.standard_normal((B, C, H, H))
            xg = Tensor(x[:, :, None])
            if name == "gconv_z2_to_g":
                w = Tensor(rng.standard_normal((K, C, k, k)))
                got = gconv_z2_to_g(Tensor(x), w, P1, padding=k // 2).data[:, :, 0]
                want = F.conv2d(Tensor(x), w, padding=k // 2).data
            elif name == "gconv_g_to_g":
                w = rng.standard_normal((K, C, 1, k, k))
                got = gconv_g_to_g(xg, Tensor(w), P1, padding=k // 2).data[:, :, 0]
                want = F.conv2d(Tensor(x), Tensor(w[:, :, 0]), padding=k // 2).data
            elif name == "g_upsample":
                got = g_upsample(xg, 2).data[:, :, 0]
                want = F.upsample_nearest(Tensor(x), 2).data
            elif name == "g_projection":
                got, want = g_projection(xg).data, x
            elif name == "g_max_pool":
                got = g_max_pool(xg, 2).data[:, :, 0]
                want = F.max_pool2d(Tensor(x), 2).data
            elif name == "g_batch_norm":
                gamma, beta = Tensor(rng.uniform(0.5, 1.5, C)), Tensor(rng.standard_normal(C))
                got = g_batch_norm(xg, gamma, beta, np.zeros(C), np.ones(C), training=True).data[:, :, 0]
                want = F.batch_norm(Tensor(x), gamma, beta, np.zeros(C), np.ones(C), training=True).data
            else:
                raise ValueError(f"unknown layer {name!r}")
            worst = max(worst, float(np.abs(got - want).max()))
    return worst


def network_equivariance(network: SegNet, n_inputs: int = 100, size: int = 64, seed: int = 0,
                         batch_size: int = 10) -> float:
    """Max abs deviation of all three logit maps under every stabilizer transform.

    Inputs are processed in batches; in training mode batch statistics are
    shared by a batch, which is transformed as a whole.
    """
    rng = np.random.default_rng(seed)
    # transform by the nominal group even for the plain twin, whose layers use P1
    group = network.config.group
    worst = 0.0
    with no_grad():
        for start in range(0, n_inputs, batch_size):
            n = min(batch_size, n_inputs - start)
            x = rng.standard_normal((n, 3, size, size)).astype(network.dtype)
            base = network.forward(x)
            for g in enumerate_group(group)[1:]:
                moved = network.forward(transform_feature_z2(g, x))
                for a, b in zip(moved.heads, base.heads):
                    worst = max(worst, float(np.abs(a.data - transform_feature_z2(g, b.data)).max()))
    return worst


def randomize_buffers(network: SegNet, seed: int = 0) -> SegNet:
    """Give normalization buffers and zero-initialized parameters non-trivial values."""
    rng = np.random.default_rng(seed)
    for name, buf in network.buffers.items():
        if name.endswith("running_var"):
            buf[...] = rng.uniform(0.5, 2.0, buf.shape)
        else:
            buf[...] = rng.normal(0.0, 0.5, buf.shape)
    for name, p in network.params.items():
        if name.endswith((".beta", ".bias")):
            p.data[...] = rng.normal(0.0, 0.5, p.shape)
        elif name.endswith(".gamma"):
            p.data[...] = rng.uniform(0.5, 1.5, p.shape)
    return network
