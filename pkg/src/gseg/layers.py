"""Group-equivariant layers on p4 / p4m feature maps.

A G feature map is laid out ``[batch, channel, group, height, width]``; the
group axis is indexed by :func:`gseg.group.enumerate_group`.  Every layer
here commutes with the group action: transforming the input by a stabilizer
element ``g`` transforms the output by ``g`` as well.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import functional as F
from .group import (GroupSpec, StabilizerElement, compose, enumerate_group, index_of, inverse,
                    kernel_permutation)
from .tensor import Tensor, add_channel_bias, mean, reshape, take

__all__ = [
    "transform_feature_z2", "transform_feature_g", "group_permutation",
    "expand_filter_z2", "expand_filter_g", "gconv_z2_to_g", "gconv_g_to_g",
    "g_upsample", "g_projection", "g_max_pool", "g_batch_norm",
]


def _spatial(g: StabilizerElement, arr: np.ndarray) -> np.ndarray:
    out = np.rot90(arr, g.quarter_turns, axes=(-2, -1))
    if g.mirror:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def _unwrap(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _rewrap(like, arr):
    return Tensor(arr) if isinstance(like, Tensor) else arr


def transform_feature_z2(g: StabilizerElement, x):
    """``(T_g x)(p) = x(g^-1 p)`` about the centre of the (square) last two axes."""
    arr = _unwrap(x)
    if arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"transform needs square spatial dims, got {arr.shape[-2:]}")
    return _rewrap(x, _spatial(g, arr))


def group_permutation(group: GroupSpec, g: StabilizerElement) -> np.ndarray:
    """``perm[h]`` = index of ``g^-1 h``: the source slot feeding slot ``h``."""
    elems = enumerate_group(group)
    g_inv = inverse(g)
    return np.array([index_of(group, compose(g_inv, h)) for h in elems])


def transform_feature_g(g: StabilizerElement, x, group: GroupSpec | None = None):
    """Regular-representation action on a ``[B, K, |S|, H, W]`` map."""
    arr = _unwrap(x)
    if arr.ndim != 5:
        raise ValueError(f"expected [B, K, |S|, H, W], got shape {arr.shape}")
    if group is None:
        group = GroupSpec(arr.shape[2])
    if arr.shape[2] != group.order:
        raise ValueError(f"group axis has {arr.shape[2]} slots, {group.name} has order {group.order}")
    index_of(group, g)
    if arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"transform needs square spatial dims, got {arr.shape[-2:]}")
    return _rewrap(x, _spatial(g, arr[:, :, group_permutation(group, g)]))


@lru_cache(maxsize=64)
def _z2_index(K: int, C: int, k: int, group: GroupSpec) -> np.ndarray:
    kk = k * k
    perms = np.stack([kernel_permutation(g, k) for g in enumerate_group(group)])  # [S, kk]
    idx = (np.arange(K)[:, None, None, None] * (C * kk)
           + np.arange(C)[None, None, :, None] * kk
           + perms[None, :, None, :])
    idx = idx.reshape(K, group.order, C, k, k)
    idx.flags.writeable = False
    return idx


def expand_filter_z2(w: Tensor, group: GroupSpec) -> Tensor:
    """``[K, C, k, k] -> [K, |S|, C, k, k]``; slice ``g`` is the kernel transformed by ``g``."""
    K, C, k, _ = w.shape
    return take(w, _z2_index(K, C, k, GroupSpec.parse(group)))


@lru_cache(maxsize=64)
def _g_index(K: int, C: int, k: int, group: GroupSpec) -> np.ndarray:
    S, kk = group.order, k * k
    elems = enumerate_group(group)
    idx = np.empty((K, S, C, S, kk), dtype=np.int64)
    base = (np.arange(K)[:, None, None] * (C * S * kk)
            + np.arange(C)[None, :, None] * (S * kk))  # [K, C, 1]
    for gi, g in enumerate(elems):
        perm = kernel_permutation(g, k)
        src_h = group_permutation(group, g)
        for hi in range(S):
            idx[:, gi, :, hi, :] = base + src_h[hi] * kk + perm[None, None, :]
    idx = idx.reshape(K, S, C, S, k, k)
    idx.flags.writeable = False
    return idx


def expand_filter_g(w: Tensor, group: GroupSpec) -> Tensor:
    """``[K, C, |S|, k, k] -> [K, |S|, C, |S|, k, k]``.

    Output slot ``g``, input slot ``h`` holds ``w[:, :, g^-1 h]`` spatially
    transformed by ``g``.
    """
    group = GroupSpec.parse(group)
    K, C, S, k, _ = w.shape
    if S != group.order:
        raise ValueError(f"filter group axis {S} does not match {group.name}")
    return take(w, _g_index(K, C, k, group))


def gconv_z2_to_g(x: Tensor, w: Tensor, group: GroupSpec, stride: int = 1, padding: int = 0,
                  bias: Tensor | None = None) -> Tensor:
    """Lift a planar ``[B, C, H, W]`` input to a G feature map ``[B, K, |S|, H', W']``."""
    group = GroupSpec.parse(group)
    K, C, k, _ = w.shape
    wexp = reshape(expand_filter_z2(w, group), (K * group.order, C, k, k))
    out = F.conv2d(x, wexp, stride=stride, padding=padding)
    B, _, Ho, Wo = out.shape
    out = reshape(out, (B, K, group.order, Ho, Wo))
    return out if bias is None else add_channel_bias(out, bias)


def gconv_g_to_g(x: Tensor, w: Tensor, group: GroupSpec, stride: int = 1, padding: int = 0,
                 bias: Tensor | None = None) -> Tensor:
    group = GroupSpec.parse(group)
    B, C, S, H, W = x.shape
    K, Cw, Sw, k, _ = w.shape
    if S != group.order or Sw != group.order:
        raise ValueError(f"group mismatch: input has {S} slots, filter {Sw}, {group.name} has {group.order}")
    if Cw != C:
        raise ValueError(f"filter expects {Cw} channels, input has {C}")
    wexp = reshape(expand_filter_g(w, group), (K * S, C * S, k, k))
    out = F.conv2d(reshape(x, (B, C * S, H, W)), wexp, stride=stride, padding=padding)
    _, _, Ho, Wo = out.shape
    out = reshape(out, (B, K, S, Ho, Wo))
    return out if bias is None else add_channel_bias(out, bias)


def g_upsample(x: Tensor, factor: int = 2) -> Tensor:
    return F.upsample_nearest(x, factor)


def g_projection(x: Tensor) -> Tensor:
    """Average over the group axis: ``[B, K, |S|, H, W] -> [B, K, H, W]``."""
    return mean(x, axis=2)


def g_max_pool(x: Tensor, window: int = 2) -> Tensor:
    return F.max_pool2d(x, window)


def g_batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Batch norm whose statistics pool batch, group and space per channel."""
    return F.batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps)
