"""Deeply supervised, U-Net connected, rotation-equivariant segmentation FCN.

The encoder is a small residual network (stem plus ``num_stages`` stages of
residual blocks, halving resolution between stages).  The decoder climbs
back with G-upsampling, concatenating the matching encoder stage at each
step.  The last three decoder stages each feed a head: G-projection, a 1x1
convolution to one logit channel, and nearest upsampling to full size.

With ``equivariant=False`` the same graph is built over the trivial group,
with every width multiplied by ``sqrt(|S|)`` so the parameter budgets match.
"""

from __future__ import annotations

import dataclasses
import math
from collections import OrderedDict
from typing import NamedTuple

import numpy as np

from . import functional as F
from .group import GroupSpec
from .layers import g_batch_norm, g_max_pool, g_projection, g_upsample, gconv_g_to_g, gconv_z2_to_g
from .tensor import (Tensor, add_channel_bias, concat, make_result, no_grad, relu, stable_sigmoid,
                     weighted_sum)

DOWNSAMPLE_MODES = ("pool", "strided_conv")


@dataclasses.dataclass(frozen=True)
class SegNetConfig:
    group: GroupSpec = GroupSpec.P4M
    base_width: int = 8
    num_stages: int = 4
    blocks_per_stage: int = 2
    downsample: str = "pool"
    ds_weights: tuple[float, float, float] = (0.7, 0.2, 0.1)
    equivariant: bool = True
    kernel_size: int = 3
    fuse_heads: bool = True

    def __post_init__(self):
        object.__setattr__(self, "group", GroupSpec.parse(self.group))
        object.__setattr__(self, "ds_weights", tuple(float(w) for w in self.ds_weights))
        if len(self.ds_weights) != 3:
            raise ValueError(f"ds_weights needs three values, got {len(self.ds_weights)}")
        if any(w < 0 for w in self.ds_weights) or abs(sum(self.ds_weights) - 1.0) > 1e-9:
            raise ValueError(f"ds_weights must be non-negative and sum to 1, got {self.ds_weights}")
        if self.base_width < 1:
            raise ValueError("base_width must be positive")
        if self.num_stages < 4:
            raise ValueError("num_stages must be at least 4 (three supervised decoder stages)")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be positive")
        if self.downsample not in DOWNSAMPLE_MODES:
            raise ValueError(f"downsample must be one of {DOWNSAMPLE_MODES}, got {self.downsample!r}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd")

    @property
    def layer_group(self) -> GroupSpec:
        return self.group if self.equivariant else GroupSpec.P1

    def stage_widths(self) -> list[int]:
        """Channels per encoder stage; the plain net scales by ``sqrt(|S|)``."""
        widths = [self.base_width * 2 ** i for i in range(self.num_stages)]
        if self.equivariant:
            return widths
        factor = math.sqrt(self.group.order)
        return [int(math.floor(w * factor + 0.5)) for w in widths]

    def plain_twin(self) -> SegNetConfig:
        return dataclasses.replace(self, equivariant=False)

    def min_divisor(self) -> int:
        return 2 ** (self.num_stages - 1)


class SegOutput(NamedTuple):
    main_logits: Tensor
    aux_logits: tuple[Tensor, Tensor]

    @property
    def heads(self) -> tuple[Tensor, Tensor, Tensor]:
        return (self.main_logits,) + tuple(self.aux_logits)


def subsample(x: Tensor, stride: int) -> Tensor:
    """Keep every ``stride``-th pixel of the last two axes, starting at 0."""
    out = np.ascontiguousarray(x.data[..., ::stride, ::stride])

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., ::stride, ::stride] = g
        return (full,)

    return make_result(out, (x,), backward, "subsample")


class SegNet:
    """Parameters, normalization buffers and the forward graph of one network."""

    def __init__(self, config: SegNetConfig, params, buffers):
        self.config = config
        self.params: OrderedDict[str, Tensor] = params
        self.buffers: OrderedDict[str, np.ndarray] = buffers
        self.training = True

    # bookkeeping ------------------------------------------------------
    @property
    def group(self) -> GroupSpec:
        return self.config.layer_group

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def named_arrays(self):
        """Every stored array (parameters first, then buffers) in a fixed order."""
        for name, p in self.params.items():
            yield name, p.data
        for name, b in self.buffers.items():
            yield name, b

    def astype(self, dtype) -> SegNet:
        params = OrderedDict((n, Tensor(p.data.astype(dtype), requires_grad=True))
                             for n, p in self.params.items())
        buffers = OrderedDict((n, b.astype(dtype)) for n, b in self.buffers.items())
        net = SegNet(self.config, params, buffers)
        net.training = self.training
        return net

    def copy(self) -> SegNet:
        return self.astype(self.dtype)

    # layer helpers ----------------------------------------------------
    def _bn(self, name: str, x: Tensor) -> Tensor:
        return g_batch_norm(x, self.params[name + ".gamma"], self.params[name + ".beta"],
                            self.buffers[name + ".running_mean"], self.buffers[name + ".running_var"],
                            training=self.training)

    def _gconv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        w = self.params[name + ".weight"]
        k = w.shape[-1]
        out = gconv_g_to_g(x, w, self.group, stride=1, padding=(k - 1) // 2)
        if stride > 1:
            out = subsample(out, stride)
        return out

    def _block(self, name: str, x: Tensor, stride: int) -> Tensor:
        h = relu(self._bn(name + ".bn1", self._gconv(name + ".conv1", x, stride)))
        h = self._bn(name + ".bn2", self._gconv(name + ".conv2", h))
        if name + ".proj.weight" in self.params:
            skip = self._bn(name + ".proj_bn", self._gconv(name + ".proj", x, stride))
        else:
            skip = x
        return relu(h + skip)

    def _head(self, name: str, x: Tensor, factor: int) -> Tensor:
        z = g_projection(x)
        logits = F.conv2d(z, self.params[name + ".weight"])
        logits = add_channel_bias(logits, self.params[name + ".bias"])
        return F.upsample_nearest(logits, factor)

    # forward ----------------------------------------------------------
    def check_input(self, image: Tensor) -> None:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected image batch [B, 3, H, W], got {image.shape}")
        H, W = image.shape[-2:]
        d = self.config.min_divisor()
        if H != W:
            raise ValueError(f"input must be square, got {H}x{W}")
        if H % d:
            raise ValueError(f"input size {H} not divisible by {d}")

    def forward(self, image) -> SegOutput:
        if not isinstance(image, Tensor):
            image = Tensor(np.asarray(image, dtype=self.dtype))
        elif image.dtype != self.dtype and not image.requires_grad:
            image = Tensor(image.data.astype(self.dtype))
        self.check_input(image)
        cfg = self.config
        k = cfg.kernel_size

        h = gconv_z2_to_g(image, self.params["stem.weight"], self.group, padding=(k - 1) // 2)
        h = relu(self._bn("stem.bn", h))

        skips = []
        for s in range(cfg.num_stages):
            stride = 1
            if s > 0:
                if cfg.downsample == "pool":
                    h = g_max_pool(h, 2)
                else:
                    stride = 2
            for b in range(cfg.blocks_per_stage):
                h = self._block(f"enc{s}.block{b}", h, stride if b == 0 else 1)
            skips.append(h)

        heads = {}
        d = skips[-1]
        for s in reversed(range(cfg.num_stages - 1)):
            d = concat([g_upsample(d, 2), skips[s]], axis=1)
            d = relu(self._bn(f"dec{s}.bn", self._gconv(f"dec{s}.conv", d)))
            if s < 3:
                heads[s] = self._head(f"head{s}", d, 2 ** s)
        return SegOutput(heads[0], (heads[1], heads[2]))

    __call__ = forward


def _he(rng, shape, fan_in, dtype):
    return Tensor((rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True)


def build(config: SegNetConfig, seed: int = 0, dtype=np.float64) -> SegNet:
    """Instantiate a network with He-initialized weights drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    S = config.layer_group.order
    k = config.kernel_size
    widths = config.stage_widths()
    params: OrderedDict[str, Tensor] = OrderedDict()
    buffers: OrderedDict[str, np.ndarray] = OrderedDict()

    def bn(name, c):
        params[name + ".gamma"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        params[name + ".beta"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        buffers[name + ".running_mean"] = np.zeros(c, dtype=dtype)
        buffers[name + ".running_var"] = np.ones(c, dtype=dtype)

    def gconv(name, cout, cin, ksize):
        params[name + ".weight"] = _he(rng, (cout, cin, S, ksize, ksize), cin * S * ksize * ksize, dtype)

    params["stem.weight"] = _he(rng, (widths[0], 3, k, k), 3 * k * k, dtype)
    bn("stem.bn", widths[0])
    cin = widths[0]
    for s, w in enumerate(widths):
        for b in range(config.blocks_per_stage):
            name = f"enc{s}.block{b}"
            gconv(name + ".conv1", w, cin, k)
            bn(name + ".bn1", w)
            gconv(name + ".conv2", w, w, k)
            bn(name + ".bn2", w)
            strided = s > 0 and b == 0 and config.downsample == "strided_conv"
            if cin != w or strided:
                gconv(name + ".proj", w, cin, 1)
                bn(name + ".proj_bn", w)
            cin = w
    for s in reversed(range(config.num_stages - 1)):
        # input is the upsampled deeper stage concatenated with the encoder skip
        gconv(f"dec{s}.conv", widths[s], widths[s + 1] + widths[s], k)
        bn(f"dec{s}.bn", widths[s])
        if s < 3:
            params[f"head{s}.weight"] = _he(rng, (1, widths[s], 1, 1), widths[s], dtype)
            params[f"head{s}.bias"] = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
    return SegNet(config, params, buffers)


def expected_tensor_names(config: SegNetConfig) -> list[str]:
    net = build(config, seed=0, dtype=np.float32)
    return [name for name, _ in net.named_arrays()]


def count_params(network: SegNet) -> int:
    return int(sum(p.size for p in network.params.values()))


def loss(out: SegOutput, target, ds_weights=(0.7, 0.2, 0.1)) -> Tensor:
    """Deep-supervision objective: ds_weights-weighted BCE of the three heads."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    terms = [F.bce_loss(h, t) for h in out.heads]
    return weighted_sum(terms, ds_weights)


def fused_probability(network: SegNet, image) -> np.ndarray:
    with no_grad():
        out = network.forward(image)
    p0, p1, p2 = (stable_sigmoid(h.data) for h in out.heads)
    if not network.config.fuse_heads:
        return p0
    # w0*p0 + w1*p1 + w2*p2 written relative to p0 (weights sum to 1), so that
    # three equal maps fuse to exactly that map and a 0.5 tie survives rounding
    _, w1, w2 = network.config.ds_weights
    return p0 + w1 * (p1 - p0) + w2 * (p2 - p0)


def predict(network: SegNet, image) -> np.ndarray:
    """Binary mask ``[B, 1, H, W]``; a fused probability of exactly 0.5 counts as foreground."""
    return (fused_probability(network, image) >= 0.5).astype(np.uint8)
