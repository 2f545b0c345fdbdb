"""Differentiable planar layer primitives: convolution, pooling, upsampling,
normalization and the segmentation loss."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride:
        raise ValueError(
            f"non-integral output size: ({size} + 2*{padding} - {k}) / {stride} + 1")
    return span // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    """Padded ``[B, C, H, W]`` -> patch matrix laid out ``[C, k, k, B, Ho, Wo]``."""
    B, C = xp.shape[:2]
    cols = np.empty((C, k, k, B, Ho, Wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    return cols


def _conv_forward(xp: np.ndarray, w: np.ndarray, stride: int, Ho: int, Wo: int):
    K, C, k, _ = w.shape
    B = xp.shape[0]
    cols = _im2col(xp, k, stride, Ho, Wo)
    out = w.reshape(K, C * k * k) @ cols.reshape(C * k * k, B * Ho * Wo)
    return np.ascontiguousarray(out.reshape(K, B, Ho, Wo).transpose(1, 0, 2, 3)), cols


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded cross-correlation of ``x[B,C,H,W]`` with ``w[K,C,k,k]``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    B, C, H, W = x.shape
    K, Cw, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {k}x{k2}")
    if Cw != C:
        raise ValueError(f"weight expects {Cw} input channels, input has {C}")
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out, cols = _conv_forward(xp, w.data, stride, Ho, Wo)
    if not (x.requires_grad or w.requires_grad):
        cols = None

    def backward(g):
        gw = gx = None
        g_kn = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(K, B * Ho * Wo)
        if w.requires_grad:
            gw = (g_kn @ cols.reshape(C * k * k, B * Ho * Wo).T).reshape(w.shape)
        if x.requires_grad:
            if stride == 1:
                # transposed convolution: full correlation with the flipped, channel-swapped kernel
                q = k - 1 - padding
                gp = g
                if q > 0:
                    gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q)))
                elif q < 0:
                    gp = g[:, :, -q:q, -q:q]
                wt = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                gx, _ = _conv_forward(gp, wt, 1, H, W)
            else:
                gcols = (w.data.reshape(K, C * k * k).T @ g_kn).reshape(C, k, k, B, Ho, Wo)
                gxp = np.zeros((C, B) + xp.shape[2:], dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, i, j]
                gxp = gxp.transpose(1, 0, 2, 3)
                gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        return gx, gw

    return make_result(out, (x, w), backward, "conv2d")


def max_pool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling over the last two axes.

    Ties route the gradient to the first maximum in row-major window order.
    """
    *lead, H, W = x.shape
    if H % window or W % window:
        raise ValueError(f"spatial dims {H}x{W} not divisible by pooling window {window}")
    Ho, Wo = H // window, W // window
    blocks = x.data.reshape(*lead, Ho, window, Wo, window)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, Ho, Wo, window * window)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(*lead, Ho, Wo, window, window)
        return (np.moveaxis(gb, -2, -3).reshape(x.shape),)

    return make_result(out, (x,), backward, "max_pool2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Replicate each pixel of the last two axes into a ``factor x factor`` block."""
    if factor == 1:
        return x
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)

    def backward(g):
        *lead, H, W = g.shape
        return (g.reshape(*lead, H // factor, factor, W // factor, factor).sum(axis=(-3, -1)),)

    return make_result(out, (x,), backward, "upsample_nearest")


def bce_loss(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on logits, in log-sum-exp form."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != logits.shape:
        raise ValueError(f"bce_loss: shape mismatch {logits.shape} vs {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_loss: target values must be 0 or 1")
    z = logits.data
    t = t.astype(z.dtype)
    n = z.size
    loss = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def backward(g):
        e = np.exp(-np.abs(z))
        s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * (s - t) / n,)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward, "bce_loss")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel (axis 1) normalization with statistics over every other axis.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running buffers are used.
    """
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = [1] * x.ndim
    bshape[1] = -1
    n = x.size // x.shape[1]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (gxhat - gxhat.mean(axis=axes, keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)) * inv_std.reshape(bshape)
        else:
            gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")
