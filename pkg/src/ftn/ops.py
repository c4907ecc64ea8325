"""Convolution, normalization, pooling and rearrangement ops on NCHW tensors."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _node, add, matmul, transpose


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """B x C x Hp x Wp -> B x (C*kh*kw) x (ho*wo), column order (c, i, j) matching w.reshape(O, -1)."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, kh * kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i * kw + j] = xp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                                        j : j + stride * (wo - 1) + 1 : stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(dcols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c, hp, wp = shape
    d = dcols.reshape(b, c, kh * kw, ho, wo)
    out = np.zeros(shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += d[:, :, i * kw + j]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input, OIHW weights.

    Implemented as im2col + a batched GEMM; 1x1 stride-1 convs skip im2col.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    bsz, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {ci}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d bias shape {b.shape} != ({o},)")
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride {stride} / pad {pad}")
    hp, wp = h + 2 * pad, wd + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xd, wd_ = x.data, w.data
    w2 = wd_.reshape(o, -1)
    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        cols = xd.reshape(bsz, c, h * wd)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data.reshape(1, o, 1)
    out = out.reshape(bsz, o, ho, wo)

    def backward(g):
        gx = gw = gb = None
        g3 = g.reshape(bsz, o, ho * wo)
        if b is not None and b.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if w.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd_.shape)
        if x.requires_grad:
            dcols = np.matmul(w2.T, g3)
            if kh == 1 and kw == 1 and stride == 1 and pad == 0:
                gx = dcols.reshape(xd.shape)
            else:
                gxp = _col2im(dcols, (bsz, c, hp, wp), kh, kw, stride, ho, wo)
                gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward, "conv2d")


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalization of an NCHW tensor.

    In training mode the running buffers are updated in place
    (unbiased variance, as in the common frameworks).
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW input, got {x.shape}")
    bsz, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"affine params must have shape ({c},)")
    xd = x.data
    axes = (0, 2, 3)
    if training:
        m = bsz * h * w
        if m < 2:
            raise ValueError("batch_norm2d in training mode needs at least 2 values per channel")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(1, c, 1, 1)
            if training:
                gx = (inv.reshape(1, c, 1, 1)) * (
                    gxhat
                    - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
                )
            else:
                gx = gxhat * inv.reshape(1, c, 1, 1)
        return gx, gg, gbeta

    return _node(out, (x, gamma, beta), backward, "batch_norm2d")


def channel_max_pool(x: Tensor, n: int) -> Tensor:
    """Max over consecutive groups of ``n`` channels; ties route to the first index."""
    bsz, c, h, w = x.shape
    if n < 1 or c % n:
        raise ShapeError(f"channel count {c} not divisible by pool factor {n}")
    grouped = x.data.reshape(bsz, c // n, n, h, w)
    idx = grouped.argmax(axis=2)
    out = np.take_along_axis(grouped, idx[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros_like(grouped)
        np.put_along_axis(gx, idx[:, :, None], g[:, :, None], axis=2)
        return (gx.reshape(bsz, c, h, w),)

    return _node(out, (x,), backward, "channel_max_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    bsz, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).copy(),)

    return _node(out, (x,), backward, "global_avg_pool")


def global_max_pool(x: Tensor) -> Tensor:
    """Spatial max per channel; ties route to the first (row-major) position."""
    bsz, c, h, w = x.shape
    flat = x.data.reshape(bsz, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[:, :, None], g[:, :, None], axis=2)
        return (gx.reshape(x.shape),)

    return _node(out, (x,), backward, "global_max_pool")


def _depth_to_space(a: np.ndarray, r: int) -> np.ndarray:
    bsz, crr, h, w = a.shape
    c = crr // (r * r)
    return a.reshape(bsz, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(bsz, c, h * r, w * r)


def _space_to_depth(a: np.ndarray, r: int) -> np.ndarray:
    bsz, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return a.reshape(bsz, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(bsz, c * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: out[b, c, h*r + i, w*r + j] = x[b, c*r*r + i*r + j, h, w]."""
    if x.ndim != 4 or r < 1 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: channels of {x.shape} not divisible by r^2={r * r}")
    return _node(_depth_to_space(x.data, r), (x,), lambda g: (_space_to_depth(g, r),), "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    if x.ndim != 4 or r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims of {x.shape} not divisible by {r}")
    return _node(_space_to_depth(x.data, r), (x,), lambda g: (_depth_to_space(g, r),), "pixel_unshuffle")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w.T + b with ``w`` stored as (out, in)."""
    out = matmul(x, transpose(w, (1, 0)))
    return add(out, b) if b is not None else out
