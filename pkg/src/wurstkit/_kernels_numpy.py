"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path used when JIT compilation is disabled (see
:mod:`wurstkit.backend`). They are vectorized but allocate more than the
jitted versions; both paths compute the same values.
"""

import numpy as np


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (B, C, H, W) into (B, OH*OW, C*kh*kw) patch rows (zero padding)."""
    b, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (b, c, oh, ow, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, oh * ow, c * kh * kw)


def col2im(cols: np.ndarray, c: int, h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch rows back to (B, C, H, W)."""
    b = cols.shape[0]
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    cols6 = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols6[:, :, i, j]
    if pad:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(out)


def depthwise_fwd(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Stride-1 per-channel 2-D correlation; w is (C, kh, kw)."""
    b, c, h, wd = x.shape
    kh, kw = w.shape[1], w.shape[2]
    oh = h + 2 * pad - kh + 1
    ow = wd + 2 * pad - kw + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    y = np.zeros((b, c, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            y += x[:, :, i : i + oh, j : j + ow] * w[None, :, i, j, None, None]
    return y


def depthwise_bwd_x(gy: np.ndarray, w: np.ndarray, h: int, wd: int, pad: int) -> np.ndarray:
    """Gradient of depthwise_fwd w.r.t. its input."""
    b, c, oh, ow = gy.shape
    kh, kw = w.shape[1], w.shape[2]
    gx = np.zeros((b, c, h + 2 * pad, wd + 2 * pad), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + oh, j : j + ow] += gy * w[None, :, i, j, None, None]
    if pad:
        gx = gx[:, :, pad : pad + h, pad : pad + wd]
    return np.ascontiguousarray(gx)


def depthwise_bwd_w(x: np.ndarray, gy: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    """Gradient of depthwise_fwd w.r.t. the (C, kh, kw) weights."""
    b, c, oh, ow = gy.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    gw = np.zeros((c, kh, kw), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gw[:, i, j] = np.einsum("bchw,bchw->c", x[:, :, i : i + oh, j : j + ow], gy)
    return gw


def nearest_code(v: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the nearest codebook row (Euclidean) per input row.

    Exact ties resolve to the lowest index (argmin keeps the first minimum).
    """
    d = (
        (v * v).sum(axis=1)[:, None]
        - 2.0 * (v @ codebook.T)
        + (codebook * codebook).sum(axis=1)[None, :]
    )
    return np.argmin(d, axis=1).astype(np.int64)
