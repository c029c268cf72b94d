"""Numba-jitted implementations of the hot kernels.

Loop-level twins of :mod:`wurstkit._kernels_numpy`. Import of this module
compiles nothing by itself; functions compile lazily on first call and the
results are cached on disk.
"""

import numpy as np
from numba import njit

from ._kernels_numpy import conv_out_size


@njit(cache=True)
def im2col(x, kh, kw, stride, pad):
    b, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((b, oh * ow, c * kh * kw), dtype=x.dtype)
    for n in range(b):
        for oy in range(oh):
            for ox in range(ow):
                p = oy * ow + ox
                for ch in range(c):
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            out[n, p, (ch * kh + i) * kw + j] = x[n, ch, iy, ix]
    return out


@njit(cache=True)
def col2im(cols, c, h, w, kh, kw, stride, pad):
    b = cols.shape[0]
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((b, c, h, w), dtype=cols.dtype)
    for n in range(b):
        for oy in range(oh):
            for ox in range(ow):
                p = oy * ow + ox
                for ch in range(c):
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            out[n, ch, iy, ix] += cols[n, p, (ch * kh + i) * kw + j]
    return out


@njit(cache=True)
def depthwise_fwd(x, w, pad):
    b, c, h, wd = x.shape
    kh, kw = w.shape[1], w.shape[2]
    oh = h + 2 * pad - kh + 1
    ow = wd + 2 * pad - kw + 1
    y = np.zeros((b, c, oh, ow), dtype=x.dtype)
    for n in range(b):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for i in range(kh):
                        iy = oy + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox + j - pad
                            if ix < 0 or ix >= wd:
                                continue
                            acc += x[n, ch, iy, ix] * w[ch, i, j]
                    y[n, ch, oy, ox] = acc
    return y


@njit(cache=True)
def depthwise_bwd_x(gy, w, h, wd, pad):
    b, c, oh, ow = gy.shape
    kh, kw = w.shape[1], w.shape[2]
    gx = np.zeros((b, c, h, wd), dtype=gy.dtype)
    for n in range(b):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    g = gy[n, ch, oy, ox]
                    for i in range(kh):
                        iy = oy + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox + j - pad
                            if ix < 0 or ix >= wd:
                                continue
                            gx[n, ch, iy, ix] += g * w[ch, i, j]
    return gx


@njit(cache=True)
def depthwise_bwd_w(x, gy, kh, kw, pad):
    b, c, oh, ow = gy.shape
    h, wd = x.shape[2], x.shape[3]
    gw = np.zeros((c, kh, kw), dtype=gy.dtype)
    for n in range(b):
        for ch in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    g = gy[n, ch, oy, ox]
                    for i in range(kh):
                        iy = oy + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kw):
                            ix = ox + j - pad
                            if ix < 0 or ix >= wd:
                                continue
                            gw[ch, i, j] += g * x[n, ch, iy, ix]
    return gw


@njit(cache=True)
def nearest_code(v, codebook):
    n, z = v.shape
    k = codebook.shape[0]
    idx = np.zeros(n, dtype=np.int64)
    for row in range(n):
        best = np.inf
        best_i = 0
        for ki in range(k):
            d = 0.0
            for zi in range(z):
                diff = v[row, zi] - codebook[ki, zi]
                d += diff * diff
            if d < best:
                best = d
                best_i = ki
        idx[row] = best_i
    return idx
