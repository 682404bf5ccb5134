# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for convolution lowering, pooling and bilinear resampling.

Every function here has a numpy twin in ``_pykernels`` with the same signature
and the same output layout. Both are single-threaded so results are
reproducible run to run.
"""
import numpy as np

from cython cimport floating


cdef inline object _dtype_of(floating dummy):
    if floating is float:
        return np.float32
    return np.float64


def im2col(floating[:, :, :, ::1] x, int k, int stride, int pad, int ho, int wo):
    """Lower (B, C, H, W) into (B, C*k*k, ho*wo) patch columns."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef floating zero = 0
    out = np.zeros((B, C * k * k, ho * wo), dtype=_dtype_of(zero))
    cdef floating[:, :, ::1] o = out
    cdef Py_ssize_t b, c, ki, kj, i, j, row, hi, wj, base
    with nogil:
        for b in range(B):
            for c in range(C):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        for i in range(ho):
                            hi = i * stride - pad + ki
                            if hi < 0 or hi >= H:
                                continue
                            base = i * wo
                            for j in range(wo):
                                wj = j * stride - pad + kj
                                if wj >= 0 and wj < W:
                                    o[b, row, base + j] = x[b, c, hi, wj]
    return out


def col2im(floating[:, :, ::1] cols, int C, int H, int W, int k, int stride, int pad,
           int ho, int wo):
    """Scatter-add patch columns back onto a (B, C, H, W) image."""
    cdef Py_ssize_t B = cols.shape[0]
    cdef floating zero = 0
    out = np.zeros((B, C, H, W), dtype=_dtype_of(zero))
    cdef floating[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, ki, kj, i, j, row, hi, wj, base
    with nogil:
        for b in range(B):
            for c in range(C):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        for i in range(ho):
                            hi = i * stride - pad + ki
                            if hi < 0 or hi >= H:
                                continue
                            base = i * wo
                            for j in range(wo):
                                wj = j * stride - pad + kj
                                if wj >= 0 and wj < W:
                                    o[b, c, hi, wj] += cols[b, row, base + j]
    return out


def max_pool_forward(floating[:, :, :, ::1] x, int k, int stride, int pad, int ho, int wo):
    """Returns (out, argmax) where argmax holds the flat h*W+w index of the winner."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef floating zero = 0
    out = np.empty((B, C, ho, wo), dtype=_dtype_of(zero))
    idx = np.empty((B, C, ho, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] o = out
    cdef long long[:, :, :, ::1] ix = idx
    cdef Py_ssize_t b, c, i, j, ki, kj, hi, wj, best_i
    cdef floating best, v
    cdef bint found
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    for j in range(wo):
                        found = False
                        best = 0
                        best_i = 0
                        for ki in range(k):
                            hi = i * stride - pad + ki
                            if hi < 0 or hi >= H:
                                continue
                            for kj in range(k):
                                wj = j * stride - pad + kj
                                if wj < 0 or wj >= W:
                                    continue
                                v = x[b, c, hi, wj]
                                if not found or v > best:
                                    best = v
                                    best_i = hi * W + wj
                                    found = True
                        o[b, c, i, j] = best
                        ix[b, c, i, j] = best_i
    return out, idx


def max_pool_backward(floating[:, :, :, ::1] gout, long long[:, :, :, ::1] idx, int H, int W):
    cdef Py_ssize_t B = gout.shape[0], C = gout.shape[1], ho = gout.shape[2], wo = gout.shape[3]
    cdef floating zero = 0
    gin = np.zeros((B, C, H * W), dtype=_dtype_of(zero))
    cdef floating[:, :, ::1] g = gin
    cdef Py_ssize_t b, c, i, j
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    for j in range(wo):
                        g[b, c, idx[b, c, i, j]] += gout[b, c, i, j]
    return gin.reshape(B, C, H, W)


def avg_pool_forward(floating[:, :, :, ::1] x, int k, int stride, int pad, int ho, int wo):
    """Average over in-bounds cells only; padded cells do not count."""
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef floating zero = 0
    out = np.empty((B, C, ho, wo), dtype=_dtype_of(zero))
    cdef floating[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, i, j, ki, kj, hi, wj, n
    cdef floating s
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    for j in range(wo):
                        s = 0
                        n = 0
                        for ki in range(k):
                            hi = i * stride - pad + ki
                            if hi < 0 or hi >= H:
                                continue
                            for kj in range(k):
                                wj = j * stride - pad + kj
                                if wj < 0 or wj >= W:
                                    continue
                                s = s + x[b, c, hi, wj]
                                n = n + 1
                        o[b, c, i, j] = s / n
    return out


def avg_pool_backward(floating[:, :, :, ::1] gout, int H, int W, int k, int stride, int pad):
    cdef Py_ssize_t B = gout.shape[0], C = gout.shape[1], ho = gout.shape[2], wo = gout.shape[3]
    cdef floating zero = 0
    gin = np.zeros((B, C, H, W), dtype=_dtype_of(zero))
    cdef floating[:, :, :, ::1] g = gin
    cdef Py_ssize_t b, c, i, j, ki, kj, hi, wj, h0, h1, w0, w1
    cdef floating share
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    h0 = i * stride - pad
                    h1 = h0 + k
                    if h0 < 0:
                        h0 = 0
                    if h1 > H:
                        h1 = H
                    for j in range(wo):
                        w0 = j * stride - pad
                        w1 = w0 + k
                        if w0 < 0:
                            w0 = 0
                        if w1 > W:
                            w1 = W
                        share = gout[b, c, i, j] / ((h1 - h0) * (w1 - w0))
                        for hi in range(h0, h1):
                            for wj in range(w0, w1):
                                g[b, c, hi, wj] += share
    return gin


def bilinear_forward(floating[:, :, :, ::1] x,
                     long long[::1] y0, long long[::1] y1, floating[::1] wy,
                     long long[::1] x0, long long[::1] x1, floating[::1] wx):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t ho = y0.shape[0], wo = x0.shape[0]
    cdef floating zero = 0
    out = np.empty((B, C, ho, wo), dtype=_dtype_of(zero))
    cdef floating[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, i, j
    cdef floating top, bot, ay, ax
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    ay = wy[i]
                    for j in range(wo):
                        ax = wx[j]
                        top = (1 - ax) * x[b, c, y0[i], x0[j]] + ax * x[b, c, y0[i], x1[j]]
                        bot = (1 - ax) * x[b, c, y1[i], x0[j]] + ax * x[b, c, y1[i], x1[j]]
                        o[b, c, i, j] = (1 - ay) * top + ay * bot
    return out


def bilinear_backward(floating[:, :, :, ::1] gout, int H, int W,
                      long long[::1] y0, long long[::1] y1, floating[::1] wy,
                      long long[::1] x0, long long[::1] x1, floating[::1] wx):
    cdef Py_ssize_t B = gout.shape[0], C = gout.shape[1]
    cdef Py_ssize_t ho = y0.shape[0], wo = x0.shape[0]
    cdef floating zero = 0
    gin = np.zeros((B, C, H, W), dtype=_dtype_of(zero))
    cdef floating[:, :, :, ::1] g = gin
    cdef Py_ssize_t b, c, i, j
    cdef floating v, ay, ax
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(ho):
                    ay = wy[i]
                    for j in range(wo):
                        ax = wx[j]
                        v = gout[b, c, i, j]
                        g[b, c, y0[i], x0[j]] += (1 - ay) * (1 - ax) * v
                        g[b, c, y0[i], x1[j]] += (1 - ay) * ax * v
                        g[b, c, y1[i], x0[j]] += ay * (1 - ax) * v
                        g[b, c, y1[i], x1[j]] += ay * ax * v
    return gin
