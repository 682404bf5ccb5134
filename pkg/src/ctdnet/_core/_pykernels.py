"""Pure numpy versions of the compiled kernels.

Signatures and output layouts mirror ``_ckernels`` exactly so the two can be
swapped at import time (or at runtime through :func:`ctdnet._core.use_backend`).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp, k, stride, ho, wo):
    # (B, C, ho, wo, k, k) strided view over an already padded array
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def im2col(x, k, stride, pad, ho, wo):
    B, C = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, k, stride, ho, wo)
    # -> (B, C, k, k, ho, wo) so rows are ordered (c, ki, kj)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * k * k, ho * wo)


def col2im(cols, C, H, W, k, stride, pad, ho, wo):
    B = cols.shape[0]
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    c6 = cols.reshape(B, C, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * (ho - 1) + 1 : stride,
                kj : kj + stride * (wo - 1) + 1 : stride] += c6[:, :, ki, kj]
    if pad:
        out = out[:, :, pad : pad + H, pad : pad + W]
    return np.ascontiguousarray(out)


def max_pool_forward(x, k, stride, pad, ho, wo):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
    win = _windows(xp, k, stride, ho, wo).reshape(B, C, ho, wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    ki, kj = np.divmod(arg, k)
    rows = np.arange(ho)[:, None] * stride - pad + ki
    cols = np.arange(wo)[None, :] * stride - pad + kj
    idx = (rows * W + cols).astype(np.int64)
    return np.ascontiguousarray(out), idx


def max_pool_backward(gout, idx, H, W):
    B, C = gout.shape[:2]
    flat = np.zeros((B * C, H * W), dtype=gout.dtype)
    offsets = (np.arange(B * C) * (H * W))[:, None]
    np.add.at(flat.reshape(-1), (idx.reshape(B * C, -1) + offsets).ravel(), gout.reshape(-1))
    return flat.reshape(B, C, H, W)


def _inbounds_count(H, W, k, stride, pad, ho, wo, dtype):
    rows = np.arange(ho) * stride - pad
    cols = np.arange(wo) * stride - pad
    nh = np.minimum(rows + k, H) - np.maximum(rows, 0)
    nw = np.minimum(cols + k, W) - np.maximum(cols, 0)
    return (nh[:, None] * nw[None, :]).astype(dtype)


def avg_pool_forward(x, k, stride, pad, ho, wo):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    s = _windows(xp, k, stride, ho, wo).sum(axis=(-2, -1))
    return np.ascontiguousarray(s / _inbounds_count(H, W, k, stride, pad, ho, wo, x.dtype))


def avg_pool_backward(gout, H, W, k, stride, pad):
    B, C, ho, wo = gout.shape
    share = gout / _inbounds_count(H, W, k, stride, pad, ho, wo, gout.dtype)
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=gout.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * (ho - 1) + 1 : stride,
                kj : kj + stride * (wo - 1) + 1 : stride] += share
    return np.ascontiguousarray(out[:, :, pad : pad + H, pad : pad + W])


def _interp_matrix(n_in, lo, hi, w, dtype):
    m = np.zeros((lo.shape[0], n_in), dtype=dtype)
    r = np.arange(lo.shape[0])
    np.add.at(m, (r, lo), 1 - w)
    np.add.at(m, (r, hi), w)
    return m


def bilinear_forward(x, y0, y1, wy, x0, x1, wx):
    H, W = x.shape[2:]
    ah = _interp_matrix(H, y0, y1, wy, x.dtype)
    aw = _interp_matrix(W, x0, x1, wx, x.dtype)
    return np.ascontiguousarray(np.matmul(np.matmul(ah, x), aw.T))


def bilinear_backward(gout, H, W, y0, y1, wy, x0, x1, wx):
    ah = _interp_matrix(H, y0, y1, wy, gout.dtype)
    aw = _interp_matrix(W, x0, x1, wx, gout.dtype)
    return np.ascontiguousarray(np.matmul(np.matmul(ah.T, gout), aw))
