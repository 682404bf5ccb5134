"""Differentiable feature-map kernels: convolution, normalization, pooling, resampling.

All inputs are (B, C, H, W). Hot loops dispatch to ``ctdnet._core.kernels``,
which is the compiled backend when available and numpy otherwise.
"""
import numpy as np

from .. import _core
from ..errors import ShapeError
from .tensor import Tensor, any_meta, make_meta, make_node


def _require_4d(x, name="input"):
    if len(x.shape) != 4:
        raise ShapeError(f"{name} must be (B, C, H, W), got {x.shape}")


def out_extent(n, k, stride, padding):
    """floor((n + 2p - k) / s) + 1, after checking the window fits."""
    if k < 1 or stride < 1 or padding < 0:
        raise ShapeError(f"bad window: kernel={k} stride={stride} padding={padding}")
    if n + 2 * padding < k:
        raise ShapeError(f"kernel {k} exceeds padded extent {n + 2 * padding}")
    return (n + 2 * padding - k) // stride + 1


# -- convolution -------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1, method="im2col"):
    """2-D cross-correlation.

    ``method`` selects the lowering: ``"im2col"`` (patch matrix + one matmul)
    or ``"direct"`` (accumulate one matmul per kernel offset). Both are
    differentiable in input, weight and bias. Grouped convolution is only
    supported for shape inference on meta tensors.
    """
    _require_4d(x)
    _require_4d(weight, "weight")
    B, C, H, W = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"square kernels only, got {kh}x{kw}")
    if C != c_in_g * groups or c_out % groups:
        raise ShapeError(f"input has {C} channels, weight expects {c_in_g * groups}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    k = kh
    ho, wo = out_extent(H, k, stride, padding), out_extent(W, k, stride, padding)
    parents = (x, weight) if bias is None else (x, weight, bias)
    if any_meta(*parents):
        return make_meta((B, c_out, ho, wo), parents, "conv2d")
    if groups != 1:
        raise NotImplementedError("grouped convolution is shape-inference only")
    if method == "im2col":
        return _conv_im2col(x, weight, bias, stride, padding, ho, wo)
    if method == "direct":
        return _conv_direct(x, weight, bias, stride, padding, ho, wo)
    raise ValueError(f"unknown convolution method {method!r}")


def _conv_im2col(x, weight, bias, stride, padding, ho, wo):
    B, C, H, W = x.shape
    c_out, _, k, _ = weight.shape
    xd = np.ascontiguousarray(x.data)
    wmat = weight.data.reshape(c_out, -1)
    if k == 1 and stride == 1 and padding == 0:
        cols = xd.reshape(B, C, H * W)
    else:
        cols = _core.kernels.im2col(xd, k, stride, padding, ho, wo)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(B, c_out, ho, wo)

    def backward(g):
        g2 = g.reshape(B, c_out, ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            if k == 1 and stride == 1 and padding == 0:
                gx = gcols.reshape(B, C, H, W)
            else:
                gx = _core.kernels.col2im(gcols, C, H, W, k, stride, padding, ho, wo)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv2d")


def _offset_slice(i, stride, n):
    return slice(i, i + stride * (n - 1) + 1, stride)


def _conv_direct(x, weight, bias, stride, padding, ho, wo):
    B, C, H, W = x.shape
    c_out, _, k, _ = weight.shape
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wd = weight.data
    out = np.zeros((B, c_out, ho, wo), dtype=x.data.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, _offset_slice(ki, stride, ho), _offset_slice(kj, stride, wo)]
            out += np.einsum("oc,bchw->bohw", wd[:, :, ki, kj], patch, optimize=True)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.zeros_like(wd)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                rows, cols = _offset_slice(ki, stride, ho), _offset_slice(kj, stride, wo)
                if weight.requires_grad:
                    gw[:, :, ki, kj] = np.einsum("bohw,bchw->oc", g, xp[:, :, rows, cols], optimize=True)
                if x.requires_grad:
                    gxp[:, :, rows, cols] += np.einsum("oc,bohw->bchw", wd[:, :, ki, kj], g, optimize=True)
        if x.requires_grad:
            gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward, "conv2d")


# -- batch normalization -----------------------------------------------------

def batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place with the same biased
    variance used for normalization, so a converged model normalizes
    identically in both modes. In eval mode the running statistics are used.
    """
    _require_4d(x)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch norm has {gamma.shape[0]} channels, input has {C}")
    if any_meta(x, gamma, beta):
        return make_meta(x.shape, (x, gamma, beta), "batch_norm2d")
    xd = x.data
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    invstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu[None, :, None, None]) * invstd[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                m = xd.shape[0] * xd.shape[2] * xd.shape[3]
                s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (invstd[None, :, None, None] / m) * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * invstd[None, :, None, None]
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward, "batch_norm2d")


# -- pooling -----------------------------------------------------------------

def pool2d(x, kind, kernel, stride=None, padding=0):
    """Max or average pooling. Average pooling divides by in-bounds cells only."""
    _require_4d(x)
    stride = kernel if stride is None else stride
    if 2 * padding > kernel:
        raise ShapeError(f"padding {padding} exceeds half of kernel {kernel}")
    B, C, H, W = x.shape
    ho, wo = out_extent(H, kernel, stride, padding), out_extent(W, kernel, stride, padding)
    if kind not in ("avg", "max"):
        raise ValueError(f"pool kind must be 'avg' or 'max', got {kind!r}")
    if x.is_meta:
        return make_meta((B, C, ho, wo), (x,), f"{kind}_pool")
    if kernel == 1 and stride == 1 and padding == 0:
        return make_node(x.data.copy(), (x,), lambda g: (g,), f"{kind}_pool")
    xd = np.ascontiguousarray(x.data)
    kern = _core.kernels
    if kind == "max":
        out, idx = kern.max_pool_forward(xd, kernel, stride, padding, ho, wo)
        backward = lambda g: (kern.max_pool_backward(np.ascontiguousarray(g), idx, H, W),)  # noqa: E731
    else:
        out = kern.avg_pool_forward(xd, kernel, stride, padding, ho, wo)
        backward = lambda g: (  # noqa: E731
            kern.avg_pool_backward(np.ascontiguousarray(g), H, W, kernel, stride, padding),
        )
    return make_node(np.asarray(out), (x,), backward, f"{kind}_pool")


def global_avg_pool(x):
    """(B, C, H, W) -> (B, C, 1, 1) spatial mean."""
    _require_4d(x)
    B, C, H, W = x.shape
    if x.is_meta:
        return make_meta((B, C, 1, 1), (x,), "gap")
    scale = 1.0 / (H * W)
    return make_node(
        x.data.mean(axis=(2, 3), keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g * scale, (B, C, H, W)).astype(g.dtype),),
        "gap",
    )


def channel_pool(x, kind):
    """Reduce over channels only: (B, C, H, W) -> (B, 1, H, W)."""
    _require_4d(x)
    B, C, H, W = x.shape
    if x.is_meta:
        return make_meta((B, 1, H, W), (x,), f"channel_{kind}")
    xd = x.data
    if kind == "avg":
        return make_node(
            xd.mean(axis=1, keepdims=True),
            (x,),
            lambda g: (np.broadcast_to(g / C, xd.shape).astype(g.dtype),),
            "channel_avg",
        )
    if kind == "max":
        arg = xd.argmax(axis=1)[:, None]
        out = np.take_along_axis(xd, arg, axis=1)

        def backward(g):
            gx = np.zeros_like(xd)
            np.put_along_axis(gx, arg, g, axis=1)
            return (gx,)

        return make_node(out, (x,), backward, "channel_max")
    raise ValueError(f"channel pool kind must be 'avg' or 'max', got {kind!r}")


# -- bilinear resampling -----------------------------------------------------

def bilinear_coefficients(n_in, n_out, dtype=np.float64):
    """Half-pixel-centre sampling positions (no corner alignment), clamped to the border.

    Returns (lo, hi, frac): output i reads ``(1-frac)*in[lo] + frac*in[hi]``.
    """
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = (src - lo).astype(dtype)
    return lo, hi, frac


def bilinear_upsample(x, out_h, out_w):
    """Resize (B, C, H, W) to (B, C, out_h, out_w) by bilinear interpolation.

    Works for any target size (up or down); the name follows its main use.
    """
    _require_4d(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be positive, got {out_h}x{out_w}")
    B, C, H, W = x.shape
    if x.is_meta:
        return make_meta((B, C, out_h, out_w), (x,), "bilinear")
    if (out_h, out_w) == (H, W):
        return make_node(x.data.copy(), (x,), lambda g: (g,), "bilinear")
    dtype = x.data.dtype
    y0, y1, wy = bilinear_coefficients(H, out_h, dtype)
    x0, x1, wx = bilinear_coefficients(W, out_w, dtype)
    kern = _core.kernels
    out = kern.bilinear_forward(np.ascontiguousarray(x.data), y0, y1, wy, x0, x1, wx)

    def backward(g):
        return (kern.bilinear_backward(np.ascontiguousarray(g), H, W, y0, y1, wy, x0, x1, wx),)

    return make_node(np.asarray(out), (x,), backward, "bilinear")


def resize_array(arr, out_h, out_w):
    """Bilinear resize of a plain (..., H, W) numpy array (no autodiff)."""
    arr = np.asarray(arr)
    lead = arr.shape[:-2]
    x = np.ascontiguousarray(arr.reshape((1, -1) + arr.shape[-2:]))
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    out = bilinear_upsample(Tensor._wrap(x), out_h, out_w).data
    return out.reshape(lead + (out_h, out_w))
