"""Tensor core: the array type, autodiff engine and feature-map kernels."""
from .functional import (
    batch_norm2d,
    bilinear_coefficients,
    bilinear_upsample,
    channel_pool,
    conv2d,
    global_avg_pool,
    out_extent,
    pool2d,
    resize_array,
)
from .grad_check import grad_check
from .io import dump_tensor, load_tensor
from .tensor import (
    Tensor,
    abs_,
    add,
    clamp,
    concat,
    div,
    get_default_dtype,
    is_grad_enabled,
    log,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    set_default_dtype,
    sigmoid,
    sub,
    sum_,
    wide_precision,
)

__all__ = [
    "Tensor",
    "abs_",
    "add",
    "batch_norm2d",
    "bilinear_coefficients",
    "bilinear_upsample",
    "channel_pool",
    "clamp",
    "concat",
    "conv2d",
    "div",
    "dump_tensor",
    "get_default_dtype",
    "global_avg_pool",
    "grad_check",
    "is_grad_enabled",
    "load_tensor",
    "log",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "out_extent",
    "pool2d",
    "relu",
    "resize_array",
    "set_default_dtype",
    "sigmoid",
    "sub",
    "sum_",
    "wide_precision",
]
