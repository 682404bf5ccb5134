"""Finite-difference gradient checks over every layer, block and loss.

Each case builds small random operands in float64 and reports the maximum
relative error from :func:`ctdnet.tensor.grad_check`.
"""
from __future__ import annotations

import numpy as np

from . import losses as L
from .model import HEADS
from .nn import BRM, CAM, FFM, SAM, SAP, BatchNorm2d, Conv2d, ConvBNReLU, init
from .tensor import Tensor, grad_check, wide_precision
from .tensor import functional as F
from .tensor import tensor as T

TOLERANCE = 1e-4


def _t(rng, *shape, lo=None, hi=None):
    if lo is None:
        return Tensor(rng.standard_normal(shape), requires_grad=True)
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _binary(rng, *shape):
    return (rng.random(shape) > 0.5).astype(np.float64)


def _layer_cases(rng):
    x = _t(rng, 2, 3, 7, 6)
    w = _t(rng, 4, 3, 3, 3)
    b = _t(rng, 4)
    yield "conv2d 3x3 s1 p1", lambda x, w, b: F.conv2d(x, w, b, 1, 1), (x, w, b), ()
    yield "conv2d 3x3 s2 p1", lambda x, w, b: F.conv2d(x, w, b, 2, 1), (x, w, b), ()
    yield "conv2d 3x3 direct", lambda x, w, b: F.conv2d(x, w, b, 2, 0, method="direct"), (x, w, b), ()
    w1 = _t(rng, 5, 3, 1, 1)
    yield "conv2d 1x1", lambda x, w: F.conv2d(x, w), (x, w1), ()

    bn = BatchNorm2d(3)
    bn.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
    bn.beta.data[:] = rng.standard_normal(3)
    yield "batch_norm train", lambda x: bn(x), (x,), bn.parameters()
    bn_eval = BatchNorm2d(3)
    bn_eval.running_mean[:] = rng.standard_normal(3)
    bn_eval.running_var[:] = rng.uniform(0.5, 2.0, 3)
    bn_eval.eval()
    yield "batch_norm eval", lambda x: bn_eval(x), (x,), bn_eval.parameters()

    yield "max_pool 3/2/1", lambda x: F.pool2d(x, "max", 3, 2, 1), (x,), ()
    yield "avg_pool 5/1/2", lambda x: F.pool2d(x, "avg", 5, 1, 2), (x,), ()
    yield "global_avg_pool", F.global_avg_pool, (x,), ()
    yield "channel_pool max", lambda x: F.channel_pool(x, "max"), (x,), ()
    yield "channel_pool avg", lambda x: F.channel_pool(x, "avg"), (x,), ()
    yield "bilinear up x2", lambda x: F.bilinear_upsample(x, 14, 12), (x,), ()
    yield "bilinear up x3.5", lambda x: F.bilinear_upsample(x, 9, 21), (x,), ()

    yield "relu", T.relu, (x,), ()
    yield "sigmoid", T.sigmoid, (x,), ()
    pos = _t(rng, 2, 3, 4, 4, lo=0.2, hi=2.0)
    yield "log", T.log, (pos,), ()
    yield "abs", T.abs_, (x,), ()
    yield "clamp", lambda x: T.clamp(x, -0.5, 0.5), (x,), ()
    y = _t(rng, 2, 1, 7, 6)
    yield "mul broadcast", lambda x, y: x * y, (x, y), ()
    denom = _t(rng, 2, 3, 7, 6, lo=0.5, hi=2.0)
    yield "div", lambda a, b: a / b, (x, denom), ()
    yield "concat", lambda a, b: T.concat([a, b], axis=1), (x, y), ()

    conv = Conv2d(3, 4, 3, stride=2)
    yield "Conv2d module", conv, (x,), conv.parameters()
    cbr = ConvBNReLU(3, 4, 3)
    yield "ConvBNReLU", cbr, (x,), cbr.parameters()


def _block_cases(rng):
    C = 4
    f1, f2 = _t(rng, 2, C, 6, 6), _t(rng, 2, C, 6, 6)
    ffm = FFM(C)
    yield "FFM", ffm, (f1, f2), ffm.parameters()
    sam = SAM(C, C)
    yield "SAM", sam, (f1,), sam.parameters()
    proj = ConvBNReLU(4 * C, C, 3)
    sap = SAP(4)
    yield "SAP path", lambda x: proj(sap(x)), (f1,), proj.parameters()
    cam = CAM(C)
    coarse, fine = _t(rng, 2, C, 4, 4), _t(rng, 2, C, 8, 8)
    yield "CAM", cam, (coarse, fine), cam.parameters()
    brm = BRM(C)
    yield "BRM", brm, (_t(rng, 2, C, 4, 4), _t(rng, 2, C, 8, 8)), brm.parameters()


def _loss_cases(rng):
    p = _t(rng, 2, 1, 6, 6, lo=0.05, hi=0.95)
    g = _binary(rng, 2, 1, 6, 6)
    yield "bce loss", lambda p: L.bce_loss(p, g), (p,), ()
    yield "iou loss", lambda p: L.iou_loss(p, g), (p,), ()
    yield "l1 loss", lambda p: L.l1_loss(p, g), (p,), ()
    yield "saliency loss", lambda p: L.saliency_loss(p, g, L.LossWeights()), (p,), ()
    yield "boundary loss", lambda p: L.boundary_loss(p, g), (p,), ()
    gt = _binary(rng, 1, 1, 8, 8)
    sizes = {"d_p123": 4, "d_p12": 4, "d_p1": 2, "e_g5": 2, "e6": 2, "d_p3": 8}
    preds = [_t(rng, 1, 1, s, s, lo=0.05, hi=0.95) for s in sizes.values()]

    def total(*ps):
        return L.total_loss(dict(zip(HEADS, ps)), gt, gt, L.LossWeights())

    yield "total loss", total, tuple(preds), ()


GROUPS = {"layers": _layer_cases, "blocks": _block_cases, "losses": _loss_cases}


def run_suite(groups=("layers", "blocks", "losses"), seed=0):
    """[(case name, max relative error)] for the requested groups."""
    results = []
    with wide_precision():
        init.seed(seed)
        # operands must not share a stream with grad_check's projection weights
        rng = np.random.default_rng([seed, 1])
        for group in groups:
            for name, fn, inputs, params in GROUPS[group](rng):
                results.append((name, grad_check(fn, inputs, params, seed=seed)))
    return results
