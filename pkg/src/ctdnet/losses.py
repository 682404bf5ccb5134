"""Pixel losses and the deeply supervised training objective.

``reduction="sum"`` sums over the pixels of each image and averages over the
batch, which for a single image is exactly the per-image sum. ``"mean"``
averages over every pixel in the batch and is what training uses by default.
The IoU loss is always computed per image and averaged over the batch.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .errors import ConfigError, ShapeError
from .model import BOUNDARY_HEAD, SALIENCY_HEADS
from .tensor import Tensor
from .tensor import functional as F
from .tensor.tensor import abs_, clamp, log, mean, sum_

PROB_EPS = 1e-7


@dataclasses.dataclass(frozen=True)
class LossWeights:
    beta: float = 0.6
    gamma: float = 1.0
    alpha: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    reduction: str = "mean"

    def __post_init__(self):
        if len(self.alpha) != len(SALIENCY_HEADS):
            raise ConfigError(f"need {len(SALIENCY_HEADS)} head weights, got {len(self.alpha)}")
        if self.beta < 0 or self.gamma < 0 or any(a < 0 for a in self.alpha):
            raise ConfigError("loss weights must be non-negative")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")


def _target(g, p):
    if isinstance(g, Tensor):
        gd = g.data
    else:
        gd = np.asarray(g)
    if gd.shape != p.shape:
        raise ShapeError(f"prediction {p.shape} and target {gd.shape} differ")
    return Tensor._wrap(gd.astype(p.data.dtype, copy=False))


def _reduce(per_pixel, reduction):
    if reduction == "sum":
        return mean(sum_(per_pixel, axis=(1, 2, 3)), axis=0)
    if reduction == "mean":
        return mean(per_pixel)
    raise ConfigError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def bce_loss(p, g, reduction="sum"):
    """Binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7] before the log."""
    g = _target(g, p)
    pc = clamp(p, PROB_EPS, 1 - PROB_EPS)
    per_pixel = -(g * log(pc) + (1 - g) * log(1 - pc))
    return _reduce(per_pixel, reduction)


def iou_loss(p, g, diagnostics=None):
    """Soft IoU loss, 1 - sum(g*p) / sum(g + p - g*p), per image.

    An image whose prediction and target are both all-zero has an empty union;
    its loss is defined as 0 and, if ``diagnostics`` is a dict, counted under
    ``"empty_union"``.
    """
    g = _target(g, p)
    inter = sum_(g * p, axis=(1, 2, 3))
    union = sum_(g + p - g * p, axis=(1, 2, 3))
    empty = (union.data == 0).astype(p.data.dtype)
    if diagnostics is not None:
        diagnostics["empty_union"] = diagnostics.get("empty_union", 0) + int(empty.sum())
    ratio = inter / (union + empty) + empty
    return mean(1 - ratio, axis=0)


def l1_loss(p, g, reduction="sum"):
    g = _target(g, p)
    return _reduce(abs_(p - g), reduction)


def saliency_loss(p, g, weights=LossWeights(), terms=None):
    """IoU + beta * BCE + gamma * L1."""
    total = iou = iou_loss(p, g)
    if terms is not None:
        terms["iou"] = terms.get("iou", 0.0) + iou.item()
    if weights.beta:
        bce = bce_loss(p, g, weights.reduction)
        total = total + weights.beta * bce
        if terms is not None:
            terms["bce"] = terms.get("bce", 0.0) + bce.item()
    if weights.gamma:
        l1 = l1_loss(p, g, weights.reduction)
        total = total + weights.gamma * l1
        if terms is not None:
            terms["l1"] = terms.get("l1", 0.0) + l1.item()
    return total


def boundary_loss(p_b, g_b, reduction="sum"):
    return 0.5 * (bce_loss(p_b, g_b, reduction) + l1_loss(p_b, g_b, reduction))


def _at_resolution(p, h, w):
    return p if p.shape[2:] == (h, w) else F.bilinear_upsample(p, h, w)


def total_loss(heads, g, g_b, weights=LossWeights(), terms=None):
    """Boundary loss plus the alpha-weighted saliency losses of the five saliency heads.

    Predictions are bilinearly resized to the ground-truth resolution first.
    ``terms``, when given, receives the alpha-weighted sums of each component
    (keys iou, bce, l1, bnd) as floats for logging.
    """
    preds = heads.predictions if hasattr(heads, "predictions") else heads
    missing = [n for n in SALIENCY_HEADS + (BOUNDARY_HEAD,) if n not in preds]
    if missing:
        raise ConfigError(f"missing prediction heads: {missing}")
    gd = g.data if isinstance(g, Tensor) else np.asarray(g)
    h, w = gd.shape[2:]
    pb = _at_resolution(preds[BOUNDARY_HEAD], h, w)
    total = boundary_loss(pb, g_b, weights.reduction)
    if terms is not None:
        terms.update(iou=0.0, bce=0.0, l1=0.0, bnd=total.item())
    for alpha, name in zip(weights.alpha, SALIENCY_HEADS):
        if not alpha:
            continue
        parts = {} if terms is not None else None
        s = saliency_loss(_at_resolution(preds[name], h, w), gd, weights, parts)
        total = total + alpha * s
        if terms is not None:
            for k, v in parts.items():
                terms[k] += alpha * v
    return total
