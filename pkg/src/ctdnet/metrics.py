"""Saliency evaluation: MAE, max F-measure, E-measure, and boundary ground truth.

All functions take plain numpy arrays. Predictions live in [0, 1]; ground
truth masks are binary. Threshold sweeps binarize with ``prediction >= t``
for t = i/255, i = 1..255, and count pixels exactly through sorted values,
so curves are reproducible bit for bit.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
from typing import NamedTuple

import numpy as np

from .errors import ShapeError, UsageError, ValidationError

THRESHOLDS = np.arange(1, 256, dtype=np.float64) / 255.0


class EvalPair(NamedTuple):
    prediction: np.ndarray
    gt: np.ndarray


@dataclasses.dataclass(frozen=True)
class FMeasureConfig:
    beta_sq: float = 0.3
    thresholds: tuple = tuple(THRESHOLDS)
    per_image: bool = False  # average F over images instead of averaging P/R first

    def __post_init__(self):
        if self.beta_sq <= 0:
            raise ValueError("beta_sq must be positive")
        t = np.asarray(self.thresholds)
        if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] > 1:
            raise ValueError("thresholds must be strictly increasing within (0, 1]")


def _pair(prediction, gt):
    p = np.asarray(prediction, dtype=np.float64)
    g = np.asarray(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p, g


def _binary(g):
    g = np.asarray(g)
    if not np.all((g == 0) | (g == 1)):
        raise ValidationError("ground truth must be binary (0/1)")
    return g.astype(bool)


def mae(prediction, gt):
    p, g = _pair(prediction, gt)
    return float(np.mean(np.abs(p - g)))


def f_beta(precision, recall, beta_sq=0.3):
    """(1 + b2) P R / (b2 P + R), defined as 0 when P + R = 0."""
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1 + beta_sq) * precision * recall / denom


def _counts(p, g, thresholds):
    """Per-threshold (true positives, predicted positives) for one image."""
    fg = np.sort(p[g])
    allv = np.sort(p.reshape(-1))
    tp = fg.size - np.searchsorted(fg, thresholds, side="left")
    pos = allv.size - np.searchsorted(allv, thresholds, side="left")
    return tp.astype(np.float64), pos.astype(np.float64)


@dataclasses.dataclass
class FMeasureResult:
    curve: np.ndarray
    max_f: float
    precision: np.ndarray
    recall: np.ndarray
    empty_gt: int


def max_f_measure(pairs, cfg=FMeasureConfig()):
    """Dataset F-measure curve over thresholds and its maximum.

    Precision and recall are averaged over images at each threshold before
    forming F (or F is averaged per image when ``cfg.per_image``). Conventions:
    an image with no predicted positives has precision 0; an image with an
    empty ground truth has recall 1 and precision 1 only if nothing is
    predicted, and is counted in ``empty_gt``.
    """
    pairs = list(pairs)
    if not pairs:
        raise UsageError("max_f_measure needs at least one prediction/ground-truth pair")
    thr = np.asarray(cfg.thresholds, dtype=np.float64)
    precisions, recalls, empty = [], [], 0
    for prediction, gt in pairs:
        p, g = _pair(prediction, gt)
        g = _binary(g)
        tp, pos = _counts(p, g, thr)
        n_fg = g.sum()
        if n_fg == 0:
            empty += 1
            recall = np.ones_like(tp)
            precision = (pos == 0).astype(np.float64)
        else:
            recall = tp / n_fg
            precision = np.divide(tp, pos, out=np.zeros_like(tp), where=pos > 0)
        precisions.append(precision)
        recalls.append(recall)
    P, R = np.array(precisions), np.array(recalls)
    b2 = cfg.beta_sq

    def fcurve(prec, rec):
        denom = b2 * prec + rec
        return np.divide((1 + b2) * prec * rec, denom, out=np.zeros_like(denom), where=denom > 0)

    if cfg.per_image:
        curve = fcurve(P, R).mean(axis=0)
    else:
        curve = fcurve(P.mean(axis=0), R.mean(axis=0))
    return FMeasureResult(curve, float(curve.max()), P.mean(axis=0), R.mean(axis=0), empty)


@dataclasses.dataclass
class EMeasureResult:
    curve: np.ndarray
    max_e: float
    degenerate: bool


def e_measure(prediction, gt, thresholds=THRESHOLDS):
    """Enhanced-alignment measure of one image at each threshold, and its maximum.

    With P_bin the binarized prediction and bias maps phi_P = P_bin - mean(P_bin),
    phi_G = G - mean(G), the alignment is xi = 2 phi_P phi_G / (phi_P^2 + phi_G^2)
    and E = mean((1 + xi)^2 / 4). When G is constant the bias map vanishes; then
    E is the fraction of pixels where P_bin agrees with G, and ``degenerate`` is set.
    """
    p, g = _pair(prediction, gt)
    g = _binary(g)
    thr = np.asarray(thresholds, dtype=np.float64)
    n = g.size
    n_fg = int(g.sum())
    tp, pos = _counts(p, g, thr)
    if n_fg in (0, n):
        agree = tp if n_fg == n else n - pos
        curve = agree / n
        return EMeasureResult(curve, float(curve.max()), True)
    fp = pos - tp
    fn = n_fg - tp
    tn = n - n_fg - fp
    mu_p = pos / n
    mu_g = n_fg / n

    def enhanced(bp, bg):
        # bp, bg are the binary values of P_bin and G for a class of pixels
        a = bp - mu_p
        b = bg - mu_g
        denom = a * a + b * b
        xi = np.divide(2 * a * b, denom, out=np.zeros_like(denom), where=denom > 0)
        return (1 + xi) ** 2 / 4

    total = tp * enhanced(1.0, 1.0) + fp * enhanced(1.0, 0.0) + fn * enhanced(0.0, 1.0) + tn * enhanced(0.0, 0.0)
    curve = total / n
    return EMeasureResult(curve, float(curve.max()), False)


def mean_e_measure(pairs, thresholds=THRESHOLDS):
    """Image-averaged E-measure curve and its maximum, plus the degenerate-image count."""
    results = [e_measure(p, g, thresholds) for p, g in pairs]
    if not results:
        raise UsageError("mean_e_measure needs at least one pair")
    curve = np.mean([r.curve for r in results], axis=0)
    return curve, float(curve.max()), sum(r.degenerate for r in results)


def boundary_from_mask(g, connectivity=4):
    """Inner boundary: foreground pixels with a background neighbour (outside the frame counts as background)."""
    g = _binary(g)
    if g.ndim < 2:
        raise ShapeError("mask must be at least 2-D")
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    pad = [(0, 0)] * (g.ndim - 2) + [(1, 1), (1, 1)]
    gp = np.pad(g, pad)
    H, W = g.shape[-2:]
    interior = g.copy()
    offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        offsets += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for dy, dx in offsets:
        interior &= gp[..., 1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
    return (g & ~interior).astype(np.uint8)


@dataclasses.dataclass
class MetricsReport:
    dataset: str
    count: int
    mae: float
    max_f: float
    e_measure: float
    config_digest: str
    f_curve: np.ndarray | None = None
    e_curve: np.ndarray | None = None
    empty_gt: int = 0

    FIELDS = ("dataset", "count", "mae", "max_f", "e_measure", "config_digest")

    def to_text(self):
        lines = [
            f"dataset        {self.dataset}",
            f"count          {self.count}",
            f"MAE            {self.mae:.6f}",
            f"max F-beta     {self.max_f:.6f}",
            f"E-measure      {self.e_measure:.6f}",
            f"config digest  {self.config_digest}",
        ]
        if self.empty_gt:
            lines.append(f"note           {self.empty_gt} image(s) with empty ground truth")
        return "\n".join(lines)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.FIELDS)
        writer.writerow([self.dataset, self.count, repr(self.mae), repr(self.max_f),
                         repr(self.e_measure), self.config_digest])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2 or tuple(rows[0]) != cls.FIELDS:
            raise ValidationError("not a metrics report CSV")
        d, c, m, f, e, digest = rows[1]
        return cls(d, int(c), float(m), float(f), float(e), digest)


def evaluate_pairs(pairs, dataset="dataset", cfg=FMeasureConfig(), extra=""):
    """MAE, max F-measure and max E-measure over a list of (prediction, gt) pairs."""
    pairs = [EvalPair(*_pair(p, g)) for p, g in pairs]
    if not pairs:
        raise UsageError("no pairs to evaluate")
    f = max_f_measure(pairs, cfg)
    e_curve, e_max, _ = mean_e_measure(pairs, cfg.thresholds)
    digest_src = f"beta_sq={cfg.beta_sq};n_thr={len(cfg.thresholds)};per_image={cfg.per_image};{extra}"
    return MetricsReport(
        dataset=dataset,
        count=len(pairs),
        mae=float(np.mean([mae(p, g) for p, g in pairs])),
        max_f=f.max_f,
        e_measure=e_max,
        config_digest=hashlib.sha256(digest_src.encode()).hexdigest()[:12],
        f_curve=f.curve,
        e_curve=e_curve,
        empty_gt=f.empty_gt,
    )
