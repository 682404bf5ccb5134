"""Training: learning-rate schedule, SGD with momentum, and the training loop.

Each optimizer step writes one log line::

    step=<int> lr=<float> total=<float> iou=<float> bce=<float> l1=<float> bnd=<float>

where ``lr`` is the non-backbone learning rate used for that step and the
loss terms are the alpha-weighted sums over the supervised heads.

Runs are deterministic for a fixed seed when numpy's BLAS is limited to one
thread (the CLI's ``--threads 1``); multi-threaded reductions may reorder
floating-point sums.
"""
from __future__ import annotations

import dataclasses
import math
import re
import time
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import save_checkpoint
from .errors import ConfigError, NumericalError
from .losses import LossWeights, total_loss
from .model import CTDNet, VariantConfig, predict_saliency
from .nn import init
from .tensor import Tensor

LOG_PATTERN = re.compile(
    r"^step=(?P<step>\d+) lr=(?P<lr>\S+) total=(?P<total>\S+) iou=(?P<iou>\S+) "
    r"bce=(?P<bce>\S+) l1=(?P<l1>\S+) bnd=(?P<bnd>\S+)$"
)
LOG_TERMS = ("iou", "bce", "l1", "bnd")


def lr_schedule(step, total, max_lr, warmup_frac):
    """Linear warm-up from 0 to ``max_lr`` over ``round(warmup_frac * total)`` steps, then linear decay to 0."""
    if not 0 <= step <= total:
        raise ConfigError(f"step {step} outside [0, {total}]")
    if not 0 < warmup_frac < 1:
        raise ConfigError("warmup_frac must lie in (0, 1)")
    w = round(warmup_frac * total)
    if w > 0 and step <= w:
        return max_lr * step / w
    return max_lr * (total - step) / (total - w)


class SGD:
    """Momentum SGD over parameter groups.

    Update per parameter: v <- m * v + grad + wd * param; param <- param - lr * v.
    ``step`` takes one learning rate per group.
    """

    def __init__(self, groups, momentum=0.9, weight_decay=5e-4):
        if momentum < 0 or weight_decay < 0:
            raise ConfigError("momentum and weight decay must be non-negative")
        self.groups = [list(g) for g in groups]
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {id(p): np.zeros_like(p.data) for g in self.groups for p in g}

    def step(self, lrs):
        if len(lrs) != len(self.groups):
            raise ConfigError(f"need {len(self.groups)} learning rates, got {len(lrs)}")
        for lr, group in zip(lrs, self.groups):
            for p in group:
                if p.grad is None:
                    continue
                v = self.velocity[id(p)]
                v *= self.momentum
                v += p.grad
                if self.weight_decay:
                    v += self.weight_decay * p.data
                p.data -= (lr * v).astype(p.data.dtype, copy=False)

    def zero_grad(self):
        for g in self.groups:
            for p in g:
                p.grad = None


def _boolean(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclasses.dataclass
class TrainConfig:
    variant: str = "M"
    backbone: str = ""            # empty keeps the variant's own encoder
    decoder_width: int = 0        # 0 keeps the variant's own width
    data: str = "synthetic"       # dataset directory, or "synthetic"
    synthetic_count: int = 64
    input_size: int = 352
    batch_size: int = 32
    epochs: int = 48
    steps: int = 0                # overrides epochs when positive
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_backbone: float = 5e-3
    lr_rest: float = 5e-2
    warmup_frac: float = 0.05
    seed: int = 0
    beta: float = 0.6
    gamma: float = 1.0
    alpha: str = "1,1,1,1,1"      # per saliency head: d_p123, d_p12, d_p1, e_g5, e6
    reduction: str = "mean"
    fixed_batch: bool = False     # train on the first batch only, without augmentation
    augment: bool = True
    checkpoint_every: int = 0     # 0 saves only the final checkpoint
    out_dir: str = "runs/ctdnet"

    def __post_init__(self):
        if self.input_size % 32 or self.input_size < 32:
            raise ConfigError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.lr_backbone <= 0 or self.lr_rest <= 0:
            raise ConfigError("learning rates must be positive")
        if self.steps < 0 or self.epochs < 1 or self.synthetic_count < 1:
            raise ConfigError("steps must be >= 0; epochs and synthetic_count >= 1")
        if not 0 < self.warmup_frac < 1:
            raise ConfigError("warmup_frac must lie in (0, 1)")

    @classmethod
    def preset(cls, name, **overrides):
        if name == "desk":
            base = dict(backbone="tiny", input_size=96, batch_size=4, steps=300, synthetic_count=16)
        elif name == "default":
            base = {}
        else:
            raise ConfigError(f"unknown preset {name!r}; expected desk or default")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def coerce(cls, values):
        """Build from string values (config files, CLI flags), converting by field type."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                if kind == "bool":
                    out[key] = _boolean(raw)
                elif kind == "int":
                    out[key] = int(raw)
                elif kind == "float":
                    out[key] = float(raw)
                else:
                    out[key] = str(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
        return out

    def variant_config(self):
        return VariantConfig.preset(
            self.variant,
            backbone=self.backbone or None,
            input_size=self.input_size,
            decoder_width=self.decoder_width or None,
        )

    def loss_weights(self):
        try:
            alpha = tuple(float(a) for a in self.alpha.split(","))
        except ValueError as exc:
            raise ConfigError(f"alpha must be comma-separated numbers, got {self.alpha!r}") from exc
        return LossWeights(beta=self.beta, gamma=self.gamma, alpha=alpha, reduction=self.reduction)


def read_config_file(path):
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def format_log_line(step, lr, total, terms):
    return (f"step={step} lr={lr:.6g} total={total:.6g} "
            + " ".join(f"{k}={terms[k]:.6g}" for k in LOG_TERMS))


def parse_log_line(line):
    m = LOG_PATTERN.match(line.strip())
    if not m:
        raise ValueError(f"not a training log line: {line!r}")
    d = m.groupdict()
    return {"step": int(d.pop("step")), **{k: float(v) for k, v in d.items()}}


def param_groups(model):
    """(backbone parameters, everything else)."""
    backbone, rest = [], []
    for name, p in model.named_parameters():
        (backbone if name.startswith("backbone.") else rest).append(p)
    return backbone, rest


def load_training_samples(cfg):
    if cfg.data == "synthetic":
        spec = D.SyntheticSpec(size=cfg.input_size, seed=cfg.seed)
        count = cfg.batch_size if cfg.fixed_batch else cfg.synthetic_count
        return [D.generate_sample(spec, i) for i in range(count)]
    samples = D.load_dataset(cfg.data)
    return samples[: cfg.batch_size] if cfg.fixed_batch else samples


@dataclasses.dataclass
class TrainResult:
    model: CTDNet
    history: list            # one dict per step, as parsed from the log line
    checkpoint: Path
    batch: tuple | None = None
    seconds: float = 0.0


def _fit(sample, target):
    if sample.image.shape[1:] == (target, target):
        return sample
    image = D.resize_array(sample.image, target, target)
    mask = D.resize_array(sample.mask.astype(np.float32), target, target) >= 0.5
    return D.make_sample(np.clip(image, 0, 1), mask[0], sample.id)


def train(cfg: TrainConfig, log=print, samples=None):
    """Run the configured optimisation; returns a :class:`TrainResult`.

    ``log`` receives each formatted step line. A non-finite loss aborts with
    :class:`NumericalError` naming the last checkpoint written.
    """
    started = time.perf_counter()
    init.seed(cfg.seed)
    model = CTDNet(cfg.variant_config())
    model.train()
    weights = cfg.loss_weights()
    samples = load_training_samples(cfg) if samples is None else list(samples)
    if not samples:
        raise ConfigError("dataset is empty")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    per_epoch = max(1, math.ceil(len(samples) / cfg.batch_size))
    total = cfg.steps if cfg.steps > 0 else cfg.epochs * per_epoch
    backbone, rest = param_groups(model)
    opt = SGD([backbone, rest], cfg.momentum, cfg.weight_decay)
    out_dir = Path(cfg.out_dir)
    last_good = None

    fixed = None
    if cfg.fixed_batch:
        fixed = D.stack_batch([_fit(s, cfg.input_size) for s in samples[: cfg.batch_size]])

    def batches():
        while True:
            order = rng.permutation(len(samples))
            for i in range(0, len(order), cfg.batch_size):
                chosen = [samples[j] for j in order[i : i + cfg.batch_size]]
                if cfg.augment:
                    chosen = [D.augment(s, rng, cfg.input_size) for s in chosen]
                else:
                    chosen = [_fit(s, cfg.input_size) for s in chosen]
                yield D.stack_batch(chosen)

    stream = batches() if fixed is None else None
    history = []
    for step in range(1, total + 1):
        images, masks, bounds = fixed if fixed is not None else next(stream)
        scale = lr_schedule(step, total, 1.0, cfg.warmup_frac)
        lrs = (cfg.lr_backbone * scale, cfg.lr_rest * scale)
        opt.zero_grad()
        out = model(Tensor(images))
        terms = {}
        loss = total_loss(out, masks, bounds, weights, terms)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(
                f"non-finite loss at step {step}; last good checkpoint: {last_good or 'none written'}"
            )
        loss.backward()
        opt.step(lrs)
        line = format_log_line(step, lrs[1], value, terms)
        log(line)
        history.append(parse_log_line(line))
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < total:
            last_good = out_dir / f"step_{step:06d}.ckpt"
            save_checkpoint(last_good, model, cfg.seed, step)
    final = out_dir / "final.ckpt"
    save_checkpoint(final, model, cfg.seed, total)
    return TrainResult(model, history, final, fixed, time.perf_counter() - started)


def smoothed(values, window=10):
    """Trailing moving average (shorter windows at the start)."""
    values = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, len(values) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def batch_iou(model, images, masks, threshold=0.5):
    """Intersection over union of thresholded final saliency against binary masks, pooled over the batch."""
    pred = predict_saliency(model, images) >= threshold
    gt = masks >= 0.5
    union = np.logical_or(pred, gt).sum()
    return 1.0 if union == 0 else float(np.logical_and(pred, gt).sum() / union)
