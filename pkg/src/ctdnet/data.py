"""Synthetic salient-object data, image/mask files and training augmentation.

Geometry is rasterized with integer arithmetic only and textures come from a
PCG64 stream seeded with ``seed ^ index``, so a dataset is reproducible from
its seed on any platform.

Dataset layout on disk::

    root/manifest.txt        one sample id per line
    root/images/<id>.png     24-bit RGB
    root/masks/<id>.pgm      8-bit binary PGM (0 or 255)
"""
from __future__ import annotations

import dataclasses
import io
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataIOError, GenerationError, ShapeError, ValidationError
from .metrics import boundary_from_mask
from .tensor import resize_array

SHAPES = ("ellipse", "rectangle", "blob")

# Sixteen compass directions scaled by 64, rounded; keeps blob vertices integral.
_DIRECTIONS = np.array([
    (64, 0), (59, 24), (45, 45), (24, 59), (0, 64), (-24, 59), (-45, 45), (-59, 24),
    (-64, 0), (-59, -24), (-45, -45), (-24, -59), (0, -64), (24, -59), (45, -45), (59, -24),
], dtype=np.int64)


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    size: int = 96
    min_objects: int = 1
    max_objects: int = 3
    shapes: tuple = SHAPES
    contrast: tuple = (0.35, 0.75)  # |foreground - background| mean intensity gap
    noise: float = 0.04
    seed: int = 0
    min_area: float = 0.02
    max_area: float = 0.60
    max_retries: int = 32

    def __post_init__(self):
        if self.size < 8:
            raise ConfigError("canvas must be at least 8 pixels")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError("need 1 <= min_objects <= max_objects")
        if not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise ConfigError(f"shape vocabulary must be drawn from {SHAPES}")
        if not 0 < self.contrast[0] <= self.contrast[1] <= 1:
            raise ConfigError("contrast range must lie in (0, 1]")
        if not 0 <= self.min_area < self.max_area <= 1:
            raise ConfigError("area bounds must satisfy 0 <= min < max <= 1")
        if self.noise < 0 or self.max_retries < 1 or self.seed < 0:
            raise ConfigError("noise, seed must be non-negative and max_retries positive")


@dataclasses.dataclass
class Sample:
    image: np.ndarray     # (3, H, W) float32 in [0, 1]
    mask: np.ndarray      # (1, H, W) uint8 in {0, 1}
    boundary: np.ndarray  # (1, H, W) uint8 in {0, 1}
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:] or self.boundary.shape != self.mask.shape:
            raise ShapeError("image, mask and boundary extents disagree")


def make_sample(image, mask, id):
    mask = np.asarray(mask, dtype=np.uint8).reshape((1,) + image.shape[1:])
    return Sample(np.asarray(image, dtype=np.float32), mask, boundary_from_mask(mask), id)


# -- rasterization -------------------------------------------------------------

def _grid(n):
    yy, xx = np.mgrid[0:n, 0:n]
    return yy.astype(np.int64), xx.astype(np.int64)


def _ellipse(rng, n, yy, xx):
    ry, rx = (int(v) for v in rng.integers(n // 10, n // 3, size=2, endpoint=True))
    cy, cx = (int(v) for v in rng.integers(0, n, size=2))
    return (yy - cy) ** 2 * rx * rx + (xx - cx) ** 2 * ry * ry <= (rx * ry) ** 2


def _rectangle(rng, n, yy, xx):
    h, w = (int(v) for v in rng.integers(n // 6, n // 2, size=2, endpoint=True))
    y0 = int(rng.integers(0, n - h + 1))
    x0 = int(rng.integers(0, n - w + 1))
    return (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)


def _blob(rng, n, yy, xx):
    """Star-shaped polygon whose radius does an integer random walk around the compass."""
    cy, cx = (int(v) for v in rng.integers(n // 4, 3 * n // 4, size=2, endpoint=True))
    r = int(rng.integers(n // 8, n // 4, endpoint=True))
    step = max(1, n // 24)
    radii = []
    for _ in range(len(_DIRECTIONS)):
        r = int(np.clip(r + int(rng.integers(-step, step, endpoint=True)), n // 12 + 1, n // 3))
        radii.append(r)
    radii = np.array(radii, dtype=np.int64)
    vy = cy + (_DIRECTIONS[:, 0] * radii) // 64
    vx = cx + (_DIRECTIONS[:, 1] * radii) // 64
    inside = np.zeros(yy.shape, dtype=bool)
    for k in range(len(vy)):
        y1, x1, y2, x2 = vy[k], vx[k], vy[k - 1], vx[k - 1]
        if y1 == y2:
            continue
        crosses = (y1 > yy) != (y2 > yy)
        # xx < x1 + (yy - y1) * (x2 - x1) / (y2 - y1), multiplied through by (y2 - y1)
        lhs = (xx - x1) * (y2 - y1)
        rhs = (yy - y1) * (x2 - x1)
        left = lhs < rhs if y2 > y1 else lhs > rhs
        inside ^= crosses & left
    return inside


_RASTER = {"ellipse": _ellipse, "rectangle": _rectangle, "blob": _blob}


def generate_sample(spec: SyntheticSpec, index: int) -> Sample:
    """Deterministic sample ``index`` of the synthetic set described by ``spec``."""
    if index < 0:
        raise ConfigError("sample index must be non-negative")
    rng = np.random.Generator(np.random.PCG64(spec.seed ^ index))
    n = spec.size
    yy, xx = _grid(n)
    for _ in range(spec.max_retries):
        mask = np.zeros((n, n), dtype=bool)
        count = int(rng.integers(spec.min_objects, spec.max_objects, endpoint=True))
        for _ in range(count):
            kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
            mask |= _RASTER[kind](rng, n, yy, xx)
        frac = mask.mean()
        if spec.min_area <= frac <= spec.max_area:
            break
    else:
        raise GenerationError(
            f"sample {index}: no mask with area fraction in [{spec.min_area}, {spec.max_area}] "
            f"after {spec.max_retries} attempts"
        )
    bg = rng.uniform(0.0, 1.0, size=3)
    gap = rng.uniform(*spec.contrast)
    direction = np.where(bg > 0.5, -1.0, 1.0)
    fg = np.clip(bg + direction * gap, 0.0, 1.0)
    image = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    image = image + spec.noise * rng.standard_normal((3, n, n))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return make_sample(image, mask, f"{index:05d}")


def stack_batch(samples):
    """(images, masks, boundaries) as float32 (B, C, H, W) arrays."""
    images = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    bounds = np.stack([s.boundary for s in samples]).astype(np.float32)
    return images, masks, bounds


# -- augmentation --------------------------------------------------------------

def hflip(sample):
    return Sample(sample.image[..., ::-1].copy(), sample.mask[..., ::-1].copy(),
                  sample.boundary[..., ::-1].copy(), sample.id)


def augment(sample, rng, target, scale=1.1, flip=None):
    """Resize to ``round(scale * target)``, crop ``target`` x ``target`` at random, maybe flip.

    ``flip`` forces the horizontal flip on (True) or off (False); None flips
    with probability 1/2. The mask is re-binarized at 0.5 after interpolation
    and the boundary is re-derived from it.
    """
    if target % 32 or target < 32:
        raise ConfigError(f"augmentation target must be a positive multiple of 32, got {target}")
    if scale < 1.0:
        raise ConfigError(f"resize scale {scale} would leave less than the {target}px crop")
    side = int(round(scale * target))
    image = resize_array(sample.image, side, side)
    soft = resize_array(sample.mask.astype(np.float32), side, side)
    y0 = int(rng.integers(0, side - target, endpoint=True))
    x0 = int(rng.integers(0, side - target, endpoint=True))
    crop = (slice(None), slice(y0, y0 + target), slice(x0, x0 + target))
    image = np.clip(image[crop], 0.0, 1.0).astype(np.float32)
    mask = (soft[crop] >= 0.5).astype(np.uint8)
    do_flip = bool(rng.integers(2)) if flip is None else flip
    out = make_sample(image, mask, sample.id)
    return hflip(out) if do_flip else out


# -- files ---------------------------------------------------------------------

def atomic_write(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _to_u8(arr):
    return np.round(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path, gray):
    """Write an (H, W) uint8 array as binary PGM."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ShapeError("PGM payload must be a 2-D uint8 array")
    h, w = gray.shape
    atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def read_pgm(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc
    m = _PGM_HEADER.match(raw)
    if not m:
        raise DataIOError(path, "not a binary (P5) PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 256:
        raise DataIOError(path, f"unsupported PGM maxval {maxval}")
    body = raw[m.end():]
    if len(body) < w * h:
        raise DataIOError(path, f"truncated: expected {w * h} pixel bytes, found {len(body)}")
    gray = np.frombuffer(body[: w * h], dtype=np.uint8).reshape(h, w)
    if maxval != 255:
        gray = np.round(gray.astype(np.float64) * 255 / maxval).astype(np.uint8)
    return gray


def write_image(path, data):
    """Write a [0, 1] map: (3, H, W) as RGB PNG, (H, W) or (1, H, W) as PNG or PGM."""
    arr = np.asarray(data)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    u8 = _to_u8(arr)
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, u8)
        return
    if suffix != ".png":
        raise DataIOError(path, f"unsupported extension {suffix!r}")
    if u8.ndim == 3:
        if u8.shape[0] != 3:
            raise ShapeError(f"colour images must be (3, H, W), got {arr.shape}")
        img = Image.fromarray(np.ascontiguousarray(u8.transpose(1, 2, 0)), "RGB")
    elif u8.ndim == 2:
        img = Image.fromarray(u8, "L")
    else:
        raise ShapeError(f"cannot write an array of shape {arr.shape}")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def read_image(path, mode=None):
    """Read a PNG or PGM as float32 (C, H, W) in [0, 1].

    ``mode="RGB"`` forces three channels and ``mode="L"`` one; by default the
    file's own channel count is kept (grayscale gives C = 1).
    """
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        gray = read_pgm(path)[None]
        arr = np.repeat(gray, 3, axis=0) if mode == "RGB" else gray
        return arr.astype(np.float32) / 255.0
    try:
        with Image.open(path) as img:
            img.load()
            if mode is None:
                mode = "L" if img.mode in ("1", "L", "LA", "I", "I;16") else "RGB"
            img = img.convert(mode)
            arr = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise DataIOError(path, "no such file") from exc
    except (OSError, ValueError, SyntaxError) as exc:
        raise DataIOError(path, f"unreadable image ({exc})") from exc
    arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    return arr.astype(np.float32) / 255.0


def read_mask(path):
    """Binary (1, H, W) uint8 mask; pixels >= 128 are foreground."""
    gray = read_image(path, mode="L")
    return (gray >= 128 / 255.0).astype(np.uint8)


def write_mask(path, mask):
    write_image(path, np.asarray(mask, dtype=np.float64))


# -- datasets ------------------------------------------------------------------

def write_dataset(root, spec, count):
    """Generate ``count`` samples into ``root`` and return their ids."""
    root = Path(root)
    ids = []
    for index in range(count):
        s = generate_sample(spec, index)
        write_image(root / "images" / f"{s.id}.png", s.image)
        write_mask(root / "masks" / f"{s.id}.pgm", s.mask)
        ids.append(s.id)
    atomic_write(root / "manifest.txt", "".join(f"{i}\n" for i in ids).encode())
    return ids


def read_manifest(root):
    path = Path(root) / "manifest.txt"
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc
    ids = [ln.strip() for ln in lines if ln.strip()]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate ids")
    return ids


def load_sample(root, id):
    root = Path(root)
    image = read_image(root / "images" / f"{id}.png", mode="RGB")
    mask = read_mask(root / "masks" / f"{id}.pgm")
    if mask.shape[1:] != image.shape[1:]:
        raise ValidationError(f"{id}: image {image.shape[1:]} and mask {mask.shape[1:]} differ")
    return make_sample(image, mask[0], id)


def load_dataset(root):
    """All samples listed in ``root/manifest.txt``."""
    ids = read_manifest(root)
    if not ids:
        raise ConfigError(f"{root}: empty dataset")
    return [load_sample(root, i) for i in ids]
