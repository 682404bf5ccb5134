"""Single-file checkpoints: a text header and manifest followed by a float32 blob.

Layout::

    CTDCKPT 1
    <key>=<value>            variant fields, then digest, seed, step
    ...
    param <name> <d0>x<d1>... <byte offset>
    buffer <name> <dims> <byte offset>
    end
    <little-endian float32 values, concatenated in manifest order>

Manifest order is the model's canonical enumeration (parameters, then
buffers), so saving the same state twice yields identical bytes.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from .data import atomic_write
from .errors import DataIOError, ValidationError
from .model import CTDNet, VariantConfig

MAGIC = "CTDCKPT 1"
_LE32 = np.dtype("<f4")


@dataclasses.dataclass
class Checkpoint:
    variant: VariantConfig
    seed: int
    step: int
    arrays: dict       # name -> float32 ndarray
    kinds: dict        # name -> "param" | "buffer"
    digest: str = ""

    def __post_init__(self):
        if not self.digest:
            self.digest = self.variant.digest()

    @classmethod
    def from_model(cls, model, seed=0, step=0):
        arrays, kinds = {}, {}
        for name, p in model.named_parameters():
            arrays[name] = np.array(p.data, dtype=np.float32)
            kinds[name] = "param"
        for name, buf in model.named_buffers():
            arrays[name] = np.array(buf, dtype=np.float32)
            kinds[name] = "buffer"
        return cls(model.variant, seed, step, arrays, kinds)

    @property
    def blob_size(self):
        return sum(a.size for a in self.arrays.values()) * 4

    def to_bytes(self):
        lines = [MAGIC]
        lines += [f"{k}={v}" for k, v in self.variant.to_fields().items()]
        lines += [f"digest={self.digest}", f"seed={self.seed}", f"step={self.step}"]
        offset = 0
        chunks = []
        for name, arr in self.arrays.items():
            dims = "x".join(str(d) for d in arr.shape) or "scalar"
            lines.append(f"{self.kinds[name]} {name} {dims} {offset}")
            chunk = np.ascontiguousarray(arr, dtype=_LE32).tobytes()
            chunks.append(chunk)
            offset += len(chunk)
        lines.append("end")
        return ("\n".join(lines) + "\n").encode("ascii") + b"".join(chunks)

    @classmethod
    def from_bytes(cls, raw, source="<bytes>"):
        marker = b"\nend\n"
        cut = raw.find(marker)
        if not raw.startswith(MAGIC.encode() + b"\n") or cut < 0:
            raise DataIOError(source, "not a checkpoint (bad magic or missing manifest end)")
        header = raw[:cut].decode("ascii", errors="replace").split("\n")[1:]
        blob = raw[cut + len(marker):]
        fields, entries = {}, []
        for line in header:
            if line.startswith(("param ", "buffer ")):
                parts = line.split(" ")
                if len(parts) != 4:
                    raise DataIOError(source, f"malformed manifest line {line!r}")
                kind, name, dims, off = parts
                shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
                entries.append((kind, name, shape, int(off)))
            elif "=" in line:
                k, v = line.split("=", 1)
                fields[k] = v
            else:
                raise DataIOError(source, f"unexpected header line {line!r}")
        try:
            variant = VariantConfig.from_fields(fields)
            seed, step, digest = int(fields["seed"]), int(fields["step"]), fields["digest"]
        except (KeyError, ValueError) as exc:
            raise DataIOError(source, f"bad header: {exc}") from exc
        if digest != variant.digest():
            raise DataIOError(source, "variant digest does not match the header fields")
        expected = sum(int(np.prod(s)) for _, _, s, _ in entries) * 4
        if len(blob) != expected:
            raise DataIOError(source, f"blob holds {len(blob)} bytes, manifest needs {expected}")
        arrays, kinds, offset = {}, {}, 0
        for kind, name, shape, off in entries:
            if off != offset:
                raise DataIOError(source, f"{name}: offset {off} out of sequence (expected {offset})")
            n = int(np.prod(shape))
            arrays[name] = np.frombuffer(blob, _LE32, n, off).astype(np.float32).reshape(shape)
            kinds[name] = kind
            offset += 4 * n
        return cls(variant, seed, step, arrays, kinds, digest)


def save_checkpoint(path, model, seed=0, step=0):
    ckpt = Checkpoint.from_model(model, seed, step)
    atomic_write(path, ckpt.to_bytes())
    return ckpt


def read_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(path, exc.strerror or str(exc)) from exc
    return Checkpoint.from_bytes(raw, str(path))


def restore(model, ckpt):
    """Load checkpoint state into ``model``; the variants must match."""
    if model.variant.digest() != ckpt.digest:
        raise ValidationError(
            f"checkpoint variant {ckpt.variant.name} ({ckpt.digest}) does not match the model "
            f"({model.variant.name}, {model.variant.digest()})"
        )
    model.load_state(ckpt.arrays)
    return model


def load_model(path):
    """Rebuild the model described by a checkpoint and load its state."""
    ckpt = read_checkpoint(path)
    return restore(CTDNet(ckpt.variant), ckpt), ckpt
