"""Plain-text tensor dumps: a "B C H W" header line, then row-major decimals."""
import numpy as np

from ..errors import DataIOError, ShapeError
from .tensor import Tensor


def dump_tensor(path, tensor):
    data = tensor.numpy() if isinstance(tensor, Tensor) else np.asarray(tensor)
    if data.ndim != 4:
        raise ShapeError(f"dump format needs a 4-D tensor, got {data.shape}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(" ".join(str(s) for s in data.shape) + "\n")
        np.savetxt(fh, data.reshape(-1, data.shape[-1]), fmt="%.9g")


def load_tensor(path, dtype=None):
    try:
        with open(path, encoding="ascii") as fh:
            header = fh.readline().split()
            values = np.array(fh.read().split(), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataIOError(path, f"unreadable tensor dump ({exc})") from exc
    if len(header) != 4:
        raise DataIOError(path, "header must be 'B C H W'")
    shape = tuple(int(s) for s in header)
    if values.size != int(np.prod(shape)):
        raise DataIOError(path, f"expected {int(np.prod(shape))} values, found {values.size}")
    return Tensor(values.reshape(shape), dtype=dtype)
