"""Parameter initialisation with a package-level seeded generator."""
import contextlib

import numpy as np

from ..tensor.tensor import get_default_dtype

_rng = np.random.default_rng(0)
_meta = {"on": False}


def seed(value):
    """Reseed the generator used for every subsequent weight initialisation."""
    global _rng
    _rng = np.random.default_rng(value)


@contextlib.contextmanager
def meta_init():
    """Build modules with shape-only parameters (no weight allocation)."""
    previous = _meta["on"]
    _meta["on"] = True
    try:
        yield
    finally:
        _meta["on"] = previous


def is_meta_init():
    return _meta["on"]


def he_normal(shape, fan_in):
    std = np.sqrt(2.0 / fan_in)
    return (_rng.standard_normal(shape) * std).astype(get_default_dtype())


def constant(shape, value):
    return np.full(shape, value, dtype=get_default_dtype())
