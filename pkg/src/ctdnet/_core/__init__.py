"""Kernel backend selection.

The compiled Cython module is used when it was built and importable; otherwise
the numpy implementation is used. Set ``CTDNET_KERNELS=python`` to force the
fallback at import time, or call :func:`use_backend` at runtime.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

kernels = _pykernels
BACKEND = "python"


def available_backends():
    return tuple(_BACKENDS)


def use_backend(name):
    """Switch the active kernel module. Returns the previous backend name."""
    global kernels, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable; have {available_backends()}")
    previous = BACKEND
    kernels = _BACKENDS[name]
    BACKEND = name
    return previous


def get_backend(name):
    return _BACKENDS[name]


_requested = os.environ.get("CTDNET_KERNELS", "").strip().lower()
if _requested:
    use_backend(_requested)
elif _ckernels is not None:
    use_backend("cython")
