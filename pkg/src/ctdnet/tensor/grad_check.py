"""Finite-difference verification of analytic gradients."""
import numpy as np

from ..errors import NumericalError
from .tensor import Tensor, no_grad


def grad_check(fn, inputs, params=(), eps=1e-6, floor=1e-6, max_entries=24, seed=0):
    """Max relative error between backprop gradients and central differences.

    ``fn(*inputs)`` must return a Tensor. Its output is reduced to a scalar
    through a fixed random projection so that no gradient entry cancels by
    symmetry. Every tensor in ``inputs`` and ``params`` is checked; tensors
    larger than ``max_entries`` are checked on a seeded random subset.

    The check runs in float64: tensor data is promoted for the duration of the
    call and restored afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    inputs = list(inputs)
    targets = [t for t in inputs + list(params) if isinstance(t, Tensor)]
    saved = [(t, t.data, t.requires_grad, t.grad) for t in targets]
    rng = np.random.default_rng(seed)
    try:
        for t in targets:
            t.data = np.array(t.data, dtype=np.float64)
            t.requires_grad = True
            t.grad = None
        out = fn(*inputs)
        weights = rng.standard_normal(out.shape)
        loss = (out * weights).sum()
        _check_finite(loss.data, "forward output")
        loss.backward()

        def objective():
            with no_grad():
                return float((fn(*inputs).data * weights).sum())

        worst = 0.0
        for t in targets:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            _check_finite(analytic, "analytic gradient")
            flat = t.data.reshape(-1)
            n = flat.size
            picks = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
            for i in picks:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = objective()
                flat[i] = orig - eps
                f_minus = objective()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2 * eps)
                _check_finite(numeric, "finite difference")
                a = analytic.reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
        return worst
    finally:
        for t, data, rg, grad in saved:
            t.data, t.requires_grad, t.grad = data, rg, grad


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what} during gradient check")
