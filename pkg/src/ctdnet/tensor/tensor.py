"""Dense tensor with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that track
gradients record a closure mapping the output gradient onto gradients for
each parent; :meth:`Tensor.backward` walks that graph in reverse topological
order. Gradients accumulate additively, so callers reset them between steps.

Tensors may also be *meta* tensors: they carry a shape and no data. Every
operation propagates meta tensors by shape inference alone, which is how the
structural backbones are audited without allocating weights.
"""
from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeError, UsageError

_state = {"dtype": np.dtype(np.float32), "grad": True}


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype):
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported scalar type {dtype}")
    _state["dtype"] = dtype


@contextlib.contextmanager
def wide_precision():
    """Create new tensors in float64 inside the block (used by gradient checks)."""
    previous = _state["dtype"]
    _state["dtype"] = np.dtype(np.float64)
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextlib.contextmanager
def no_grad():
    previous = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = previous


def is_grad_enabled():
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_shape", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.array(data, dtype=dtype or _state["dtype"], copy=True)
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self._shape = arr.shape
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def meta(cls, shape, requires_grad=False, dtype=None):
        """Shape-only tensor; operations on it infer shapes without computing."""
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"tensor extents must be >= 1, got {shape}")
        t = cls.__new__(cls)
        t.data = None
        t._shape = shape
        t.grad = None
        t.requires_grad = bool(requires_grad)
        t._parents = ()
        t._backward = None
        t.op = "meta"
        return t

    @classmethod
    def _wrap(cls, data):
        # Adopt an array without copying or casting.
        t = cls.__new__(cls)
        t.data = data
        t._shape = data.shape
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t.op = "leaf"
        return t

    # -- introspection -------------------------------------------------------
    @property
    def shape(self):
        return self._shape

    @property
    def ndim(self):
        return len(self._shape)

    @property
    def size(self):
        return int(np.prod(self._shape, dtype=np.int64))

    @property
    def dtype(self):
        return None if self.data is None else self.data.dtype

    @property
    def is_meta(self):
        return self.data is None

    def numpy(self):
        if self.data is None:
            raise UsageError("meta tensor has no data")
        return self.data

    def item(self):
        if self.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self._shape}")
        return float(self.numpy().reshape(-1)[0])

    def detach(self):
        if self.data is None:
            return Tensor.meta(self._shape)
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        kind = "meta" if self.is_meta else str(self.data.dtype)
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self._shape}, {kind}{flag})"

    def __len__(self):
        return self._shape[0]

    # -- autodiff ------------------------------------------------------------
    def backward(self):
        """Propagate d(self)/d(ancestor) into ``.grad`` of every tracked ancestor."""
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not track gradients")
        if self.is_meta:
            raise UsageError("backward() called on a meta tensor")
        if self.size != 1:
            raise UsageError(f"backward() needs a single-element tensor, got shape {self._shape}")
        order = _topological(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def make_node(data, parents, backward, op):
    """Build an op output; graph bookkeeping only happens when a parent tracks."""
    out = Tensor._wrap(data)
    out.op = op
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def make_meta(shape, parents, op):
    out = Tensor.meta(shape)
    out.op = op
    out.requires_grad = _state["grad"] and any(p.requires_grad for p in parents)
    return out


def any_meta(*tensors):
    return any(t.data is None for t in tensors)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None and like.dtype is not None else None
    return Tensor._wrap(np.asarray(x, dtype=dtype or _state["dtype"]))


# -- elementwise algebra -----------------------------------------------------

def broadcast_shape(a, b):
    """Shape of a binary elementwise result; only extent-1 axes may broadcast."""
    if len(a) != len(b):
        raise ShapeError(f"rank mismatch: {a} vs {b}")
    out = []
    for x, y in zip(a, b):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"incompatible extents: {a} vs {b}")
        out.append(max(x, y))
    return tuple(out)


def unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _binary(a, b, fn, grads, op):
    scalar_b = not isinstance(b, Tensor)
    if scalar_b:
        b = as_tensor(b, like=a)
        if b.ndim == 0:
            b = Tensor._wrap(b.data.reshape((1,) * a.ndim))
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    shape = broadcast_shape(a.shape, b.shape)
    if any_meta(a, b):
        return make_meta(shape, (a, b), op)
    ad, bd = a.data, b.data

    def backward(g):
        ga, gb = grads(g, ad, bd)
        return (
            unbroadcast(ga, ad.shape) if ga is not None and a.requires_grad else None,
            unbroadcast(gb, bd.shape) if gb is not None and b.requires_grad else None,
        )

    return make_node(fn(ad, bd), (a, b), backward, op)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y: (g, g), "add")


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y: (g, -g), "sub")


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y: (g * y, g * x), "mul")


def div(a, b):
    return _binary(a, b, np.divide, lambda g, x, y: (g / y, -g * x / (y * y)), "div")


def _unary(x, fn, dfn, op):
    if x.is_meta:
        return make_meta(x.shape, (x,), op)
    xd = x.data
    out = fn(xd)
    return make_node(out, (x,), lambda g: (dfn(g, xd, out),), op)


def neg(x):
    return _unary(x, np.negative, lambda g, x_, y: -g, "neg")


def log(x):
    return _unary(x, np.log, lambda g, x_, y: g / x_, "log")


def abs_(x):
    # subgradient at 0 is 0
    return _unary(x, np.abs, lambda g, x_, y: g * np.sign(x_), "abs")


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0), lambda g, x_, y: g * (x_ > 0), "relu")


def sigmoid(x):
    def fwd(v):
        # split by sign so exp never overflows
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        e = np.exp(v[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    return _unary(x, fwd, lambda g, x_, y: g * y * (1 - y), "sigmoid")


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes only where the input was inside the range."""
    return _unary(
        x, lambda v: np.clip(v, lo, hi), lambda g, x_, y: g * ((x_ >= lo) & (x_ <= hi)), "clamp"
    )


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None):
    """Sum over ``axis`` (all axes by default), keeping reduced axes as extent 1."""
    axes = _norm_axes(axis, x.ndim)
    shape = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
    if x.is_meta:
        return make_meta(shape, (x,), "sum")
    in_shape = x.shape
    return make_node(
        x.data.sum(axis=axes, keepdims=True),
        (x,),
        lambda g: (np.broadcast_to(g, in_shape).copy(),),
        "sum",
    )


def mean(x, axis=None):
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axes), 1.0 / count)


def concat(tensors, axis=1):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"concat extents disagree off axis {axis}: {ref} vs {t.shape}")
    shape = list(ref)
    shape[axis] = sum(t.shape[axis] for t in tensors)
    if any_meta(*tensors):
        return make_meta(tuple(shape), tensors, "concat")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        index = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            parts.append(g[tuple(index)])
        return parts

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")

