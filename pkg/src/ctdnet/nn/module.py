"""Minimal module system: named parameters, buffers, train/eval mode."""
import numpy as np

from ..tensor.tensor import Tensor
from . import init


class Parameter(Tensor):
    """A tensor that always tracks gradients and is owned by a module."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True, dtype=np.asarray(data).dtype)

    @classmethod
    def create(cls, shape, fill):
        """Allocate via ``fill(shape)``, or shape-only inside :func:`init.meta_init`."""
        if init.is_meta_init():
            return cls.meta(shape, requires_grad=True)
        return cls(fill(shape))


class Module:
    _buffer_names = ()

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def children(self):
        return (m for _, m in self.named_children())

    def named_modules(self, prefix=""):
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}.{name}" if prefix else name
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffer_names:
            yield (f"{prefix}.{name}" if prefix else name), getattr(self, name)
        for name, child in self.named_children():
            yield from child.named_buffers(f"{prefix}.{name}" if prefix else name)

    def state_items(self):
        """Parameters then buffers, as (name, array) in canonical order."""
        items = [(n, p.data) for n, p in self.named_parameters()]
        items += list(self.named_buffers())
        return items

    def load_state(self, arrays):
        """Copy arrays (a name -> ndarray mapping) into parameters and buffers in place."""
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [n for n in list(params) + list(buffers) if n not in arrays]
        if missing:
            raise KeyError(f"state is missing {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for name, p in params.items():
            src = np.asarray(arrays[name])
            if src.shape != p.shape:
                raise ValueError(f"{name}: shape {src.shape} != {p.shape}")
            p.data[...] = src
        for name, buf in buffers.items():
            buf[...] = np.asarray(arrays[name])

    def count_parameters(self):
        return sum(p.size for p in self.parameters())

    def train(self, mode=True):
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to(self, dtype):
        """Cast parameters and buffers in place."""
        for p in self.parameters():
            if p.data is not None:
                p.data = p.data.astype(dtype)
        for _, m in self.named_modules():
            for name in m._buffer_names:
                buf = getattr(m, name)
                if buf is not None:
                    setattr(m, name, buf.astype(dtype))
        return self


class Sequential(Module):
    def __init__(self, *modules):
        super().__init__()
        self._order = []
        for i, m in enumerate(modules):
            setattr(self, str(i), m)
            self._order.append(str(i))

    def __iter__(self):
        return (getattr(self, n) for n in self._order)

    def __len__(self):
        return len(self._order)

    def __getitem__(self, i):
        return getattr(self, self._order[i])

    def forward(self, x):
        for m in self:
            x = m(x)
        return x
