"""Minimal module system: parameter registration, naming, init, layers."""
import numpy as np

from . import ops
from .autograd import DEFAULT_DTYPE, Parameter


def he_normal(rng, shape, fan_in, dtype=DEFAULT_DTYPE):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    """Parameters and submodules are discovered from attributes in assignment order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item
            elif isinstance(val, dict):
                for k, item in val.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix=""):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def to(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def num_params(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict:
            unknown = sorted(set(state) - set(own))
            if unknown:
                raise KeyError(f"unknown parameter name {unknown[0]!r}")
        for name, p in own.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.grad = np.zeros_like(p.data)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin, cout, k=3, stride=1, pad=None, rng=None, bias=True):
        rng = np.random.default_rng(0) if rng is None else rng
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Parameter(he_normal(rng, (cout, cin, k, k), cin * k * k))
        self.bias = Parameter(np.zeros(cout, dtype=DEFAULT_DTYPE)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, fin, fout, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = Parameter(he_normal(rng, (fout, fin), fin))
        self.bias = Parameter(np.zeros(fout, dtype=DEFAULT_DTYPE))

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


def zero_module(module):
    """Set every parameter of ``module`` to zero (used by identity tests)."""
    for p in module.parameters():
        p.data[...] = 0
    return module
