"""Tensor value type and the reverse-mode tape.

A ``Tensor`` wraps a numpy array. Operations in ``ttsr.ops`` record a node on
the tape when any input requires gradient; ``Tensor.backward`` walks the tape
in reverse topological order once and then releases it.
"""
from __future__ import annotations

import contextlib
import os

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_debug = bool(os.environ.get("TTSR_DEBUG"))


class TapeError(RuntimeError):
    pass


def set_debug(flag):
    """Check every op output for NaN/Inf and raise ``FloatingPointError``."""
    global _debug
    _debug = bool(flag)


def debug_enabled():
    return _debug


def is_grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        from . import ops
        return ops.cast(self, dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # arithmetic sugar, implemented in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.size != 1:
                raise TapeError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        run_backward(self, np.asarray(grad, dtype=self.dtype))


class Parameter(Tensor):
    """Trainable leaf tensor with a stable name and an always-present gradient."""

    __slots__ = ("name",)

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_node(data, parents, backward, op):
    """Wrap ``data`` as an op output; record it on the tape if needed.

    ``backward(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    if _debug and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._consumed:
            raise TapeError(f"tape through {node._op} was already consumed by an earlier backward")
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def run_backward(root, seed, wrt=None):
    """Propagate ``seed`` from ``root`` through the tape.

    With ``wrt=None`` leaf gradients are accumulated into ``.grad``. With a
    list of tensors, their gradients are returned instead and no ``.grad``
    field is touched. Either way the tape is released afterwards.
    """
    if not root.requires_grad:
        if wrt is None:
            return None
        return [np.zeros_like(t.data) for t in wrt]
    order = _topo_order(root)
    grads = {id(root): seed}
    wanted = None if wrt is None else {id(t) for t in wrt}
    collected = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if wanted is not None and id(node) in wanted:
            collected[id(node)] = g
        if node._backward is None:
            if wanted is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise TapeError(f"{node._op} returned grad {pg.shape} for input {parent.shape}")
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
    if wanted is not None:
        return [collected.get(id(t), np.zeros_like(t.data)) for t in wrt]
    return None


def grad(output, inputs, seed=None):
    """Gradients of scalar ``output`` w.r.t. ``inputs`` without touching ``.grad``."""
    if seed is None:
        if output.size != 1:
            raise TapeError("grad needs a scalar output or an explicit seed")
        seed = np.ones_like(output.data)
    return run_backward(output, np.asarray(seed, dtype=output.dtype), wrt=list(inputs))
