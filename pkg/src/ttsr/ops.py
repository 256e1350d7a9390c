"""Differentiable operations on ``Tensor``.

Image tensors are (batch, channel, height, width), row-major. Each op computes
its forward result with numpy (or a kernel from ``ttsr.kernels``) and hands a
closure producing input gradients to ``make_node``.
"""
from __future__ import annotations

import functools
from fractions import Fraction

import numpy as np

from . import kernels
from .autograd import Tensor, as_tensor, make_node

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-12


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _coerce(a, b):
    # python scalars and arrays adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def cast(x, dtype):
    src = x.dtype
    return make_node(x.data.astype(dtype), (x,), lambda g: (g.astype(src),), "cast")


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _coerce(a, b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _coerce(a, b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b):
    a, b = _coerce(a, b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = _coerce(a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape))

    return make_node(out, (a, b), backward, "div")


def square(x):
    return make_node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def sqrt(x):
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def abs(x):  # noqa: A001
    # np.sign(0) == 0: zero residuals get subgradient 0
    return make_node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x):
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope=LEAKY_SLOPE):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x)
    raise ValueError(f"unknown activation {kind!r}")


# ------------------------------------------------------------------ reductions

def sum(x, axis=None, keepdims=False):  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


# ------------------------------------------------------------------- structure

def reshape(x, shape):
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return make_node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x, key):
    def backward(g):
        z = np.zeros_like(x.data)
        np.add.at(z, key, g)
        return (z,)

    return make_node(x.data[key], (x,), backward, "getitem")


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ValueError(f"concat shape mismatch: {ref} vs {t.shape}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                     lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def concat_channels(*tensors):
    return concat(tensors, axis=1)


def matmul(a, b):
    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, w, b=None):
    """x: (N, in), w: (out, in), b: (out,)."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight width {w.shape[1]}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_node(out, parents, backward, "linear")


# --------------------------------------------------------------- convolutions

def _check4(x, name):
    if x.ndim != 4:
        raise ValueError(f"{name} expects a (N, C, H, W) tensor, got shape {x.shape}")


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D cross-correlation via im2col + one matrix product.

    Output extent is floor((H + 2*pad - k) / stride) + 1.
    """
    _check4(x, "conv2d")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels, weight expects {cin_w}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d: stride must be >= 1 and pad >= 0")
    k = kh
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d: kernel {k} does not fit input {h}x{wd} with pad {pad}")
    pointwise = k == 1 and stride == 1 and pad == 0
    cols = x.data.reshape(n, cin, h * wd) if pointwise else kernels.im2col(x.data, k, stride, pad)
    w2 = w.data.reshape(cout, -1)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data[:, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g = g.reshape(n, cout, ho * wo)
        if n == 1:
            gw = g[0] @ cols[0].T
        else:
            gw = np.matmul(g, np.swapaxes(cols, 1, 2)).sum(axis=0)
        grads = [None, gw.reshape(w.shape)]
        if x.requires_grad:
            gcols = np.matmul(w2.T, g)
            grads[0] = gcols.reshape(x.shape) if pointwise else kernels.col2im(gcols, cin, h, wd, k, stride, pad)
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return make_node(out.reshape(n, cout, ho, wo), parents, backward, "conv2d")


def unfold(x, k, stride=1, pad=0):
    """Sliding k x k patches as columns: (N, C*k*k, L), channel-major rows."""
    _check4(x, "unfold")
    n, c, h, w = x.shape
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ValueError(f"unfold: patch {k} larger than input {h}x{w} (pad {pad})")
    cols = kernels.im2col(x.data, k, stride, pad)
    return make_node(cols, (x,), lambda g: (kernels.col2im(g, c, h, w, k, stride, pad),), "unfold")


@functools.lru_cache(maxsize=64)
def _fold_counts(h, w, k, stride, pad, dtype):
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    ones = np.ones((1, k * k, ho * wo), dtype=dtype)
    counts = kernels.col2im(ones, 1, h, w, k, stride, pad)
    counts.setflags(write=False)
    return counts


def fold(patches, out_hw, k, stride=1, pad=0, normalize=False):
    """Sum (or average, if ``normalize``) overlapping patch columns back into an image."""
    n, ckk, L = patches.shape
    h, w = out_hw
    if ckk % (k * k):
        raise ValueError(f"fold: {ckk} rows is not a multiple of k*k={k * k}")
    c = ckk // (k * k)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho <= 0 or wo <= 0 or ho * wo != L:
        raise ValueError(f"fold: {L} columns inconsistent with output {h}x{w}, k={k}, stride={stride}, pad={pad}")
    out = kernels.col2im(patches.data, c, h, w, k, stride, pad)
    if not normalize:
        return make_node(out, (patches,), lambda g: (kernels.im2col(np.ascontiguousarray(g), k, stride, pad),), "fold")
    counts = _fold_counts(h, w, k, stride, pad, np.dtype(patches.dtype).str)
    scale = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0).astype(patches.dtype)
    out = out * scale

    def backward(g):
        return (kernels.im2col(np.ascontiguousarray(g * scale), k, stride, pad),)

    return make_node(out, (patches,), backward, "fold")


def gather_columns(v, idx):
    """out[n, :, l] = v[n, :, idx[n, l]]; idx is an integer array, not a tensor."""
    idx = np.asarray(idx)
    if idx.ndim == 1:
        idx = np.broadcast_to(idx, (v.shape[0], idx.shape[0]))
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.shape[0] != v.shape[0]:
        raise ValueError(f"gather_columns: index batch {idx.shape[0]} != tensor batch {v.shape[0]}")
    m = v.shape[2]
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexError(f"gather_columns: index out of range [0, {m})")
    out = kernels.gather_columns(v.data, idx)
    return make_node(out, (v,), lambda g: (kernels.scatter_add_columns(g, idx, m),), "gather_columns")


# ------------------------------------------------------------------ resampling

def keys_cubic(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1, ((a + 2) * t - (a + 3)) * t * t + 1,
        np.where(t < 2, ((a * t - 5 * a) * t + 8 * a) * t - 4 * a, 0.0),
    )


@functools.lru_cache(maxsize=128)
def bicubic_matrix(n_in, n_out, scale):
    """(n_out, n_in) resampling matrix; center-aligned grid, clamped edges.

    When shrinking, the kernel is stretched by 1/scale so it also low-passes.
    """
    scale = Fraction(scale)
    support = 2.0 if scale >= 1 else 2.0 / float(scale)
    stretch = 1.0 if scale >= 1 else float(scale)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = float((Fraction(2 * i + 1, 2)) / scale) - 0.5
        lo = int(np.floor(center - support)) + 1
        taps = np.arange(lo, int(np.ceil(center + support)) + 1)
        wts = keys_cubic((center - taps) * stretch)
        np.add.at(m[i], np.clip(taps, 0, n_in - 1), wts)
        m[i] /= m[i].sum()
    m.setflags(write=False)
    return m


def bicubic_resize(x, scale):
    """Keys (a = -0.5) bicubic resize of the last two axes; extent floor(n * scale)."""
    scale = Fraction(scale).limit_denominator(1 << 16)
    if scale <= 0:
        raise ValueError("bicubic_resize: scale must be positive")
    h, w = x.shape[-2:]
    ho, wo = int(h * scale), int(w * scale)
    if ho == 0 or wo == 0:
        raise ValueError(f"bicubic_resize: {h}x{w} at scale {scale} has zero extent")
    if scale == 1:
        return make_node(x.data.copy(), (x,), lambda g: (g,), "bicubic_resize")
    mh = bicubic_matrix(h, ho, scale).astype(x.dtype)
    mw = bicubic_matrix(w, wo, scale).astype(x.dtype)
    out = mh @ x.data @ mw.T
    return make_node(out, (x,), lambda g: (mh.T @ g @ mw,), "bicubic_resize")


def pixel_shuffle(x, r):
    _check4(x, "pixel_shuffle")
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    oc = c // (r * r)
    out = x.data.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)
    return make_node(out, (x,), lambda g: (_space_to_depth(g, r),), "pixel_shuffle")


def _space_to_depth(a, r):
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def space_to_depth(x, r):
    _check4(x, "space_to_depth")
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"space_to_depth: {h}x{w} not divisible by {r}")
    return make_node(_space_to_depth(x.data, r), (x,),
                     lambda g: (g.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),),
                     "space_to_depth")


def pool2x2(x, kind="avg"):
    """2x2 pooling with stride 2; an odd trailing row/column is dropped."""
    _check4(x, "pool2x2")
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ValueError(f"pool2x2: input {h}x{w} too small")
    blocks = x.data[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2)
    if kind == "avg":
        out = blocks.mean(axis=(3, 5))

        def backward(g):
            z = np.zeros_like(x.data)
            z[:, :, :2 * h2, :2 * w2] = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
            return (z,)
    elif kind == "max":
        flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def backward(g):
            gz = np.zeros_like(flat)
            np.put_along_axis(gz, arg[..., None], g[..., None], axis=-1)
            z = np.zeros_like(x.data)
            z[:, :, :2 * h2, :2 * w2] = gz.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
            return (z,)
    else:
        raise ValueError(f"unknown pooling kind {kind!r}")
    return make_node(out, (x,), backward, "pool2x2")


def upsample_nearest(x, factor):
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return make_node(out, (x,), lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),), "upsample_nearest")


# -------------------------------------------------------------- attention bits

def l2_normalize(x, axis):
    """x / ||x|| along ``axis``; slices with norm below 1e-12 map to zero."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    ok = norm >= NORM_EPS
    inv = np.where(ok, 1.0 / np.where(ok, norm, 1.0), 0.0).astype(x.dtype)
    y = x.data * inv

    def backward(g):
        return ((g - y * np.sum(g * y, axis=axis, keepdims=True)) * inv,)

    return make_node(y, (x,), backward, "l2_normalize")


def max_with_argmax(x):
    """Row maxima over the last axis of an (N, Lq, Lk) tensor and their indices.

    Ties resolve to the smallest index; the gradient goes to the argmax entry.
    """
    if x.ndim != 3 or x.shape[2] == 0:
        raise ValueError(f"max_with_argmax expects a non-empty (N, Lq, Lk) tensor, got {x.shape}")
    val, idx = kernels.row_max_argmax(x.data)

    def backward(g):
        z = np.zeros_like(x.data)
        np.put_along_axis(z, idx[:, :, None], g[:, :, None], axis=2)
        return (z,)

    return make_node(val, (x,), backward, "max_with_argmax"), idx
