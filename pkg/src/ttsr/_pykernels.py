"""Pure-numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same results. ``ttsr.kernels`` picks one of the two at import.
"""
import numpy as np


def out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = out_extent(h, k, stride, pad)
    wo = out_extent(w, k, stride, pad)
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        ie = i + stride * (ho - 1) + 1
        for j in range(k):
            je = j + stride * (wo - 1) + 1
            cols[:, :, i, j] = xp[:, :, i:ie:stride, j:je:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, c, h, w, k, stride, pad):
    n = cols.shape[0]
    ho = out_extent(h, k, stride, pad)
    wo = out_extent(w, k, stride, pad)
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        ie = i + stride * (ho - 1) + 1
        for j in range(k):
            je = j + stride * (wo - 1) + 1
            xp[:, :, i:ie:stride, j:je:stride] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


def gather_columns(v, idx):
    # v: (N, D, M), idx: (N, L) int64
    return np.take_along_axis(v, idx[:, None, :], axis=2)


def scatter_add_columns(g, idx, m):
    n, d, _ = g.shape
    out = np.zeros((n, d, m), dtype=g.dtype)
    for b in range(n):
        np.add.at(out[b].T, idx[b], g[b].T)
    return out


def row_max_argmax(r):
    # r: (N, Lq, Lk); argmax keeps the first (smallest) index on ties.
    idx = np.argmax(r, axis=2)
    val = np.take_along_axis(r, idx[:, :, None], axis=2)[:, :, 0]
    return val, idx.astype(np.int64)
