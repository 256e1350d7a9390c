# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef inline Py_ssize_t _extent(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad) nogil:
    return (size + 2 * pad - k) // stride + 1


cdef inline void _col_range(Py_ssize_t j, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t w,
                            Py_ssize_t wo, Py_ssize_t* lo, Py_ssize_t* hi) nogil:
    # output columns ox with 0 <= ox*stride + j - pad < w
    cdef Py_ssize_t a = pad - j
    lo[0] = 0 if a <= 0 else (a + stride - 1) // stride
    a = w - 1 + pad - j
    hi[0] = 0 if a < 0 else min(wo, a // stride + 1)
    if hi[0] < lo[0]:
        hi[0] = lo[0]


def _im2col(floating[:, :, :, ::1] x, floating[:, :, ::1] cols,
            Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = _extent(h, k, stride, pad), wo = _extent(w, k, stride, pad)
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, off, row, col, lo, hi
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        _col_range(j, stride, pad, w, wo, &lo, &hi)
                        off = j - pad
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            dst = &cols[b, row, oy * wo]
                            if iy < 0 or iy >= h:
                                for ox in range(wo):
                                    dst[ox] = 0
                                continue
                            src = &x[b, ch, iy, 0]
                            for ox in range(lo):
                                dst[ox] = 0
                            if stride == 1:
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox + off]
                            else:
                                for ox in range(lo, hi):
                                    dst[ox] = src[ox * stride + off]
                            for ox in range(hi, wo):
                                dst[ox] = 0


def _col2im(floating[:, :, ::1] cols, floating[:, :, :, ::1] x,
            Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = _extent(h, k, stride, pad), wo = _extent(w, k, stride, pad)
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, off, row, lo, hi
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        _col_range(j, stride, pad, w, wo, &lo, &hi)
                        off = j - pad
                        for oy in range(ho):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            src = &cols[b, row, oy * wo]
                            dst = &x[b, ch, iy, 0]
                            if stride == 1:
                                for ox in range(lo, hi):
                                    dst[ox + off] += src[ox]
                            else:
                                for ox in range(lo, hi):
                                    dst[ox * stride + off] += src[ox]


def _gather(floating[:, :, ::1] v, const cnp.int64_t[:, ::1] idx, floating[:, :, ::1] out):
    cdef Py_ssize_t n = v.shape[0], d = v.shape[1], L = idx.shape[1]
    cdef Py_ssize_t b, r, l
    with nogil:
        for b in range(n):
            for r in range(d):
                for l in range(L):
                    out[b, r, l] = v[b, r, idx[b, l]]


def _scatter_add(floating[:, :, ::1] g, const cnp.int64_t[:, ::1] idx, floating[:, :, ::1] out):
    cdef Py_ssize_t n = g.shape[0], d = g.shape[1], L = idx.shape[1]
    cdef Py_ssize_t b, r, l
    with nogil:
        for b in range(n):
            for r in range(d):
                for l in range(L):
                    out[b, r, idx[b, l]] += g[b, r, l]


def _row_max_argmax(floating[:, :, ::1] r, floating[:, ::1] val, cnp.int64_t[:, ::1] idx):
    cdef Py_ssize_t n = r.shape[0], lq = r.shape[1], lk = r.shape[2]
    cdef Py_ssize_t b, i, j, best
    cdef floating m
    with nogil:
        for b in range(n):
            for i in range(lq):
                best = 0
                m = r[b, i, 0]
                for j in range(1, lk):
                    # strict comparison keeps the smallest index on ties
                    if r[b, i, j] > m:
                        m = r[b, i, j]
                        best = j
                val[b, i] = m
                idx[b, i] = best


def im2col(x, k, stride, pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = _extent(h, k, stride, pad)
    wo = _extent(w, k, stride, pad)
    cols = np.empty((n, c * k * k, ho * wo), dtype=x.dtype)
    _im2col(x, cols, k, stride, pad)
    return cols


def col2im(cols, c, h, w, k, stride, pad):
    cols = np.ascontiguousarray(cols)
    x = np.zeros((cols.shape[0], c, h, w), dtype=cols.dtype)
    _col2im(cols, x, k, stride, pad)
    return x


def gather_columns(v, idx):
    v = np.ascontiguousarray(v)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = np.empty((v.shape[0], v.shape[1], idx.shape[1]), dtype=v.dtype)
    _gather(v, idx, out)
    return out


def scatter_add_columns(g, idx, m):
    g = np.ascontiguousarray(g)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = np.zeros((g.shape[0], g.shape[1], m), dtype=g.dtype)
    _scatter_add(g, idx, out)
    return out


def row_max_argmax(r):
    r = np.ascontiguousarray(r)
    val = np.empty(r.shape[:2], dtype=r.dtype)
    idx = np.empty(r.shape[:2], dtype=np.int64)
    _row_max_argmax(r, val, idx)
    return val, idx
