"""Timings: batched relevance kernel vs. a loop-based oracle, hard-attention
transfer, and the compiled vs. pure-numpy kernel backends."""
from __future__ import annotations

import csv
import io
import time

import numpy as np

from . import kernels
from .autograd import Tensor, no_grad
from .texture import LTE, PatchGeometry, attention_maps, relevance_embedding, transfer, TextureFeatures

BENCH_HEADER = ("op", "backend", "lq", "lk", "seconds", "throughput")


def naive_relevance(q, k, patch=3, stride=1, pad=1):
    """Python double loop over (query, key) patch pairs. q, k: (C, H, W) arrays."""
    def patches(x):
        c, h, w = x.shape
        xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
        xp[:, pad:pad + h, pad:pad + w] = x
        out = []
        for i in range(0, h + 2 * pad - patch + 1, stride):
            for j in range(0, w + 2 * pad - patch + 1, stride):
                v = xp[:, i:i + patch, j:j + patch].reshape(-1)
                n = np.sqrt(np.dot(v, v))
                out.append(v / n if n >= 1e-12 else np.zeros_like(v))
        return out

    qs, ks = patches(q), patches(k)
    r = np.empty((len(qs), len(ks)))
    for a, qa in enumerate(qs):
        for b, kb in enumerate(ks):
            r[a, b] = np.dot(qa, kb)
    return r


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _grid_feature(rng, c, s):
    return rng.standard_normal((1, c, s, s)).astype(np.float32)


def bench_relevance(size, channels=16, repeats=3, naive=True, seed=0):
    """Rows for the batched kernel (and the naive oracle) on a size x size grid."""
    rng = np.random.default_rng(seed)
    q = Tensor(_grid_feature(rng, channels, size))
    k = Tensor(_grid_feature(rng, channels, size))
    lq = lk = size * size
    rows = []
    with no_grad():
        t = _best_of(lambda: attention_maps(relevance_embedding(q, k)), repeats)
    rows.append(("relevance", kernels.BACKEND, lq, lk, t, lq * lk / t))
    if naive:
        t = _best_of(lambda: naive_relevance(q.data[0], k.data[0]), 1)
        rows.append(("relevance", "naive", lq, lk, t, lq * lk / t))
    return rows


def bench_transfer(size, width=16, repeats=3, seed=0):
    rng = np.random.default_rng(seed)
    feats = TextureFeatures(*(Tensor(_grid_feature(rng, c, size * f))
                              for c, f in ((width, 4), (2 * width, 2), (4 * width, 1))))
    hard = rng.integers(0, size * size, size=(1, size * size))
    geom = PatchGeometry()
    with no_grad():
        t = _best_of(lambda: transfer(feats, hard, geom, (size, size)), repeats)
    lq = size * size
    return [("transfer", kernels.BACKEND, lq, lq, t, lq / t)]


def bench_backends(size=32, channels=64, repeats=3, seed=0):
    """im2col/col2im and the full search at one size, once per available backend."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, channels, size, size)).astype(np.float32)
    lte = LTE(np.random.default_rng(seed), width=16)
    img = Tensor(rng.uniform(-1, 1, (1, 3, 4 * size, 4 * size)).astype(np.float32))
    rows = []
    previous = kernels.BACKEND
    try:
        for name in kernels.available_backends():
            kernels.use_backend(name)
            cols = kernels.im2col(x, 3, 1, 1)
            L = size * size
            t = _best_of(lambda: kernels.im2col(x, 3, 1, 1), repeats)
            rows.append(("im2col", name, L, 1, t, L / t))
            t = _best_of(lambda: kernels.col2im(cols, channels, size, size, 3, 1, 1), repeats)
            rows.append(("col2im", name, L, 1, t, L / t))
            with no_grad():
                f = lte(img).level3
                t = _best_of(lambda: attention_maps(relevance_embedding(f, f)), repeats)
            rows.append(("search", name, L, L, t, L * L / t))
    finally:
        kernels.use_backend(previous)
    return rows


def run(sizes=(1, 8, 16, 32), channels=16, repeats=3, naive=True, backends=True):
    rows = []
    for s in sizes:
        rows += bench_relevance(s, channels, repeats, naive)
        rows += bench_transfer(s, repeats=repeats)
    if backends:
        rows += bench_backends(repeats=repeats)
    return rows


def rows_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for op, backend, lq, lk, sec, thr in rows:
        w.writerow([op, backend, lq, lk, f"{sec:.6g}", f"{thr:.6g}"])
    return buf.getvalue()


def speedup(rows, lq):
    """Naive-oracle time over batched time for the relevance rows at ``lq``."""
    t = {b: s for op, b, q, _, s, _ in rows if op == "relevance" and q == lq}
    batched = [s for b, s in t.items() if b != "naive"]
    return t["naive"] / min(batched)
