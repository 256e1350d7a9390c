"""Diagnostics: reference-similarity evaluation table and the transferred-image view."""
from __future__ import annotations

import csv
import io

import numpy as np

from . import ops
from .autograd import no_grad
from .data import quantize, to_tensor, to_u8, upsample4
from .metrics import psnr, ssim
from .texture import DEFAULT_GEOMETRY, degrade_pair, search

LR_LEVEL = "LR"
TABLE_HEADER = ("level", "psnr", "ssim", "n")


def lr_as_ref(lr_u8):
    """Reference for the ``LR`` level: the bicubic x4 up-sampled LR image."""
    return to_u8(upsample4(to_tensor(lr_u8, np.float64)))


def super_resolve(model, lr_u8, ref_u8):
    with no_grad():
        sr, _ = model(to_tensor(lr_u8, model_dtype(model)), to_tensor(ref_u8, model_dtype(model)))
    return quantize(sr.data)[0]


def model_dtype(model):
    params = model.parameters()
    return params[0].dtype.type if params else np.float32


def relevance_level_eval(model, items, levels, sr_fn=None):
    """Mean Y-channel PSNR/SSIM per reference level.

    ``items`` is a list of dicts with ``lr`` and ``hr`` uint8 images and a
    ``refs`` dict keyed by level name; level ``LR`` needs no entry (the LR
    image up-sampled is used). Returns rows ``(level, psnr, ssim, n)`` in
    ``levels`` order.
    """
    if not items:
        raise ValueError("relevance_level_eval: no test items")
    sr_fn = sr_fn or (lambda lr, ref: super_resolve(model, lr, ref))
    rows = []
    for level in levels:
        ps, ss = [], []
        for k, item in enumerate(items):
            if level == LR_LEVEL:
                ref = lr_as_ref(item["lr"])
            elif level in item.get("refs", {}):
                ref = item["refs"][level]
            else:
                raise KeyError(f"test item {k}: missing reference variant {level!r}")
            sr = sr_fn(item["lr"], ref)
            ps.append(psnr(sr, item["hr"]))
            ss.append(ssim(sr, item["hr"]))
        rows.append((level, float(np.mean(np.asarray(ps, dtype=np.float64))),
                     float(np.mean(np.asarray(ss, dtype=np.float64))), len(items)))
    return rows


def table_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for level, p, s, n in rows:
        w.writerow([level, f"{p:.6f}", f"{s:.6f}", n])
    return buf.getvalue()


def transferred_image(lr, ref, lte, geometry=DEFAULT_GEOMETRY):
    """Float (N, 3, 4h, 4w): Ref image patches picked by the level-3 hard map,
    folded with overlap averaging. ``lr`` and ``ref`` are [-1, 1] tensors."""
    if ref.shape[2] % 4 or ref.shape[3] % 4:
        raise ValueError(f"viz-transfer: Ref extents {ref.shape[2:]} must be divisible by 4")
    if lr.shape[0] != ref.shape[0]:
        raise ValueError("viz-transfer: LR and Ref batch sizes differ")
    with no_grad():
        lr_up, ref_du = degrade_pair(lr, ref)
        st = search(lte, lr_up, ref_du, ref, geometry)
        g = geometry.scaled(4)
        cols = ops.unfold(ref, g.patch, g.stride, g.pad)
        out = ops.fold(ops.gather_columns(cols, st.maps.hard), lr_up.shape[2:], g.patch, g.stride, g.pad,
                       normalize=True)
    if out.shape != lr_up.shape:
        raise ValueError(f"viz-transfer: geometry mismatch, got {out.shape} for LR up {lr_up.shape}")
    return out.data, st.maps.hard


def transferred_image_viz(lr_u8, ref_u8, model):
    """uint8 transferred-original image; ``model`` is a generator or an LTE."""
    lte = getattr(model, "lte", model)
    dt = model_dtype(lte)
    img, _ = transferred_image(to_tensor(lr_u8, dt), to_tensor(ref_u8, dt), lte)
    return quantize(img)[0]
