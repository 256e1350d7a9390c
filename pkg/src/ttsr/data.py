"""Image I/O, the paired dataset layout, and LR generation.

Images are uint8 arrays of shape (H, W, 3). The network sees float tensors
(N, 3, H, W) in [-1, 1] via x / 127.5 - 1.
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from . import ops
from .autograd import Tensor, no_grad


def load_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_png(img, path):
    """Write an 8-bit RGB PNG atomically."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"save_png expects (H, W, 3) uint8, got {img.shape} {img.dtype}")
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".png-", suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(img, "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_tensor(imgs, dtype=np.float32):
    """uint8 (H, W, 3) or (N, H, W, 3) -> Tensor (N, 3, H, W) in [-1, 1]."""
    a = np.asarray(imgs)
    if a.ndim == 3:
        a = a[None]
    return Tensor((a.transpose(0, 3, 1, 2).astype(dtype) / dtype(127.5) - 1).astype(dtype))


def quantize(x):
    """[-1, 1] floats (N, 3, H, W) -> uint8 (N, H, W, 3), rounding half away from zero."""
    v = (np.asarray(x, dtype=np.float64) + 1.0) * 127.5
    v = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8).transpose(0, 2, 3, 1)


def to_u8(t):
    out = quantize(t.data if isinstance(t, Tensor) else t)
    return out[0] if out.shape[0] == 1 else out


def _check_div4(img, what):
    h, w = img.shape[:2]
    if h % 4 or w % 4:
        raise ValueError(f"{what}: extents {h}x{w} must be divisible by 4")


def downsample4(x):
    with no_grad():
        return ops.bicubic_resize(x, 0.25)


def upsample4(x):
    with no_grad():
        return ops.bicubic_resize(x, 4)


def make_lr(hr):
    """Bicubic /4 of a uint8 image, re-quantized to uint8."""
    _check_div4(hr, "make_lr")
    return to_u8(downsample4(to_tensor(hr, np.float64)))


def rgb_to_ycbcr(img):
    """Full-range BT.601. Input (H, W, 3) in [0, 255]; output float64 (H, W, 3)."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"rgb_to_ycbcr expects (H, W, 3), got {a.shape}")
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def rgb_to_y(img):
    return rgb_to_ycbcr(img)[..., 0]


class PairedDataset:
    """``root/input/<id>.png`` (HR ground truth) with ``root/ref/<id>.png``."""

    def __init__(self, root):
        self.root = Path(root)
        inp, ref = self.root / "input", self.root / "ref"
        if not inp.is_dir() or not ref.is_dir():
            raise FileNotFoundError(f"{root}: expected input/ and ref/ subdirectories")
        self.ids = sorted(p.stem for p in inp.glob("*.png"))
        if not self.ids:
            raise FileNotFoundError(f"{inp}: no PNG files")
        for i in self.ids:
            if not (ref / f"{i}.png").exists():
                raise FileNotFoundError(f"{ref}: missing reference {i}.png")
        self._cache = {}

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, k):
        if k not in self._cache:
            i = self.ids[k]
            hr = load_png(self.root / "input" / f"{i}.png")
            ref = load_png(self.root / "ref" / f"{i}.png")
            _check_div4(hr, f"input/{i}.png")
            _check_div4(ref, f"ref/{i}.png")
            self._cache[k] = (hr, ref)
        return self._cache[k]


class ArrayDataset:
    """In-memory list of (hr, ref) uint8 pairs with the same interface."""

    def __init__(self, pairs):
        self.pairs = list(pairs)
        if not self.pairs:
            raise ValueError("empty dataset")
        for hr, ref in self.pairs:
            _check_div4(hr, "hr")
            _check_div4(ref, "ref")

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, k):
        return self.pairs[k]


def synthetic_texture(rng, size, n_waves=4, max_freq=12):
    """Colored sum of random oriented sinusoids, uint8 (size, size, 3).
    Frequencies are in cycles per 64 px."""
    yy, xx = np.mgrid[0:size, 0:size] / 64.0
    img = np.zeros((size, size, 3))
    for _ in range(n_waves):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1, max_freq)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        img += wave[..., None] * rng.uniform(0.2, 1.0, size=3)
    img = (img - img.min()) / (np.ptp(img) + 1e-12)
    return np.round(16 + 223 * img).astype(np.uint8)


def synthetic_pairs(n, size=64, seed=0, shift=8, max_freq=12):
    """Texture pairs cut from one larger canvas: HR is the top-left crop, the
    reference the crop ``shift`` pixels down and right (a multiple of 4 lands
    on the search grid)."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        canvas = synthetic_texture(rng, size + shift, max_freq=max_freq)
        pairs.append((canvas[:size, :size].copy(), canvas[shift:, shift:].copy()))
    return pairs


def write_dataset(pairs, root):
    root = Path(root)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "ref").mkdir(parents=True, exist_ok=True)
    for i, (hr, ref) in enumerate(pairs):
        save_png(hr, root / "input" / f"{i:03d}.png")
        save_png(ref, root / "ref" / f"{i:03d}.png")
    return root
