"""Texture transformer: learnable texture extraction, relevance search, hard and
soft attention, and propagation of the smallest-scale search to finer levels.

Level numbering follows the texture extractor taps: level 3 is the coarsest
(1/4 of the up-sampled LR image, the grid the search runs on), level 1 the
finest. Generator scale 1x uses level 3, 2x uses level 2, 4x uses level 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autograd import Tensor
from .nn import Conv2d, Module

LEVEL_CHANNELS = {1: 64, 2: 128, 3: 256}


def level_channels(width=64):
    """Channels per level for an extractor whose first layer has ``width`` maps."""
    return {1: width, 2: 2 * width, 3: 4 * width}
LEVEL_FACTOR = {3: 1, 2: 2, 1: 4}
SCALE_LEVEL = {1: 3, 2: 2, 4: 1}


@dataclass(frozen=True)
class PatchGeometry:
    """Unfold geometry of the search grid; ``scaled`` gives the finer levels."""

    patch: int = 3
    stride: int = 1
    pad: int = 1

    def scaled(self, factor):
        return PatchGeometry(self.patch * factor, self.stride * factor, self.pad * factor)

    def grid(self, h, w):
        return ((h + 2 * self.pad - self.patch) // self.stride + 1,
                (w + 2 * self.pad - self.patch) // self.stride + 1)


DEFAULT_GEOMETRY = PatchGeometry()


@dataclass
class TextureFeatures:
    level1: Tensor
    level2: Tensor
    level3: Tensor

    def __getitem__(self, level):
        return (self.level1, self.level2, self.level3)[level - 1]


@dataclass
class RelevanceMatrix:
    r: Tensor  # (N, Lq, Lk)
    geometry: PatchGeometry
    query_grid: tuple
    key_grid: tuple


@dataclass
class AttentionMaps:
    hard: np.ndarray  # (N, Lq) indices into key patches
    soft: Tensor  # (N, 1, hq, wq)


@dataclass
class TransferredTexture:
    level1: Tensor
    level2: Tensor
    level3: Tensor

    def __getitem__(self, level):
        return (self.level1, self.level2, self.level3)[level - 1]


class LTE(Module):
    """Learnable texture extractor: five 3x3 convs, two 2x2 pools, taps after layers 0, 3, 6."""

    def __init__(self, rng=None, pool="avg", width=64):
        rng = np.random.default_rng(0) if rng is None else rng
        self.pool = pool
        c1, c2, c3 = level_channels(width).values()
        self.conv0 = Conv2d(3, c1, rng=rng)
        self.conv1 = Conv2d(c1, c1, rng=rng)
        self.conv3 = Conv2d(c1, c2, rng=rng)
        self.conv4 = Conv2d(c2, c2, rng=rng)
        self.conv6 = Conv2d(c2, c3, rng=rng)

    def forward(self, img):
        if img.ndim != 4 or img.shape[1] != 3:
            raise ValueError(f"LTE expects (N, 3, H, W) images, got {img.shape}")
        if img.shape[2] % 4 or img.shape[3] % 4:
            raise ValueError(f"LTE input extents {img.shape[2:]} must be divisible by 4")
        lv1 = ops.relu(self.conv0(img))
        x = ops.pool2x2(ops.relu(self.conv1(lv1)), self.pool)
        lv2 = ops.relu(self.conv3(x))
        x = ops.pool2x2(ops.relu(self.conv4(lv2)), self.pool)
        lv3 = ops.relu(self.conv6(x))
        return TextureFeatures(lv1, lv2, lv3)


def lte_forward(img, lte):
    return lte(img)


def relevance_embedding(q, k, patch=3, stride=1, pad=None):
    """Normalized inner products between every query patch and every key patch."""
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"relevance_embedding: channel mismatch {q.shape[1]} vs {k.shape[1]}")
    geom = PatchGeometry(patch, stride, patch // 2 if pad is None else pad)
    qn = ops.l2_normalize(ops.unfold(q, geom.patch, geom.stride, geom.pad), axis=1)
    kn = ops.l2_normalize(ops.unfold(k, geom.patch, geom.stride, geom.pad), axis=1)
    r = ops.matmul(ops.transpose(qn, (0, 2, 1)), kn)
    return RelevanceMatrix(r, geom, geom.grid(*q.shape[2:]), geom.grid(*k.shape[2:]))


def attention_maps(rel):
    """Hard index (argmax, smallest index on ties) and soft confidence (max) per query."""
    soft, hard = ops.max_with_argmax(rel.r)
    hq, wq = rel.query_grid
    return AttentionMaps(hard, ops.reshape(soft, (soft.shape[0], 1, hq, wq)))


def transfer_level(v, hard, geometry, query_grid, level):
    """Gather the hard-selected patches of one V level and fold them onto the LR grid."""
    f = LEVEL_FACTOR[level]
    g = geometry.scaled(f)
    out_hw = _grid_to_extent(query_grid, geometry, f)
    cols = ops.unfold(v, g.patch, g.stride, g.pad)
    return ops.fold(ops.gather_columns(cols, hard), out_hw, g.patch, g.stride, g.pad, normalize=True)


def _grid_to_extent(grid, geometry, factor):
    # inverse of PatchGeometry.grid at the coarse level, then scaled
    hq, wq = grid
    g = geometry
    return ((hq - 1) * g.stride + g.patch - 2 * g.pad) * factor, ((wq - 1) * g.stride + g.patch - 2 * g.pad) * factor


def transfer(v, hard, geometry=DEFAULT_GEOMETRY, query_grid=None):
    """Transferred texture T at all three levels from one level-3 hard map."""
    if query_grid is None:
        raise ValueError("transfer needs the query grid extents")
    return TransferredTexture(*(transfer_level(v[lv], hard, geometry, query_grid, lv) for lv in (1, 2, 3)))


def soft_fuse(f, t, s, conv, upsample="nearest"):
    """F + Conv(Concat(F, T)) * S, with S brought up to F's resolution."""
    if f.shape[0] != t.shape[0] or f.shape[2:] != t.shape[2:]:
        raise ValueError(f"soft_fuse: F {f.shape} and T {t.shape} differ in batch/extent")
    factor = f.shape[2] // s.shape[2]
    if factor < 1 or s.shape[2] * factor != f.shape[2] or s.shape[3] * factor != f.shape[3]:
        raise ValueError(f"soft_fuse: soft map {s.shape[2:]} does not tile features {f.shape[2:]}")
    if upsample == "nearest":
        s_up = ops.upsample_nearest(s, factor)
    elif upsample == "bicubic":
        s_up = ops.bicubic_resize(s, factor)
    else:
        raise ValueError(f"unknown soft-map upsampling {upsample!r}")
    return f + conv(ops.concat_channels(f, t)) * s_up


def degrade_pair(lr, ref):
    """LR up-sampled x4, and Ref down- then up-sampled x4 (same kernel both ways)."""
    return ops.bicubic_resize(lr, 4), ops.bicubic_resize(ops.bicubic_resize(ref, 0.25), 4)


@dataclass
class SearchState:
    """Search results computed once on level 3 and reused by the finer levels."""

    relevance: RelevanceMatrix | None = None
    maps: AttentionMaps | None = None
    texture: TransferredTexture | None = None
    query: TextureFeatures | None = None
    key: TextureFeatures | None = None
    value: TextureFeatures | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ready(self):
        return self.maps is not None


def search(lte, lr_up, ref_du, ref, geometry=DEFAULT_GEOMETRY, state=None):
    state = SearchState() if state is None else state
    state.query = lte(lr_up)
    state.key = lte(ref_du)
    state.value = lte(ref)
    state.relevance = relevance_embedding(state.query.level3, state.key.level3,
                                          geometry.patch, geometry.stride, geometry.pad)
    state.maps = attention_maps(state.relevance)
    state.texture = transfer(state.value, state.maps.hard, geometry, state.relevance.query_grid)
    return state


def texture_transformer_forward(lr_up, ref_du, ref, f, level, state, lte, fuse_conv,
                                geometry=DEFAULT_GEOMETRY, upsample="nearest"):
    """One texture transformer at ``level``; the level-3 call fills ``state``."""
    if not state.ready:
        if level != 3:
            raise RuntimeError(f"texture transformer at level {level} needs the cached level-3 relevance")
        search(lte, lr_up, ref_du, ref, geometry, state)
    return soft_fuse(f, state.texture[level], state.maps.soft, fuse_conv, upsample)


class TextureTransformer(Module):
    """Owns the fusion conv (C + C_T -> C) for one level."""

    def __init__(self, channels, level, rng=None, upsample="nearest", lte_width=64):
        self.level = level
        self.upsample = upsample
        self.fuse = Conv2d(channels + level_channels(lte_width)[level], channels, rng=rng)

    def forward(self, f, state):
        if not state.ready:
            raise RuntimeError(f"texture transformer at level {self.level} called before the search")
        return soft_fuse(f, state.texture[self.level], state.maps.soft, self.fuse, self.upsample)
