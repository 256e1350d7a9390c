"""Generator with stacked texture transformers and cross-scale feature
integration (CSFI), the WGAN critic, and parameter counting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Linear, Module
from .texture import (DEFAULT_GEOMETRY, LTE, SCALE_LEVEL, TextureTransformer,
                      degrade_pair, search)


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 64
    blocks: tuple = (16, 16, 8, 4)
    scales: tuple = (1, 2, 4)  # generator scales that carry a texture transformer
    csfi: bool = True
    lte_pool: str = "avg"
    soft_upsample: str = "nearest"
    seed: int = 0
    lte_width: int = 64  # texture extractor level-1 channels (levels 2, 3: x2, x4)

    def __post_init__(self):
        if self.base_channels <= 0 or self.lte_width <= 0:
            raise ValueError("base_channels and lte_width must be positive")
        if len(self.blocks) != 4 or any(b < 0 for b in self.blocks):
            raise ValueError("blocks needs four non-negative counts (stage 0..3)")
        if not set(self.scales) <= {1, 2, 4}:
            raise ValueError(f"transformer scales must be a subset of {{1, 2, 4}}, got {self.scales}")
        object.__setattr__(self, "scales", tuple(sorted(set(self.scales))))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))


# He-normal alone doubles activation variance per block; 16-block stacks
# would start at ~1e11. Convs feeding a skip are shrunk at init instead.
RES_INIT_SCALE = 0.1
# A full-scale output layer starts with L1 near 1 against [-1, 1] targets; the
# first Adam steps then shrink everything and can leave the tail relu dead.
OUT_INIT_SCALE = 0.1


class ResBlock(Module):
    """x + conv(relu(conv(x))); no normalization, nothing after the skip."""

    def __init__(self, c, rng):
        self.conv1 = Conv2d(c, c, rng=rng)
        self.conv2 = Conv2d(c, c, rng=rng)
        self.conv2.weight.data *= RES_INIT_SCALE

    def forward(self, x):
        return x + self.conv2(ops.relu(self.conv1(x)))


def residual_block(x, block):
    if x.shape[1] != block.conv1.weight.shape[1]:
        raise ValueError(f"residual_block: {x.shape[1]} channels, block expects {block.conv1.weight.shape[1]}")
    return block(x)


class ResGroup(Module):
    """RB x n followed by a conv; the caller adds the long skip."""

    def __init__(self, c, n, rng):
        self.blocks = [ResBlock(c, rng) for _ in range(n)]
        self.conv = Conv2d(c, c, rng=rng)
        self.conv.weight.data *= RES_INIT_SCALE

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return self.conv(x)


class Upsample(Module):
    """Bicubic up-sampling followed by a 1x1 conv."""

    def __init__(self, c, factor, rng):
        self.factor = factor
        self.conv = Conv2d(c, c, k=1, rng=rng)

    def forward(self, x):
        return self.conv(ops.bicubic_resize(x, self.factor))


class Downsample(Module):
    """Strided 3x3 convs: one for /2, two (with a relu between) for /4."""

    def __init__(self, c, factor, rng):
        self.convs = [Conv2d(c, c, stride=2, rng=rng) for _ in range({2: 1, 4: 2}[factor])]

    def forward(self, x):
        for i, conv in enumerate(self.convs):
            x = conv(ops.relu(x) if i else x)
        return x


class CSFI2(Module):
    def __init__(self, c, rng):
        self.up12 = Upsample(c, 2, rng)
        self.down21 = Downsample(c, 2, rng)
        self.merge1 = Conv2d(2 * c, c, rng=rng)
        self.merge2 = Conv2d(2 * c, c, rng=rng)

    def forward(self, x1, x2):
        _check_ratio(x1, x2, 2)
        y1 = ops.relu(self.merge1(ops.concat_channels(x1, self.down21(x2))))
        y2 = ops.relu(self.merge2(ops.concat_channels(self.up12(x1), x2)))
        return y1, y2


class CSFI3(Module):
    def __init__(self, c, rng):
        self.up12 = Upsample(c, 2, rng)
        self.up14 = Upsample(c, 4, rng)
        self.up24 = Upsample(c, 2, rng)
        self.down21 = Downsample(c, 2, rng)
        self.down41 = Downsample(c, 4, rng)
        self.down42 = Downsample(c, 2, rng)
        self.merge1 = Conv2d(3 * c, c, rng=rng)
        self.merge2 = Conv2d(3 * c, c, rng=rng)
        self.merge4 = Conv2d(3 * c, c, rng=rng)

    def forward(self, x1, x2, x4):
        _check_ratio(x1, x2, 2)
        _check_ratio(x2, x4, 2)
        y1 = ops.relu(self.merge1(ops.concat_channels(x1, self.down21(x2), self.down41(x4))))
        y2 = ops.relu(self.merge2(ops.concat_channels(self.up12(x1), x2, self.down42(x4))))
        y4 = ops.relu(self.merge4(ops.concat_channels(self.up14(x1), self.up24(x2), x4)))
        return y1, y2, y4


def _check_ratio(a, b, r):
    if a.shape[1] != b.shape[1] or b.shape[2] != r * a.shape[2] or b.shape[3] != r * a.shape[3]:
        raise ValueError(f"CSFI expects features in a 1:{r} extent ratio with equal channels, got {a.shape} and {b.shape}")


def csfi_exchange(feats, module):
    """Exchange features across scales; ``feats`` ordered coarse to fine."""
    return module(*feats)


class Generator(Module):
    def __init__(self, config=GeneratorConfig()):
        self.config = config
        c = config.base_channels
        b0, b1, b2, b3 = config.blocks
        rng = np.random.default_rng(config.seed)
        self.lte = LTE(rng, config.lte_pool, config.lte_width)
        self.head = Conv2d(3, c, rng=rng)
        self.body0 = ResGroup(c, b0, rng)
        self.tt = {s: TextureTransformer(c, SCALE_LEVEL[s], rng, config.soft_upsample, config.lte_width) for s in config.scales}
        self.body1 = ResGroup(c, b1, rng)
        self.up2 = Conv2d(c, 4 * c, rng=rng)
        self.up4 = Conv2d(c, 4 * c, rng=rng)
        if config.csfi:
            self.csfi2 = CSFI2(c, rng)
            self.body2 = {1: ResGroup(c, b2, rng), 2: ResGroup(c, b2, rng)}
            self.csfi3 = CSFI3(c, rng)
            self.body3 = {s: ResGroup(c, b3, rng) for s in (1, 2, 4)}
            self.tail_up1 = Upsample(c, 4, rng)
            self.tail_up2 = Upsample(c, 2, rng)
            self.tail_merge = Conv2d(3 * c, c, rng=rng)
        else:
            self.body2 = {2: ResGroup(c, b2, rng)}
            self.body3 = {4: ResGroup(c, b3, rng)}
        self.tail1 = Conv2d(c, c // 2 if c > 1 else 1, rng=rng)
        self.tail2 = Conv2d(self.tail1.weight.shape[0], 3, k=1, rng=rng)
        self.tail2.weight.data *= OUT_INIT_SCALE
        self.assign_names()

    def _tt(self, scale, x, state):
        return self.tt[scale](x, state) if scale in self.tt else x

    def forward(self, lr, ref, return_state=False):
        if lr.ndim != 4 or lr.shape[1] != 3 or ref.ndim != 4 or ref.shape[1] != 3:
            raise ValueError("generator expects (N, 3, H, W) LR and Ref images")
        if ref.shape[2] % 4 or ref.shape[3] % 4:
            raise ValueError(f"Ref extents {ref.shape[2:]} must be divisible by 4")
        state = None
        if self.tt:
            lr_up, ref_du = degrade_pair(lr, ref)
            state = search(self.lte, lr_up, ref_du, ref, DEFAULT_GEOMETRY)

        x = ops.relu(self.head(lr))
        x = x + self.body0(x)
        # stage 1
        x1 = self._tt(1, x, state)
        x1 = x1 + self.body1(x1)
        # stage 2
        x2 = ops.relu(ops.pixel_shuffle(self.up2(x1), 2))
        x2 = self._tt(2, x2, state)
        if self.config.csfi:
            y1, y2 = csfi_exchange((x1, x2), self.csfi2)
            x1 = x1 + self.body2[1](y1)
            x2 = x2 + self.body2[2](y2)
        else:
            x2 = x2 + self.body2[2](x2)
        # stage 3
        x4 = ops.relu(ops.pixel_shuffle(self.up4(x2), 2))
        x4 = self._tt(4, x4, state)
        if self.config.csfi:
            y1, y2, y4 = csfi_exchange((x1, x2, x4), self.csfi3)
            x1 = x1 + self.body3[1](y1)
            x2 = x2 + self.body3[2](y2)
            x4 = x4 + self.body3[4](y4)
            x4 = ops.relu(self.tail_merge(ops.concat_channels(self.tail_up1(x1), self.tail_up2(x2), x4)))
        else:
            x4 = x4 + self.body3[4](x4)
        sr = self.tail2(self.tail1(x4))
        t3 = state.texture.level3 if state is not None else None
        if return_state:
            return sr, t3, state
        return sr, t3


def generator_forward(lr, ref, model):
    return model(lr, ref)


class Discriminator(Module):
    """Ten 3x3 convs (stride 1/2 alternating, 32 -> 512 channels), then FC -> 1024 -> 1."""

    CHANNELS = (32, 32, 64, 64, 128, 128, 256, 256, 512, 512)

    def __init__(self, in_size=160, seed=0):
        if in_size % 32:
            raise ValueError(f"discriminator input extent {in_size} must be divisible by 32")
        rng = np.random.default_rng(seed)
        self.in_size = in_size
        cin = 3
        self.convs = []
        for i, cout in enumerate(self.CHANNELS):
            self.convs.append(Conv2d(cin, cout, stride=1 + i % 2, rng=rng))
            cin = cout
        self.flat_dim = cin * (in_size // 32) ** 2
        self.fc1 = Linear(self.flat_dim, 1024, rng)
        self.fc2 = Linear(1024, 1, rng)
        self.assign_names()

    def forward(self, img):
        if img.shape[2] % 32 or img.shape[3] % 32:
            raise ValueError(f"discriminator input extents {img.shape[2:]} must be divisible by 32")
        x = img
        for conv in self.convs:
            x = ops.leaky_relu(conv(x))
        x = ops.reshape(x, (x.shape[0], -1))
        if x.shape[1] != self.flat_dim:
            raise ValueError(f"discriminator built for {self.in_size}px input; flatten width {x.shape[1]} != {self.flat_dim}")
        return ops.reshape(self.fc2(ops.leaky_relu(self.fc1(x))), (x.shape[0],))


def discriminator_forward(img, model):
    return model(img)


def count_params(model):
    return model.num_params()


def param_table(model):
    """Parameter count per top-level submodule, in construction order."""
    table = {}
    for name, p in model.named_parameters():
        key = name.split(".")[0]
        table[key] = table.get(key, 0) + p.size
    return table
