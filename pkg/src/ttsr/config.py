"""Training configuration and its flat ``key = value`` file format.

Blank lines and ``#`` comments are ignored. Keys are the ``TrainConfig``
field names; tuples are written ``16+16+8+4`` (blocks) or ``1,2,4`` (scales).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .losses import LossWeights
from .network import GeneratorConfig


@dataclass(frozen=True)
class TrainConfig:
    # optimizer
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # schedule
    warmup_epochs: int = 2
    total_epochs: int = 5
    max_steps: int = 0  # 0 = no cap
    batch_size: int = 4
    d_steps: int = 1  # critic updates per generator update
    # patches
    lr_patch: int = 16
    hr_patch: int = 64
    augment: bool = True
    # losses
    w_rec: float = 1.0
    w_adv: float = 1e-3
    w_per: float = 1e-2
    w_gp: float = 10.0
    perceptual_level: int = 3
    # model
    channels: int = 64
    blocks: tuple = (16, 16, 8, 4)
    scales: tuple = (1, 2, 4)
    csfi: bool = True
    lte_pool: str = "avg"
    soft_upsample: str = "nearest"
    lte_width: int = 64
    # bookkeeping
    seed: int = 0
    ckpt_every: int = 1

    def __post_init__(self):
        if self.hr_patch != 4 * self.lr_patch:
            raise ValueError(f"hr_patch ({self.hr_patch}) must be 4 x lr_patch ({self.lr_patch})")
        if self.hr_patch % 32:
            raise ValueError("hr_patch must be divisible by 32 (critic down-sampling)")
        if self.batch_size < 1 or self.total_epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("batch_size must be >= 1 and epoch counts >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.d_steps < 1 or self.ckpt_every < 1:
            raise ValueError("d_steps and ckpt_every must be >= 1")
        LossWeights(self.w_rec, self.w_adv, self.w_per, self.w_gp)

    @property
    def weights(self):
        return LossWeights(self.w_rec, self.w_adv, self.w_per, self.w_gp)

    def generator_config(self):
        return GeneratorConfig(self.channels, self.blocks, self.scales, self.csfi,
                               self.lte_pool, self.soft_upsample, self.seed, self.lte_width)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name), f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kw = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kw[key] = _parse(val, types[key], key)
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_text(f.read())


def _fmt(v, name):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ("+" if name == "blocks" else ",").join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(val, typ, key):
    try:
        if typ == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
        if typ == "tuple":
            parts = [p for p in val.replace("+", ",").split(",") if p.strip()]
            return tuple(int(p) for p in parts)
        return val
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {val!r} as {typ}") from None
