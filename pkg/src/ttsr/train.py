"""Training loop: reconstruction warm-up, then alternating critic and
generator steps, with augmentation, per-epoch checkpoints and a CSV loss log.

Randomness comes from numpy's PCG64 with one SeedSequence child per purpose
(shuffle, augment, gp), so each stream can be replayed on its own.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import make_lr, to_tensor
from .losses import (GP_MODE, FrozenLTEFeatures, d_loss, g_adv_loss,
                     overall_loss, perceptual_loss, rec_loss,
                     transferal_perceptual_loss)
from .network import Discriminator, Generator
from .optim import Adam

LOG_HEADER = ("step", "epoch", "l_rec", "l_adv", "l_per", "l_d", "gp")
STREAMS = ("shuffle", "augment", "gp")


def make_rngs(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAMS, children)}


# ---- augmentation -------------------------------------------------------

def apply_transform(img, hflip, vflip, rot):
    """Flip (horizontal, then vertical), then rotate by ``rot`` quarter turns."""
    if hflip:
        img = img[:, ::-1]
    if vflip:
        img = img[::-1]
    return np.ascontiguousarray(np.rot90(img, rot))


def draw_transform(rng):
    return bool(rng.integers(2)), bool(rng.integers(2)), int(rng.integers(4))


def augment(hr, ref, rng):
    """Independent random flips and rotations of HR and Ref; returns (lr, hr, ref)."""
    for name, img in (("hr", hr), ("ref", ref)):
        if img.shape[0] != img.shape[1]:
            raise ValueError(f"augment: {name} patch {img.shape[:2]} is not square")
    hr = apply_transform(hr, *draw_transform(rng))
    ref = apply_transform(ref, *draw_transform(rng))
    return make_lr(hr), hr, ref


def random_crop(img, size, rng):
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than the {size}px training patch")
    y = int(rng.integers(h - size + 1))
    x = int(rng.integers(w - size + 1))
    return img[y:y + size, x:x + size]


# ---- state ---------------------------------------------------------------

@dataclass
class TrainState:
    cfg: TrainConfig
    gen: Generator
    disc: Discriminator
    opt_g: Adam
    opt_d: Adam
    rngs: dict
    plug: FrozenLTEFeatures
    step: int = 0
    epoch: int = 0
    perm: list = field(default_factory=list)  # order of the epoch in progress
    pos: int = 0  # next batch start within perm


def init_state(cfg):
    gen = Generator(cfg.generator_config())
    disc = Discriminator(cfg.hr_patch, seed=cfg.seed + 1)
    betas = (cfg.beta1, cfg.beta2)
    return TrainState(cfg, gen, disc,
                      Adam(gen.parameters(), cfg.lr, betas, cfg.adam_eps),
                      Adam(disc.parameters(), cfg.lr, betas, cfg.adam_eps),
                      make_rngs(cfg.seed),
                      FrozenLTEFeatures(cfg.perceptual_level, seed=cfg.seed + 2, pool=cfg.lte_pool, width=cfg.lte_width))


def to_checkpoint(st):
    params = {f"G.{k}": v for k, v in st.gen.state_dict().items()}
    params.update({f"D.{k}": v for k, v in st.disc.state_dict().items()})
    rng = {name: r.bit_generator.state for name, r in st.rngs.items()}
    rng["perm"] = [int(i) for i in st.perm]
    rng["pos"] = st.pos
    return Checkpoint(config=st.cfg.to_text(), step=st.step, epoch=st.epoch, params=params,
                      optim={"G": st.opt_g.state_dict(), "D": st.opt_d.state_dict()}, rng=rng)


def load_generator(path):
    """Generator (and its config) from a training checkpoint."""
    ck = load_checkpoint(path)
    cfg = TrainConfig.from_text(ck.config)
    gen = Generator(cfg.generator_config())
    gen.load_state_dict(_strip(ck.params, "G."))
    return gen, cfg


def _strip(params, prefix):
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def state_from_checkpoint(ck):
    st = init_state(TrainConfig.from_text(ck.config))
    st.gen.load_state_dict(_strip(ck.params, "G."))
    st.disc.load_state_dict(_strip(ck.params, "D."))
    st.opt_g.load_state_dict(ck.optim["G"])
    st.opt_d.load_state_dict(ck.optim["D"])
    for name in STREAMS:
        st.rngs[name].bit_generator.state = ck.rng[name]
    st.perm = list(ck.rng.get("perm", []))
    st.pos = int(ck.rng.get("pos", 0))
    st.step, st.epoch = ck.step, ck.epoch
    return st


# ---- steps ---------------------------------------------------------------

def make_batch(dataset, ids, cfg, rng):
    lrs, hrs, refs = [], [], []
    for i in ids:
        hr, ref = dataset[int(i)]
        hr = random_crop(hr, cfg.hr_patch, rng)
        ref = random_crop(ref, cfg.hr_patch, rng)
        if cfg.augment:
            lr, hr, ref = augment(hr, ref, rng)
        else:
            lr = make_lr(hr)
        lrs.append(lr)
        hrs.append(hr)
        refs.append(ref)
    return to_tensor(np.stack(lrs)), to_tensor(np.stack(hrs)), to_tensor(np.stack(refs))


def _finite(name, value):
    if not np.isfinite(value):
        raise FloatingPointError(f"{name} became non-finite ({value})")
    return value


def train_step(st, lr, hr, ref):
    """One batch. Returns the log row values (l_rec, l_adv, l_per, l_d, gp)."""
    cfg = st.cfg
    warmup = st.epoch < cfg.warmup_epochs
    sr, t3 = st.gen(lr, ref)
    l_rec = rec_loss(sr, hr)
    if warmup:
        st.opt_g.zero_grad()
        total = overall_loss({"rec": l_rec}, cfg.weights, warmup=True)
        _finite("l_rec", total.item())
        total.backward()
        st.opt_g.step()
        return l_rec.item(), 0.0, 0.0, 0.0, 0.0

    fake = sr.detach()
    for _ in range(cfg.d_steps):
        st.opt_d.zero_grad()
        ld, gp = d_loss(st.disc, hr, fake, cfg.w_gp, rng=st.rngs["gp"])
        _finite("l_d", ld.item())
        ld.backward()
        st.opt_d.step()

    st.opt_g.zero_grad()
    l_adv = g_adv_loss(st.disc, sr)
    l_per = perceptual_loss(sr, hr, st.plug)
    if t3 is not None:
        l_per = l_per + transferal_perceptual_loss(sr, t3, st.gen.lte)
    total = overall_loss({"rec": l_rec, "adv": l_adv, "per": l_per}, cfg.weights)
    _finite("generator loss", total.item())
    total.backward()
    st.opt_g.step()
    st.disc.zero_grad()  # critic grads from the generator pass are discarded
    return l_rec.item(), l_adv.item(), l_per.item(), ld.item(), gp


def _fmt_row(step, epoch, vals):
    return [str(step), str(epoch)] + [repr(float(v)) for v in vals]


def _open_log(path, resume_step):
    """Open the CSV log for appending, keeping only rows up to ``resume_step``."""
    rows = []
    if resume_step and path.exists():
        with open(path, newline="") as f:
            rows = [r for r in csv.reader(f)][1:]
        rows = [r for r in rows if int(r[0]) <= resume_step]
    f = open(path, "w", newline="")
    w = csv.writer(f, lineterminator="\n")
    w.writerow(LOG_HEADER)
    w.writerows(rows)
    return f, w


def _write_json(path, obj):
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def train(dataset, cfg=None, out_dir=None, resume=None, log=None):
    """Run training; returns the final TrainState.

    With ``out_dir`` the loss log (``loss_log.csv``), per-epoch checkpoints
    (``epoch_NNNN.ckpt``, plus ``last.ckpt``) and ``run_meta.json`` go there.
    ``resume`` is a checkpoint path to continue from.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if resume is not None:
        st = state_from_checkpoint(load_checkpoint(resume))
        if cfg is not None:
            # only the step cap may change across a resume
            if dataclasses.replace(cfg, max_steps=st.cfg.max_steps) != st.cfg:
                raise ValueError("resume: config differs from the checkpoint's config")
            st.cfg = cfg
        cfg = st.cfg
    else:
        cfg = TrainConfig() if cfg is None else cfg
        st = init_state(cfg)

    out = Path(out_dir) if out_dir is not None else None
    writer = logf = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "run_meta.json", {"gp_mode": GP_MODE, "kernel_backend": kernels.BACKEND,
                                            "seed": cfg.seed, "rng": "numpy PCG64, SeedSequence children " + ",".join(STREAMS)})
        with open(out / "config.txt", "w") as f:
            f.write(cfg.to_text())
        logf, writer = _open_log(out / "loss_log.csv", st.step)
    rows = [] if log is None else log

    def checkpoint(name):
        if out is not None:
            ck = to_checkpoint(st)
            save_checkpoint(ck, out / name)
            save_checkpoint(ck, out / "last.ckpt")

    try:
        n = len(dataset)
        while st.epoch < cfg.total_epochs:
            if st.pos == 0 or not st.perm:
                st.perm = [int(i) for i in st.rngs["shuffle"].permutation(n)]
                st.pos = 0
            while st.pos < n:
                if cfg.max_steps and st.step >= cfg.max_steps:
                    checkpoint(f"step_{st.step:07d}.ckpt")
                    return st
                ids = st.perm[st.pos:st.pos + cfg.batch_size]
                lr, hr, ref = make_batch(dataset, ids, cfg, st.rngs["augment"])
                try:
                    vals = train_step(st, lr, hr, ref)
                except FloatingPointError:
                    if out is not None:
                        save_checkpoint(to_checkpoint(st), out / "nan_dump.ckpt")
                    raise
                st.step += 1
                st.pos += cfg.batch_size
                row = _fmt_row(st.step, st.epoch, vals)
                rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                    logf.flush()
            st.epoch += 1
            st.pos = 0
            st.perm = []
            if st.epoch % cfg.ckpt_every == 0 or st.epoch == cfg.total_epochs:
                checkpoint(f"epoch_{st.epoch:04d}.ckpt")
        return st
    finally:
        if logf is not None:
            logf.close()


def log_text(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    w.writerows(rows)
    return buf.getvalue()
