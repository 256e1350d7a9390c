"""Reconstruction, WGAN-GP adversarial, and perceptual losses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Tensor, grad, no_grad
from .texture import LTE

GP_MODE = "central-difference-probe"


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    adv: float = 1e-3
    per: float = 1e-2
    gp: float = 10.0

    def __post_init__(self):
        if min(self.rec, self.adv, self.per, self.gp) < 0:
            raise ValueError("loss weights must be non-negative")


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def rec_loss(sr, hr):
    """Mean absolute error over every element (batch included)."""
    _same_shape(sr, hr, "rec_loss")
    return ops.mean(ops.abs(sr - hr))


def _critic_grad(critic, x):
    xt = Tensor(x, requires_grad=True)
    out = critic(xt)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("critic produced non-finite output")
    (g,) = grad(ops.sum(out), [xt])
    return g


def gradient_penalty(critic, real, fake, rng=None, eps=None, probe_step=1e-3):
    """mean_n (||grad_x D(x_hat_n)||_2 - 1)^2 on random interpolates x_hat.

    The returned tensor has the exact penalty as its value. Its gradient with
    respect to the critic's parameters uses the identity
    d/dtheta ||g|| = grad_theta (u . grad_x D) with u = g/||g||, where the
    directional derivative is a central difference of D along u.
    """
    _same_shape(real, fake, "gradient_penalty")
    n = real.shape[0]
    if eps is None:
        rng = np.random.default_rng() if rng is None else rng
        eps = rng.uniform(size=n)
    e = np.asarray(eps, dtype=real.dtype).reshape((n,) + (1,) * (real.ndim - 1))
    x_hat = e * real.data + (1 - e) * fake.data
    g = _critic_grad(critic, x_hat)
    norms = np.sqrt(np.sum(g.reshape(n, -1).astype(np.float64) ** 2, axis=1))
    value = float(np.mean((norms - 1.0) ** 2))

    coef = 2.0 * (norms - 1.0) / n
    safe = np.where(norms > 0, norms, 1.0)
    direction = (g.reshape(n, -1) / safe[:, None]).reshape(g.shape) * (norms > 0).reshape(e.shape)
    step = np.asarray(probe_step, dtype=real.dtype)
    probe_in = Tensor(np.concatenate([x_hat + step * direction, x_hat - step * direction]).astype(real.dtype))
    d = critic(probe_in)
    w = np.concatenate([coef, -coef]).astype(d.dtype) / (2 * float(step))
    probe = ops.sum(d * Tensor(w))
    return probe + Tensor(np.asarray(value - probe.data, dtype=probe.dtype))


def d_loss(critic, real, fake, gp_weight=10.0, rng=None, eps=None):
    """Critic loss: mean D(fake) - mean D(real) + gp_weight * penalty. Returns (loss, penalty)."""
    _same_shape(real, fake, "d_loss")
    real = real.detach()
    fake = fake.detach()
    gp = gradient_penalty(critic, real, fake, rng=rng, eps=eps)
    loss = ops.mean(critic(fake)) - ops.mean(critic(real)) + gp * gp_weight
    return loss, gp.item()


def g_adv_loss(critic, fake):
    return -ops.mean(critic(fake))


class FrozenLTEFeatures:
    """Feature plug for the first perceptual term: a frozen texture extractor.

    Defaults to random weights; ``load`` pulls real weights (any checkpoint
    whose parameter table has ``<prefix>conv0.weight`` ... entries).
    """

    def __init__(self, level=3, seed=0, pool="avg", width=64):
        self.level = level
        self.net = LTE(np.random.default_rng(seed), pool, width).assign_names().freeze()

    def load(self, path, prefix=""):
        from .checkpoint import load_checkpoint
        ck = load_checkpoint(path)
        state = {k[len(prefix):]: v for k, v in ck.params.items() if k.startswith(prefix)}
        self.net.load_state_dict(state, strict=False)
        self.net.freeze()
        return self

    def __call__(self, img):
        return self.net(img)[self.level]


def perceptual_loss(sr, hr, plug):
    """Mean squared feature distance, normalized by C*H*W (and batch)."""
    if plug is None:
        raise ValueError("perceptual_loss needs a feature extractor")
    _same_shape(sr, hr, "perceptual_loss")
    with no_grad():
        target = plug(hr.detach())
    return ops.mean(ops.square(plug(sr) - target.detach()))


def transferal_perceptual_loss(sr, t3, lte):
    feats = lte(sr).level3
    _same_shape(feats, t3, "transferal_perceptual_loss")
    return ops.mean(ops.square(feats - t3))


def overall_loss(components, weights=LossWeights(), warmup=False):
    """weights.rec * rec + weights.adv * adv + weights.per * per; warm-up keeps rec only."""
    w_adv = 0.0 if warmup else weights.adv
    w_per = 0.0 if warmup else weights.per
    total = components["rec"] * weights.rec
    for key, w in (("adv", w_adv), ("per", w_per)):
        if w and components.get(key) is not None:
            total = total + components[key] * w
    return total
