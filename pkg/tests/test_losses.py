import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ttsr import ops
from ttsr.autograd import Tensor, grad
from ttsr.losses import (FrozenLTEFeatures, LossWeights, d_loss, g_adv_loss, gradient_penalty,
                         overall_loss, perceptual_loss, rec_loss, transferal_perceptual_loss)
from ttsr.nn import Linear, Module
from ttsr.texture import LTE

seeds = st.integers(0, 2**31 - 1)


def T(a, rg=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


class LinearCritic(Module):
    def __init__(self, w):
        self.fc = Linear(w.size, 1)
        self.fc.weight.data = w.reshape(1, -1).astype(np.float64)
        self.fc.bias.data = np.zeros(1)
        self.fc.weight.grad = np.zeros_like(self.fc.weight.data)
        self.fc.bias.grad = np.zeros(1)
        self.assign_names()

    def forward(self, x):
        return ops.reshape(self.fc(ops.reshape(x, (x.shape[0], -1))), (x.shape[0],))


class TinyCritic(Module):
    """Two layers with a smooth nonlinearity so the input gradient varies with x."""

    def __init__(self, d, h, rng):
        self.l1 = Linear(d, h, rng)
        self.l2 = Linear(h, 1, rng)
        self.to(np.float64).assign_names()

    def forward(self, x):
        z = self.l1(ops.reshape(x, (x.shape[0], -1)))
        return ops.reshape(self.l2(z * z), (x.shape[0],))


class ZeroCritic(Module):
    def __init__(self, d):
        self.fc = Linear(d, 1)
        for p in self.fc.parameters():
            p.data = np.zeros_like(p.data, dtype=np.float64)
            p.grad = np.zeros_like(p.data)
        self.assign_names()

    def forward(self, x):
        return ops.reshape(self.fc(ops.reshape(x, (x.shape[0], -1))), (x.shape[0],))


# reconstruction

def test_rec_identical_zero(rng):
    x = T(rng.standard_normal((2, 3, 4, 4)))
    assert rec_loss(x, x).item() == 0


def test_rec_uniform_offset(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    assert abs(rec_loss(T(x), T(x + 0.375)).item() - 0.375) < 1e-12


def test_rec_loop_oracle(rng):
    a, b = rng.standard_normal((2, 2, 3, 5, 5))
    s = 0.0
    for v, w in zip(a.ravel(), b.ravel()):
        s += abs(v - w)
    assert abs(rec_loss(T(a), T(b)).item() - s / a.size) < 1e-7


def test_rec_shape_mismatch():
    with pytest.raises(ValueError):
        rec_loss(T(np.zeros((1, 3, 4, 4))), T(np.zeros((1, 3, 4, 5))))


@given(seeds)
def test_rec_is_a_metric(seed):
    r = np.random.default_rng(seed)
    a, b, c = (T(v) for v in r.standard_normal((3, 1, 2, 3, 3)))
    ab, ba = rec_loss(a, b).item(), rec_loss(b, a).item()
    assert ab == ba and ab > 0
    assert ab <= rec_loss(a, c).item() + rec_loss(c, b).item() + 1e-12


# gradient penalty

@given(seeds)
def test_gp_linear_critic_closed_form(seed):
    r = np.random.default_rng(seed)
    w = r.standard_normal(12)
    real, fake = T(r.standard_normal((3, 3, 2, 2))), T(r.standard_normal((3, 3, 2, 2)))
    gp = gradient_penalty(LinearCritic(w), real, fake, rng=r)
    assert abs(gp.item() - (np.linalg.norm(w) - 1) ** 2) < 1e-6


def test_gp_unit_norm_zero(rng):
    w = rng.standard_normal(12)
    w /= np.linalg.norm(w)
    real, fake = T(rng.standard_normal((2, 3, 2, 2))), T(rng.standard_normal((2, 3, 2, 2)))
    assert gradient_penalty(LinearCritic(w), real, fake, rng=rng).item() < 1e-12


def _fd_penalty(critic, x_hat, h=1e-6):
    """Penalty from finite-difference input gradients, one item at a time."""
    vals = []
    for n in range(x_hat.shape[0]):
        xn = x_hat[n:n + 1]
        g = np.zeros(xn.size)
        for i in range(xn.size):
            e = np.zeros(xn.size)
            e[i] = h
            up = critic(T(xn + e.reshape(xn.shape))).item()
            dn = critic(T(xn - e.reshape(xn.shape))).item()
            g[i] = (up - dn) / (2 * h)
        vals.append((np.linalg.norm(g) - 1) ** 2)
    return float(np.mean(vals))


def test_gp_tiny_critic_vs_finite_differences(rng):
    critic = TinyCritic(8, 5, rng)
    real, fake = rng.standard_normal((2, 3, 2, 2, 2))
    eps = rng.uniform(size=3)
    gp = gradient_penalty(critic, T(real), T(fake), eps=eps).item()
    x_hat = eps[:, None, None, None] * real + (1 - eps[:, None, None, None]) * fake
    ref = _fd_penalty(critic, x_hat)
    assert abs(gp - ref) / abs(ref) < 1e-3


def test_gp_parameter_gradient_vs_finite_differences(rng):
    critic = TinyCritic(8, 4, rng)
    real, fake = T(rng.standard_normal((2, 2, 2, 2))), T(rng.standard_normal((2, 2, 2, 2)))
    eps = np.array([0.3, 0.7])
    critic.zero_grad()
    gradient_penalty(critic, real, fake, eps=eps).backward()
    p = critic.l1.weight
    analytic = p.grad.copy()
    h = 1e-6
    num = np.zeros_like(p.data)
    for idx in np.ndindex(p.shape):
        old = p.data[idx]
        p.data[idx] = old + h
        up = gradient_penalty(critic, real, fake, eps=eps).item()
        p.data[idx] = old - h
        dn = gradient_penalty(critic, real, fake, eps=eps).item()
        p.data[idx] = old
        num[idx] = (up - dn) / (2 * h)
    assert np.linalg.norm(analytic - num) / np.linalg.norm(num) < 1e-3


def test_gp_symmetric_at_half(rng):
    critic = TinyCritic(8, 5, rng)
    a, b = T(rng.standard_normal((2, 2, 2, 2))), T(rng.standard_normal((2, 2, 2, 2)))
    half = np.full(2, 0.5)
    assert gradient_penalty(critic, a, b, eps=half).item() == pytest.approx(
        gradient_penalty(critic, b, a, eps=half).item(), abs=1e-12)


def test_gp_non_finite_critic(rng):
    w = np.full(4, np.inf)
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        gradient_penalty(LinearCritic(w), T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 2, 2))), rng=rng)


# critic and generator adversarial losses

def test_zero_critic_d_loss_is_gp_weight(rng):
    real, fake = T(rng.standard_normal((2, 3, 2, 2))), T(rng.standard_normal((2, 3, 2, 2)))
    critic = ZeroCritic(12)
    loss, gp = d_loss(critic, real, fake, 10.0, rng=rng)
    assert abs(loss.item() - 10.0) < 1e-6 and gp == 1.0
    assert g_adv_loss(critic, fake).item() == 0


def test_d_loss_real_equals_fake_only_penalty(rng):
    critic = TinyCritic(12, 3, rng)
    x = T(rng.standard_normal((2, 3, 2, 2)))
    loss, gp = d_loss(critic, x, x, 0.0, eps=np.full(2, 0.5))
    assert abs(loss.item()) < 1e-12


def test_d_loss_direct_formula(rng):
    critic = TinyCritic(12, 3, rng)
    real, fake = T(rng.standard_normal((2, 3, 2, 2))), T(rng.standard_normal((2, 3, 2, 2)))
    eps = np.array([0.2, 0.9])
    loss, gp = d_loss(critic, real, fake, 10.0, eps=eps)
    direct = critic(fake).data.mean() - critic(real).data.mean() + 10.0 * gp
    assert abs(loss.item() - direct) < 1e-12


def test_g_adv_gradient_is_negated_critic_mean(rng):
    critic = TinyCritic(12, 3, rng)
    x = rng.standard_normal((2, 3, 2, 2))
    a, b = T(x, True), T(x, True)
    (ga,) = grad(g_adv_loss(critic, a), [a])
    (gb,) = grad(ops.mean(critic(b)), [b])
    np.testing.assert_array_equal(ga, -gb)


# perceptual terms

class Identity:
    def __call__(self, x):
        return x


def test_perceptual_identity_plug_is_mse(rng):
    a, b = rng.standard_normal((2, 1, 3, 4, 4))
    assert abs(perceptual_loss(T(a), T(b), Identity()).item() - np.mean((a - b) ** 2)) < 1e-12


def test_perceptual_zero_and_missing(rng):
    plug = FrozenLTEFeatures(width=4)
    x = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32))
    assert perceptual_loss(x, x, plug).item() == 0
    with pytest.raises(ValueError):
        perceptual_loss(x, x, None)


def test_perceptual_loop_oracle(rng):
    plug = FrozenLTEFeatures(width=4)
    a = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float64))
    b = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float64))
    plug.net.to(np.float64)
    fa, fb = plug(a).data, plug(b).data
    s = 0.0
    for u, v in zip(fa.ravel(), fb.ravel()):
        s += (u - v) ** 2
    assert abs(perceptual_loss(a, b, plug).item() - s / fa.size) < 1e-6


def test_plug_is_frozen(rng):
    plug = FrozenLTEFeatures(width=4)
    a = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32))
    perceptual_loss(a, b, plug).backward()
    assert all(not p.grad.any() for p in plug.net.parameters())
    assert np.abs(a.grad).sum() > 0


def test_plug_loads_weights(tmp_path, rng):
    from ttsr.checkpoint import Checkpoint, save_checkpoint
    src = LTE(np.random.default_rng(9), width=4).assign_names()
    save_checkpoint(Checkpoint(params={f"G.lte.{k}": v for k, v in src.state_dict().items()}),
                    tmp_path / "w.ckpt")
    plug = FrozenLTEFeatures(width=4).load(tmp_path / "w.ckpt", prefix="G.lte.")
    np.testing.assert_array_equal(plug.net.conv6.weight.data, src.conv6.weight.data)
    assert not plug.net.conv6.weight.requires_grad


def test_transferal_zero_cases(rng):
    lte = LTE(np.random.default_rng(0), width=4)
    sr = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32))
    assert transferal_perceptual_loss(sr, lte(sr).level3.detach(), lte).item() == 0
    for _, p in lte.named_parameters():
        if p.ndim == 1:
            p.data[:] = 0
    zero = Tensor(np.zeros((1, 3, 8, 8), np.float32))
    assert transferal_perceptual_loss(zero, Tensor(np.zeros((1, 16, 2, 2), np.float32)), lte).item() == 0


def test_transferal_loop_oracle_and_gradients(rng):
    lte = LTE(np.random.default_rng(0), width=4).to(np.float64)
    sr = T(rng.uniform(-1, 1, (1, 3, 8, 8)), True)
    t3 = T(rng.standard_normal((1, 16, 2, 2)))
    f = lte(sr).level3.data
    s = 0.0
    for u, v in zip(f.ravel(), t3.data.ravel()):
        s += (u - v) ** 2
    loss = transferal_perceptual_loss(sr, t3, lte)
    assert abs(loss.item() - s / f.size) < 1e-6
    loss.backward()
    assert np.abs(sr.grad).sum() > 0 and np.abs(lte.conv0.weight.grad).sum() > 0
    with pytest.raises(ValueError):
        transferal_perceptual_loss(sr, T(np.zeros((1, 16, 4, 4))), lte)


# overall loss

def test_overall_weighted_sum():
    comps = {"rec": T(0.5), "adv": T(2.0), "per": T(3.0)}
    assert abs(overall_loss(comps, LossWeights(1, 1e-3, 1e-2)).item() - 0.532) < 1e-12


def test_overall_rec_only_and_zero():
    comps = {"rec": T(0.5), "adv": T(2.0), "per": T(3.0)}
    assert overall_loss(comps, LossWeights(1, 0, 0)).item() == 0.5
    assert overall_loss(comps, warmup=True).item() == 0.5
    zero = {k: T(0.0) for k in comps}
    assert overall_loss(zero).item() == 0


def test_warmup_gradient_equals_rec_gradient(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    hr = T(rng.standard_normal((1, 3, 4, 4)))
    a, b = T(x, True), T(x, True)
    comps = {"rec": rec_loss(a, hr), "adv": ops.mean(a), "per": ops.mean(ops.square(a))}
    (ga,) = grad(overall_loss(comps, LossWeights(1, 0, 0)), [a])
    (gb,) = grad(rec_loss(b, hr), [b])
    np.testing.assert_array_equal(ga, gb)


def test_weights_non_negative():
    with pytest.raises(ValueError):
        LossWeights(adv=-1)
