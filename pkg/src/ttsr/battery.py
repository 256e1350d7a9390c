"""The finite-difference battery: every differentiable op, the texture
transformer, the generator and the critic, checked against central
differences. Used by ``ttsr gradcheck`` and the test suite."""
from __future__ import annotations

import numpy as np

from . import ops
from .autograd import Tensor
from .gradcheck import input_grad_error, param_grad_error
from .losses import perceptual_loss, rec_loss, transferal_perceptual_loss
from .network import Discriminator, Generator, GeneratorConfig
from .texture import (LTE, DEFAULT_GEOMETRY, TextureTransformer, attention_maps,
                      relevance_embedding, search, soft_fuse, transfer)

TOLERANCE = {np.float64: 1e-5, np.float32: 2e-2}


def _proj(y, rng_seed=1):
    """Random linear functional: turns any tensor output into a scalar."""
    # own entropy tuple, so it never coincides with a battery input stream
    w = np.random.default_rng((rng_seed, 7919)).standard_normal(y.shape).astype(y.dtype)
    return ops.sum(y * Tensor(w))


def _op_cases(rng, dt):
    def r(*shape, lo=None):
        a = rng.standard_normal(shape)
        if lo is not None:
            a = np.abs(a) + lo
        return Tensor(a.astype(dt))

    x4 = r(2, 3, 6, 6)
    other = r(2, 3, 6, 6)
    pos = r(2, 3, 6, 6, lo=0.5)
    w3 = r(4, 3, 3, 3)
    b4 = r(4)
    idx = rng.integers(0, 16, size=(2, 9))
    ex = r(1, 2, 8, 8)
    # keep pooled windows free of near-ties
    pool_in = Tensor((rng.permutation(2 * 3 * 6 * 6).reshape(2, 3, 6, 6) / 10).astype(dt))
    rows = Tensor(rng.permutation(2 * 5 * 7).reshape(2, 5, 7).astype(dt) / 10)

    return [
        ("add", lambda t: _proj(t + other), x4),
        ("sub", lambda t: _proj(other - t), x4),
        ("mul", lambda t: _proj(t * other), x4),
        ("div", lambda t: _proj(other / t), pos),
        ("square", lambda t: _proj(ops.square(t)), x4),
        ("sqrt", lambda t: _proj(ops.sqrt(t)), pos),
        ("abs", lambda t: _proj(ops.abs(t)), x4),
        ("relu", lambda t: _proj(ops.relu(t)), x4),
        ("leaky_relu", lambda t: _proj(ops.leaky_relu(t)), x4),
        ("sum", lambda t: ops.sum(ops.sum(t, axis=(2, 3)) * ops.sum(t, axis=(2, 3))), x4),
        ("mean", lambda t: ops.mean(ops.square(ops.mean(t, axis=1))), x4),
        ("reshape", lambda t: _proj(ops.reshape(t, (6, 36))), x4),
        ("transpose", lambda t: _proj(ops.transpose(t, (0, 2, 3, 1))), x4),
        ("getitem", lambda t: _proj(ops.getitem(t, (slice(None), slice(1, 3), slice(0, 5, 2)))), x4),
        ("concat", lambda t: _proj(ops.concat_channels(t, ops.square(t))), x4),
        ("matmul", lambda t: _proj(ops.matmul(ops.reshape(t, (2, 18, 6)), ops.transpose(ops.reshape(t, (2, 18, 6)), (0, 2, 1)))), x4),
        ("linear", lambda t: _proj(ops.linear(ops.reshape(t, (2, 108)), Tensor(np.ones((5, 108), dt) / 7), Tensor(np.arange(5, dtype=dt)))), x4),
        ("conv2d", lambda t: _proj(ops.conv2d(t, w3, b4, 1, 1)), x4),
        ("conv2d_stride2", lambda t: _proj(ops.conv2d(t, w3, b4, 2, 1)), x4),
        ("conv2d_weight", lambda w: _proj(ops.conv2d(x4, w, b4, 2, 1)), w3),
        ("conv2d_1x1", lambda t: _proj(ops.conv2d(t, Tensor(w3.data[:, :, 1:2, 1:2]))), x4),
        ("unfold", lambda t: _proj(ops.unfold(t, 3, 1, 1)), x4),
        ("unfold_stride2", lambda t: _proj(ops.unfold(t, 4, 2, 1)), x4),
        ("fold", lambda t: _proj(ops.fold(t, (6, 6), 3, 1, 1)), r(2, 27, 36)),
        ("fold_normalized", lambda t: _proj(ops.fold(t, (8, 8), 4, 2, 1, normalize=True)), r(2, 48, 16)),
        ("gather_columns", lambda t: _proj(ops.gather_columns(t, idx)), r(2, 4, 16)),
        ("bicubic_up4", lambda t: _proj(ops.bicubic_resize(t, 4)), ex),
        ("bicubic_up2", lambda t: _proj(ops.bicubic_resize(t, 2)), ex),
        ("bicubic_down4", lambda t: _proj(ops.bicubic_resize(t, 0.25)), ex),
        ("pixel_shuffle", lambda t: _proj(ops.pixel_shuffle(t, 2)), r(1, 8, 3, 3)),
        ("space_to_depth", lambda t: _proj(ops.space_to_depth(t, 2)), x4),
        ("pool_avg", lambda t: _proj(ops.pool2x2(t, "avg")), x4),
        ("pool_max", lambda t: _proj(ops.pool2x2(t, "max")), pool_in),
        ("upsample_nearest", lambda t: _proj(ops.upsample_nearest(t, 2)), x4),
        ("l2_normalize", lambda t: _proj(ops.l2_normalize(t, axis=1)), x4),
        ("max_with_argmax", lambda t: _proj(ops.max_with_argmax(t)[0]), rows),
    ]


def _jitter_biases(module, seed):
    # Zero-initialized biases put relu inputs exactly on the kink wherever a
    # whole receptive field is zero; finite differences are invalid there.
    rng = np.random.default_rng(seed)
    for name, p in module.named_parameters():
        if name.endswith("bias"):
            p.data += rng.normal(0.0, 0.1, p.shape).astype(p.dtype)
    return module


def _small_generator(dt, csfi=True):
    cfg = GeneratorConfig(base_channels=4, blocks=(1, 1, 1, 1), csfi=csfi, lte_width=4, seed=3)
    return _jitter_biases(Generator(cfg).to(dt), 11)


def _model_cases(rng, dt):
    lr = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(dt))
    ref = Tensor(rng.uniform(-1, 1, (1, 3, 32, 32)).astype(dt))
    hr = Tensor(rng.uniform(-1, 1, (1, 3, 32, 32)).astype(dt))
    q = Tensor(rng.standard_normal((1, 4, 6, 6)).astype(dt))
    k = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(dt))
    lte = _jitter_biases(LTE(np.random.default_rng(5), width=4).to(dt).assign_names(), 12)
    tt = _jitter_biases(TextureTransformer(4, 3, np.random.default_rng(6), lte_width=4).to(dt).assign_names(), 13)
    gen = _small_generator(dt)
    gen_plain = _small_generator(dt, csfi=False)
    disc = _jitter_biases(Discriminator(32, seed=7).to(dt), 14)
    plug = lambda img: lte(img).level3  # noqa: E731

    def relevance_soft(t):
        return _proj(attention_maps(relevance_embedding(t, k)).soft)

    def relevance_key(t):
        return _proj(attention_maps(relevance_embedding(q, t)).soft)

    def transferred(v_img):
        st = search(lte, ops.bicubic_resize(lr, 4), ref, ref)
        feats = lte(v_img)
        t = transfer(feats, st.maps.hard, DEFAULT_GEOMETRY, st.relevance.query_grid)
        return _proj(t.level1) + _proj(t.level2, 2) + _proj(t.level3, 3)

    def transformer(x_lr):
        lr_up = ops.bicubic_resize(x_lr, 4)
        st = search(lte, lr_up, ref, ref)
        f = ops.reshape(ops.getitem(ops.concat_channels(x_lr, x_lr), (slice(None), slice(0, 4))), (1, 4, 8, 8))
        return _proj(tt(f, st))

    s_map = Tensor(np.abs(rng.standard_normal((1, 1, 4, 4))).astype(dt))
    t_fuse = Tensor(rng.standard_normal((1, 16, 8, 8)).astype(dt))

    def fuse(f):
        return _proj(soft_fuse(f, t_fuse, s_map, tt.fuse))

    cases = [
        ("relevance_query", relevance_soft, q, None),
        ("relevance_key", relevance_key, k, None),
        ("transfer", transferred, ref, None),
        ("soft_fuse", fuse, Tensor(rng.standard_normal((1, 4, 8, 8)).astype(dt)), None),
        ("texture_transformer_lr", transformer, lr, None),
        ("texture_transformer_params", lambda: transformer(lr), None, lte.parameters() + tt.parameters()),
        ("generator_lr", lambda t: _proj(gen(t, ref)[0]), lr, None),
        ("generator_ref", lambda t: _proj(gen(lr, t)[0]), ref, None),
        ("generator_params", lambda: _proj(gen(lr, ref)[0]), None, gen.parameters()),
        ("generator_no_csfi_params", lambda: _proj(gen_plain(lr, ref)[0]), None, gen_plain.parameters()),
        ("discriminator_input", lambda t: ops.sum(disc(t)), hr, None),
        ("discriminator_params", lambda: ops.sum(disc(hr)), None, disc.parameters()),
        ("rec_loss", lambda t: rec_loss(t, hr), Tensor(hr.data + 0.1 + rng.uniform(0, 1, hr.shape).astype(dt)), None),
        ("perceptual_loss", lambda t: perceptual_loss(t, hr, plug), ref, None),
        ("transferal_perceptual_loss",
         lambda t: transferal_perceptual_loss(t, Tensor(np.ones((1, 16, 8, 8), dt)), lte), ref, None),
    ]
    return cases


def run_battery(dtype=np.float64, seed=0, eps=None, include_models=True):
    """Returns [(name, relative error)] for every case."""
    dt = np.dtype(dtype).type
    eps = (1e-6 if dt is np.float64 else 1e-3) if eps is None else eps
    rng = np.random.default_rng(seed)
    results = []
    for name, f, x in _op_cases(rng, dt):
        results.append((name, input_grad_error(f, x, eps)))
    if include_models:
        for name, f, x, params in _model_cases(rng, dt):
            if params is None:
                results.append((name, input_grad_error(f, x, eps, max_probes=48,
                                                       rng=np.random.default_rng(seed))))
            else:
                results.append((name, param_grad_error(f, params, eps, per_param=3, rng=np.random.default_rng(seed))))
    return results
