import numpy as np
import pytest

from ttsr import bench
from ttsr.autograd import Tensor
from ttsr.data import make_lr, synthetic_texture, to_tensor, upsample4
from ttsr.diagnostics import (LR_LEVEL, lr_as_ref, relevance_level_eval, table_csv,
                              transferred_image, transferred_image_viz)
from ttsr.network import Generator, GeneratorConfig
from ttsr.nn import zero_module
from ttsr.texture import LTE

import oracles
from cases import shifted_case


# transferred-image view

@pytest.mark.parametrize("seed", range(3))
def test_viz_identity_ref(seed):
    r = np.random.default_rng(seed)
    lr = make_lr(synthetic_texture(r, 64, max_freq=8))
    lte = LTE(np.random.default_rng(seed), width=16).to(np.float64)
    lrt = to_tensor(lr, np.float64)
    ref = upsample4(lrt)
    img, hard = transferred_image(lrt, ref, lte)
    assert img.shape == ref.shape
    np.testing.assert_array_equal(hard[0], np.arange(256))
    assert np.abs(img - ref.data).max() < 1e-5


@pytest.mark.parametrize("shift", [4, 8, 12])
def test_viz_shifted_ref_interior(shift):
    lr, up, ref = shifted_case(0, shift=shift)
    img, _ = transferred_image(lr, ref, LTE(np.random.default_rng(1), width=16).to(np.float64))
    m = shift + 16  # extractor reach plus the shift itself
    assert np.abs(img - up)[:, :, m:-m, m:-m].max() < 1e-5


def test_viz_u8_extents_and_errors(rng):
    lr = rng.integers(0, 256, (6, 8, 3), dtype=np.uint8)
    out = transferred_image_viz(lr, lr_as_ref(lr), LTE(width=4))
    assert out.shape == (24, 32, 3) and out.dtype == np.uint8
    with pytest.raises(ValueError):
        transferred_image_viz(lr, rng.integers(0, 256, (26, 32, 3), dtype=np.uint8), LTE(width=4))


def test_viz_accepts_generator(rng):
    gen = Generator(GeneratorConfig(base_channels=4, blocks=(1, 1, 1, 1), lte_width=4))
    lr = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    a = transferred_image_viz(lr, lr_as_ref(lr), gen)
    b = transferred_image_viz(lr, lr_as_ref(lr), gen.lte)
    np.testing.assert_array_equal(a, b)


# reference-level table

def _items(rng, n=2):
    items = []
    for _ in range(n):
        hr = synthetic_texture(rng, 32)
        items.append({"lr": make_lr(hr), "hr": hr,
                      "refs": {"gt": hr, "other": synthetic_texture(rng, 32)}})
    return items


def test_constant_model_level_independent(rng):
    gen = Generator(GeneratorConfig(base_channels=4, blocks=(1, 1, 1, 1), lte_width=4))
    zero_module(gen)
    rows = relevance_level_eval(gen, _items(rng), ["gt", "other", LR_LEVEL])
    assert len({(p, s) for _, p, s, _ in rows}) == 1
    csv_text = table_csv(rows)
    assert csv_text.splitlines()[0] == "level,psnr,ssim,n"
    assert len(csv_text.splitlines()) == 1 + 3


def test_level_eval_matches_direct_metrics(rng):
    items = _items(rng, 1)
    fake = lambda lr, ref: ref  # noqa: E731  "model" that returns its reference
    rows = relevance_level_eval(None, items, ["gt", "other"], sr_fn=fake)
    assert rows[0][1] == 100.0
    assert rows[1][1] == pytest.approx(oracles.psnr_y(items[0]["refs"]["other"], items[0]["hr"]))


def test_level_eval_missing_variant(rng):
    with pytest.raises(KeyError, match="missing"):
        relevance_level_eval(None, _items(rng), ["nope"], sr_fn=lambda lr, ref: ref)
    with pytest.raises(ValueError):
        relevance_level_eval(None, [], ["gt"])


# benchmark

def test_naive_relevance_matches_oracle(rng):
    q, k = rng.standard_normal((2, 3, 5, 6))
    np.testing.assert_allclose(bench.naive_relevance(q, k), oracles.relevance(q, k), atol=1e-12)


def test_bench_degenerate_size():
    rows = bench.run(sizes=(1,), channels=4, repeats=1, backends=False)
    rel = [r for r in rows if r[0] == "relevance"]
    assert {r[1] for r in rel} >= {"naive"}
    assert all(r[2] == r[3] == 1 for r in rel)
    text = bench.rows_csv(rows)
    assert text.splitlines()[0] == "op,backend,lq,lk,seconds,throughput"
    assert bench.speedup(rows, 1) > 0


def test_bench_backends_rows():
    rows = bench.bench_backends(size=8, channels=8, repeats=1)
    from ttsr import kernels
    assert {r[1] for r in rows} == set(kernels.available_backends())
    assert {r[0] for r in rows} == {"im2col", "col2im", "search"}
