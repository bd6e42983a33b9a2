import math

import numpy as np
import pytest

from cake.ablations import equivalence_losses, gttp_background_dist, manifest_diff, run_comparison, s2sa_step
from cake.corpus import encode_corpus
from cake.diffmath import Array
from cake.generator import init_attention, init_generator_params
from cake.model import Model, ModelDims
from cake.params import ParamStore
from cake.training import TrainConfig

from helpers import toy_corpus, toy_examples


def f64(x):
    return Array(np.asarray(x, dtype=np.float64))


def attn_store(seed=0, d2=4, D=4):
    store = ParamStore(seed, np.float64)
    init_attention(store, "attn_bg", d2, D, D)
    rng = np.random.default_rng(seed)
    for n in store.names():
        store[n].data = rng.uniform(-0.7, 0.7, store[n].shape)
    return store


def test_gttp_zero_scorer_uniform():
    store = attn_store()
    store["attn_bg.v"].data[:] = 0
    P = gttp_background_dist(f64(np.ones((1, 5, 4))), f64(np.ones((1, 4))), store)
    np.testing.assert_allclose(P.data, 0.2)


def test_gttp_scalar_oracle():
    store = attn_store(3)
    rng = np.random.default_rng(1)
    hb, h = rng.normal(size=(4, 4)), rng.normal(size=4)
    W, V, b, v = (store[f"attn_bg.{k}"].data for k in ("W_c", "V", "b_c", "v"))
    e = [sum(v[a] * math.tanh(hb[i] @ W[:, a] + h @ V[:, a] + b[a]) for a in range(4)) for i in range(4)]
    ex = np.exp(np.array(e) - max(e))
    P = gttp_background_dist(f64(hb[None]), f64(h[None]), store)
    np.testing.assert_allclose(P.data[0], ex / ex.sum(), atol=1e-12)
    np.testing.assert_allclose(P.data.sum(), 1.0, atol=1e-6)


def test_s2sa_step_is_a_vocab_distribution():
    store = attn_store(2)
    init_generator_params(store, 12, 3, 2, 4, gate=False, vocab_in=4 + 4 + 4)
    rng = np.random.default_rng(0)
    P = s2sa_step(f64(rng.normal(size=(2, 5, 4))), f64(rng.normal(size=(2, 4))), f64(rng.normal(size=(2, 4))),
                  store)
    assert P.shape == (2, 12)
    np.testing.assert_allclose(P.data.sum(-1), 1.0, atol=1e-9)


def test_manifest_diff_gttp_vs_cake():
    dims = ModelDims(4, 3)
    cake, gttp, s2sa = (Model(v, 30, dims) for v in ("cake", "gttp", "s2sa"))
    only_cake, only_gttp, changed = manifest_diff(cake, gttp)
    assert all(n.startswith("presel.") for n in only_cake) and only_cake
    assert only_gttp == ["attn_bg.V", "attn_bg.W_c", "attn_bg.b_c", "attn_bg.v"]
    assert changed == []
    only_gttp, only_s2sa, changed = manifest_diff(gttp, s2sa)
    assert only_gttp == ["gate.b_gen", "gate.w_c", "gate.w_s", "gate.w_x"]
    assert only_s2sa == [] and changed == ["gen.W_v"]


def test_equivalence_harness():
    examples, V = toy_examples(20, seed=4)
    pairs = equivalence_losses(examples, V, ModelDims(4, 3), seed=3)
    assert len(pairs) == 20
    for a, b in pairs:
        assert abs(a - b) <= 1e-6


def test_run_comparison_shape_and_errors(tmp_path):
    raw, vocab = toy_corpus(40, seed=2)
    ex = encode_corpus(raw, vocab)
    cfg = TrainConfig(emb_dim=4, hidden=3, epochs=1, batch_size=16, vocab_cap=len(vocab), max_decode_len=6)
    report, runs = run_comparison(cfg, ex[:24], ex[24:32], ex[32:], vocab, seeds=(1,), out_dir=tmp_path)
    assert set(report.rows) == {"cake", "gttp", "s2sa"}
    assert all(set(r) == {"SR", "MR"} for r in report.rows.values())
    assert {"config_hash", "seeds"} <= set(report.meta)
    assert (tmp_path / "report.json").exists() and (tmp_path / "report.txt").exists()
    _, other = toy_corpus(10, vocab_cap=20)
    with pytest.raises(ValueError):
        run_comparison(cfg, ex[:24], ex[24:32], ex[32:], other, seeds=(1,))
