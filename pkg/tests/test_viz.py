import json

import numpy as np
import pytest

from cake.generator import AttentionTrace, decode
from cake.model import Model, ModelDims
from cake.viz import TraceError, copy_step_accuracy, load_trace, pgm_text, read_pgm, save_trace, to_gray, write_panels

from helpers import toy_corpus


def fake_trace(I=3, J=2, T=2, variant="cake"):
    tr = AttentionTrace(
        S=np.zeros((I, J)), alpha=np.full((I, J), 1 / J), beta=np.full(I, 1 / I),
        p_background=[np.eye(I)[t % I] for t in range(T)], p_gen=[0.5] * T, gamma=[np.full(J, 1 / J)] * T,
        background_tokens=[f"b{i}" for i in range(I)], context_tokens=[f"c{j}" for j in range(J)],
        output_tokens=[f"o{t}" for t in range(T)], variant=variant)
    return tr


def test_uniform_alpha_is_constant_gray(tmp_path):
    save_trace(fake_trace(), tmp_path / "t.json")
    write_panels(load_trace(tmp_path / "t.json"), tmp_path / "out")
    g = read_pgm(tmp_path / "out" / "a_b2c.pgm")
    assert g.shape == (3, 2) and len(np.unique(g)) == 1


def test_one_hot_rows_have_a_single_white_cell(tmp_path):
    save_trace(fake_trace(T=3), tmp_path / "t.json")
    write_panels(load_trace(tmp_path / "t.json"), tmp_path / "out")
    g = read_pgm(tmp_path / "out" / "c_preselection.pgm")
    assert g.shape == (3, 3)
    assert all((row == 255).sum() == 1 and (row == 0).sum() == 2 for row in g)


def test_pgm_scaling_and_header():
    text = pgm_text(np.array([[0.0, 0.5], [1.0, 0.25]]))
    assert text.splitlines()[:3] == ["P2", "2 2", "255"]
    np.testing.assert_array_equal(to_gray(np.array([2.0, 4.0, 3.0])), [0, 255, 128])


def test_four_panels_with_baseline(tmp_path):
    save_trace(fake_trace(), tmp_path / "t.json", baseline=fake_trace(variant="gttp"))
    written = write_panels(load_trace(tmp_path / "t.json"), tmp_path / "out")
    assert sorted(p.name for p in written) == ["a_b2c.pgm", "b_c2b.pgm", "c_preselection.pgm", "d_baseline.pgm"]
    side = json.loads((tmp_path / "out" / "panels.json").read_text())
    assert side["a_b2c"]["rows"] == ["b0", "b1", "b2"] and side["a_b2c"]["columns"] == ["c0", "c1"]
    assert side["d_baseline"]["shape"] == [2, 3]


def test_malformed_traces_rejected(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(TraceError):
        load_trace(p)
    obj = fake_trace().to_json()
    del obj["dims"]
    p.write_text(json.dumps(obj))
    with pytest.raises(TraceError):
        load_trace(p)
    obj = fake_trace().to_json()
    obj["alpha"] = None
    p.write_text(json.dumps(obj))
    with pytest.raises(TraceError, match="alpha"):
        write_panels(load_trace(p), tmp_path / "o")


def test_real_trace_panels(tmp_path):
    raw, vocab = toy_corpus(3)
    from cake.corpus import encode_corpus
    ex = encode_corpus(raw, vocab)[0]
    cake = Model("cake", len(vocab), ModelDims(4, 3), vocab=vocab)
    gttp = Model("gttp", len(vocab), ModelDims(4, 3), vocab=vocab)
    _, tr = decode(cake, ex, max_len=4, trace=True)
    _, base = decode(gttp, ex, max_len=4, trace=True)
    save_trace(tr, tmp_path / "pair.json", baseline=base)
    written = write_panels(load_trace(tmp_path / "pair.json"), tmp_path / "panels")
    assert len(written) == 4
    assert read_pgm(tmp_path / "panels" / "a_b2c.pgm").shape == (len(ex.background_ids), len(ex.context_ids))


def test_copy_step_accuracy_bounds():
    raw, vocab = toy_corpus(10, seed=1)
    from cake.corpus import encode_corpus
    examples = encode_corpus(raw, vocab)
    acc = copy_step_accuracy(Model("cake", len(vocab), ModelDims(4, 3), vocab=vocab), examples)
    assert 0.0 <= acc <= 1.0
    with pytest.raises(ValueError):
        copy_step_accuracy(Model("s2sa", len(vocab), ModelDims(4, 3), vocab=vocab), examples)
