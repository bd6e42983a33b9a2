"""Acceptance criteria, one test each.  Every test records a PASS/FAIL line
that is printed in the terminal summary."""

import math
import time

import numpy as np

from cake import diffmath as dm
from cake.ablations import equivalence_losses
from cake.corpus import BOS, EOS, Example
from cake.experiment import desk_config, synthetic_splits
from cake.generator import greedy_decode, mix
from cake.diffmath import Array
from cake.metrics import evaluate_corpus
from cake.model import Model, ModelDims
from cake.training import load_checkpoint, save_checkpoint, train
from cake.viz import load_trace, read_pgm, save_trace, trace_pair, write_panels

from _cases import OP_CASES, op_case_max_error
from helpers import perturb, toy_examples
from test_metrics import fixture_mismatches


def record(log, key, ok, detail):
    log[key] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
    assert ok, detail


def toy_instance():
    """I=4 background tokens (one copy-only), J=3 context tokens, T=2 targets."""
    V = 12
    return Example(background_ids=[5, 6, 1, 7], context_ids=[8, 9, 10], response_ids=[BOS, V, EOS],
                   ext_map={2: V}, ext_tokens=["zq1"], background_tokens=["a", "b", "zq1", "c"],
                   context_tokens=["d", "e", "f"], references=[["zq1"]], vocab_size=V), V


def test_c1_gradient_integrity(acceptance_log):
    t0 = time.perf_counter()
    worst_op, worst_kind = 0.0, None
    for kind in OP_CASES:
        for seed in range(10):
            err = op_case_max_error(kind, seed)
            if err > worst_op:
                worst_op, worst_kind = err, kind
    ex, V = toy_instance()
    model = perturb(Model("cake", V, ModelDims(3, 2), seed=0, dtype=np.float64), 0.5, 1)
    batch = model.make_batch([ex])
    params = model.params.values()
    model_err = dm.grad_check(lambda ps: model.loss(batch), params)
    seconds = time.perf_counter() - t0
    ok = worst_op <= 1e-4 and model_err <= 1e-3 and seconds <= 120
    record(acceptance_log, "1", ok,
           f"{len(OP_CASES)} op kinds x 10 cases max rel err {worst_op:.2e} ({worst_kind}); "
           f"full CaKe loss over {model.params.count()} entries {model_err:.2e}; {seconds:.1f}s")


def test_c2_distribution_invariants(acceptance_log):
    worst = 0.0
    bad = []
    for draw in range(100):
        examples, V = toy_examples(2, seed=draw % 40)
        model = perturb(Model("cake", V, ModelDims(3, 2), seed=draw), 1.0, draw)
        batch = model.make_batch(examples)
        enc, (P_final, P_vocab, P_bg, p_gen) = model.teacher_forced(batch)
        step = model.decode_step(enc, model.initial_state(enc), np.full(len(examples), BOS))
        sums = [P_final.data.sum(-1)[batch.tgt_mask], P_vocab.data.sum(-1), P_bg.data.sum(-1),
                step.gamma.data.sum(-1), enc.static.alpha.data.sum(-1)[batch.bg_mask],
                enc.static.beta.data.sum(-1)]
        worst = max(worst, max(float(np.abs(s - 1).max()) for s in sums))
        ext = P_final.data[..., V:].sum(-1)
        if np.any(ext > 1 - p_gen.data + 1e-6) or not np.all((p_gen.data > 0) & (p_gen.data < 1)):
            bad.append(draw)
    ok = worst <= 1e-6 and not bad
    record(acceptance_log, "2", ok, f"100 draws, max |sum-1| {worst:.2e}, gate/mass violations {len(bad)}")


def test_c3_mixture_identities(acceptance_log):
    rng = np.random.default_rng(0)
    Pv = rng.dirichlet(np.ones(10))
    out = mix(Array(Pv), Array([0.4, 0.6]), Array(1.0), [3, 10], 1).data
    closed = bool(np.array_equal(out[:10], Pv.astype(out.dtype)) and out[10] == 0.0)
    dup = mix(Array(np.full(10, 0.1)), Array([0.2, 0.3, 0.5]), Array(0.0), [5, 5, 7], 0).data
    scatter = math.isclose(dup[5], 0.5, abs_tol=1e-7) and math.isclose(dup[7], 0.5, abs_tol=1e-7)
    scatter = scatter and float(np.delete(dup, [5, 7]).sum()) == 0.0
    record(acceptance_log, "3", closed and scatter,
           f"p_gen=1 gives P_vocab with zero extended mass: {closed}; duplicate scatter-add [w,w,z] -> "
           f"w={dup[5]:.6f} z={dup[7]:.6f}")


def test_c4_equivalence_harness(acceptance_log):
    examples, V = toy_examples(20, seed=9)
    pairs = equivalence_losses(examples, V, ModelDims(8, 6), seed=4)
    worst = max(abs(a - b) for a, b in pairs)
    record(acceptance_log, "4", len(pairs) == 20 and worst <= 1e-6,
           f"20 examples, max |loss_cake(gttp logits) - loss_gttp| = {worst:.2e}")


def test_c5_synthetic_ordering(synthetic_run, acceptance_log):
    r = synthetic_run
    cake, gttp, s2sa = (r.median(v) for v in ("cake", "gttp", "s2sa"))
    per_seed = {v: [round(r.runs[v][s]["sr"]["ROUGE-1"], 2) for s in sorted(r.runs[v])] for v in r.runs}
    ok = cake >= 60 and cake - gttp >= 5 and cake > s2sa and gttp > s2sa and r.seconds <= 45 * 60
    record(acceptance_log, "5", ok,
           f"median test ROUGE-1 cake {cake:.2f}, gttp {gttp:.2f}, s2sa {s2sa:.2f}; per seed {per_seed}; "
           f"{r.seconds / 60:.1f} min")


def test_c6_training_sanity(synthetic_run, acceptance_log):
    ratios, finite = {}, True
    for variant, seeds in synthetic_run.runs.items():
        for seed, run in seeds.items():
            losses = [rec["train_loss"] for rec in run["log"]]
            finite = finite and all(math.isfinite(v) for v in losses)
            ratios[f"{variant}/{seed}"] = round(losses[4] / losses[0], 3)
    ok = finite and all(v < 0.8 for v in ratios.values())
    record(acceptance_log, "6", ok, f"epoch-5 / epoch-1 train loss {ratios}; all finite: {finite}")


def test_c7_metric_oracle(acceptance_log):
    bad = fixture_mismatches()
    same = [["the", "cat", "sat", "down"]]
    ident = evaluate_corpus(same, [same], "sr")
    disjoint = evaluate_corpus([["a", "b", "c", "d"]], [[["w", "x", "y", "z"]]], "sr")
    ok = not bad and all(abs(v - 100) < 1e-9 for v in ident.values()) and all(v < 1e-6 for v in disjoint.values())
    record(acceptance_log, "7", ok, f"20-case fixture mismatches: {len(bad)}; identity {ident}; disjoint {disjoint}")


def test_c8_persistence_and_determinism(synthetic_run, acceptance_log, tmp_path):
    r = synthetic_run
    seed = sorted(r.runs["cake"])[0]
    model = r.runs["cake"][seed]["model"]
    cfg = desk_config(vocab_cap=len(r.vocab), seed=seed)
    save_checkpoint(tmp_path / "cake.ckpt", model, cfg)
    loaded = load_checkpoint(tmp_path / "cake.ckpt").build_model(r.vocab)
    same_decode = greedy_decode(loaded, r.test, 30) == greedy_decode(model, r.test, 30)

    train_set, dev_set, _, vocab = synthetic_splits()
    small = desk_config(vocab_cap=len(vocab), epochs=3, seed=11)
    logs = []
    for k in range(2):
        path = tmp_path / f"log{k}.jsonl"
        train(small, train_set[:300], dev_set[:50], vocab, log_path=path)
        logs.append(path.read_text())
    same_logs = logs[0] == logs[1] and len(logs[0].splitlines()) == 3
    record(acceptance_log, "8", same_decode and same_logs,
           f"reloaded checkpoint decodes {len(r.test)} test examples identically: {same_decode}; "
           f"two seeded runs give identical logs: {same_logs}")


def test_c9_visualization(synthetic_run, acceptance_log, tmp_path):
    r = synthetic_run
    seed = sorted(r.runs["cake"])[0]
    ex = next(e for e in r.test if e.ext_size and any(i >= len(r.vocab) for i in e.response_ids))
    cake, base = trace_pair(r.runs["cake"][seed]["model"], r.runs["gttp"][seed]["model"], ex)
    save_trace(cake, tmp_path / "pair.json", baseline=base)
    written = write_panels(load_trace(tmp_path / "pair.json"), tmp_path / "panels")
    names = sorted(p.name for p in written)
    shapes_ok = read_pgm(tmp_path / "panels" / "a_b2c.pgm").shape == (len(ex.background_ids), len(ex.context_ids))
    panels_ok = names == ["a_b2c.pgm", "b_c2b.pgm", "c_preselection.pgm", "d_baseline.pgm"] and shapes_ok
    acc = r.copy_accuracy
    med = float(np.median(list(acc.values())))
    record(acceptance_log, "9", panels_ok and med >= 0.8,
           f"panels {names}; copy-step argmax accuracy per seed "
           f"{ {s: round(a, 3) for s, a in acc.items()} } median {med:.3f}")
