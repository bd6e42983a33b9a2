import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cake.metrics import METRICS, MetricReport, bleu, evaluate_corpus, lcs_length, rouge_l, rouge_n

FIXTURE = Path(__file__).parent / "fixtures" / "metric_cases.jsonl"
KEYS = {"bleu": "BLEU", "rouge1": "ROUGE-1", "rouge2": "ROUGE-2", "rougeL": "ROUGE-L"}


def load_cases():
    return [json.loads(line) for line in FIXTURE.read_text().splitlines() if line.strip()]


def fixture_mismatches():
    bad = []
    for k, case in enumerate(load_cases()):
        hyp, refs = case["hyp"].split(), [r.split() for r in case["refs"]]
        for mode in ("sr", "mr"):
            got = evaluate_corpus([hyp], [refs], mode)
            for short, name in KEYS.items():
                want = case["expected"][f"{short}_{mode}"]
                if got[name] != want:
                    bad.append((k, mode, name, got[name], want))
    return bad


def test_fixture_has_twenty_cases():
    assert len(load_cases()) == 20


def test_fixture_matches_exactly():
    assert fixture_mismatches() == []


def test_bleu_brevity_example():
    # unigram to trigram precisions are 1 and there are no 4-grams
    assert bleu([["the", "cat", "sat"]], [[["the", "cat", "sat", "on", "the", "mat"]]]) == pytest.approx(
        100 * math.exp(-1))


def test_bleu_identity_and_disjoint():
    hyp = [["a", "b", "c", "d", "e"], ["x", "y", "z", "w"]]
    assert bleu(hyp, [[h] for h in hyp]) == pytest.approx(100.0)
    assert bleu(hyp, [[["q", "r", "s", "t"]], [["u", "v"]]]) < 1e-6


def test_bleu_rejects_empty():
    with pytest.raises(ValueError):
        bleu([], [])


def test_rouge_examples():
    a, b = "a b c".split(), "a b d".split()
    assert rouge_n(a, b, 1) == pytest.approx(200 / 3)
    assert rouge_n(a, b, 2) == pytest.approx(50.0)
    assert rouge_l("a c b".split(), "a b c".split()) == pytest.approx(200 / 3)
    assert rouge_l(a, a) == 100.0
    assert rouge_l(a, ["x"]) == 0.0
    assert rouge_n([], a, 1) == 0.0


def test_rouge_n_range():
    with pytest.raises(ValueError):
        rouge_n(["a"], ["a"], 3)


def lcs_recursive(a, b):
    if not a or not b:
        return 0
    if a[0] == b[0]:
        return 1 + lcs_recursive(a[1:], b[1:])
    return max(lcs_recursive(a[1:], b), lcs_recursive(a, b[1:]))


tokens = st.lists(st.sampled_from(list("abcde")), min_size=0, max_size=7)


@settings(max_examples=200, deadline=None)
@given(tokens, tokens)
def test_lcs_matches_recursive_definition(a, b):
    assert lcs_length(a, b) == lcs_recursive(a, b)


def longest_bigram_chain(a, b):
    best = 0
    for i in range(len(a)):
        for j in range(len(b)):
            k = 0
            while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                k += 1
            best = max(best, k)
    return best


@settings(max_examples=200, deadline=None)
@given(tokens, tokens)
def test_metric_invariants(h, r):
    for fn in (lambda: rouge_n(h, r, 1), lambda: rouge_n(h, r, 2), lambda: rouge_l(h, r)):
        assert 0.0 <= fn() <= 100.0
    assert lcs_length(h, r) >= longest_bigram_chain(h, r)
    if h:
        assert rouge_l(h, h) == 100.0 and rouge_n(h, h, 1) == 100.0
        assert 0.0 <= bleu([h], [[r or ["z"]]]) <= 100.0 + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=6),
                          st.lists(st.lists(st.sampled_from(list("abcd")), min_size=1, max_size=6),
                                   min_size=1, max_size=3)), min_size=1, max_size=4))
def test_mr_dominates_sr_and_duplicates_are_idempotent(rows):
    hyps = [h for h, _ in rows]
    refs = [r for _, r in rows]
    sr, mr = evaluate_corpus(hyps, refs, "sr"), evaluate_corpus(hyps, refs, "mr")
    for m in ("ROUGE-1", "ROUGE-2", "ROUGE-L"):
        assert mr[m] >= sr[m] - 1e-9
    dup = evaluate_corpus(hyps, [r + [r[0]] for r in refs], "mr")
    assert dup == mr
    single = [r[:1] for r in refs]
    assert evaluate_corpus(hyps, single, "sr") == evaluate_corpus(hyps, single, "mr")


def test_evaluate_corpus_errors():
    with pytest.raises(ValueError):
        evaluate_corpus([["a"]], [[]], "mr")
    with pytest.raises(ValueError):
        evaluate_corpus([["a"]], [[["a"]]], "xr")
    with pytest.raises(ValueError):
        evaluate_corpus([["a"], ["b"]], [[["a"]]], "sr")


def test_report_render_and_json():
    rep = MetricReport(meta={"seeds": [1]})
    for system in ("cake", "gttp", "s2sa"):
        for mode in ("sr", "mr"):
            rep.add(system, mode, {m: 1.5 for m in METRICS})
    obj = json.loads(rep.dumps())
    assert set(obj["rows"]) == {"cake", "gttp", "s2sa"}
    assert set(obj["rows"]["cake"]) == {"SR", "MR"}
    text = rep.render().splitlines()
    assert len(text) == 4 and text[1].startswith("cake")
