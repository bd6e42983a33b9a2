"""Corpus BLEU-4 and ROUGE-1/2/L (F1), single- and multi-reference."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

BLEU_EPS = 1e-9
METRICS = ("BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L")

Tokens = Sequence[str]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[Tokens], reference_sets: Sequence[Sequence[Tokens]], max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100].

    Clipped n-gram matches are pooled over the corpus.  Orders for which the
    hypotheses contain no n-grams at all are left out of the geometric mean;
    an order with n-grams but no matches contributes ``1e-9`` matches.
    """
    if not hypotheses:
        raise ValueError("bleu: empty hypothesis set")
    if len(hypotheses) != len(reference_sets):
        raise ValueError("bleu: hypotheses and references are not aligned")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, reference_sets):
        if not refs:
            raise ValueError("bleu: example without references")
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            h = ngrams(hyp, n)
            best: Counter = Counter()
            for r in refs:
                best |= ngrams(r, n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in h.items())
            totals[n - 1] += sum(h.values())
    if hyp_len == 0:
        return 0.0
    logs = [math.log(max(m, BLEU_EPS) / t) for m, t in zip(matches, totals) if t > 0]
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def _f1(overlap: float, hyp_total: int, ref_total: int) -> float:
    if hyp_total == 0 or ref_total == 0 or overlap == 0:
        return 0.0
    p = overlap / hyp_total
    r = overlap / ref_total
    return 100.0 * 2 * p * r / (p + r)


def rouge_n(hypothesis: Tokens, reference: Tokens, n: int) -> float:
    if n not in (1, 2):
        raise ValueError("rouge_n supports n in {1, 2}")
    h, r = ngrams(hypothesis, n), ngrams(reference, n)
    return _f1(sum((h & r).values()), sum(h.values()), sum(r.values()))


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Tokens, reference: Tokens) -> float:
    return _f1(lcs_length(hypothesis, reference), len(hypothesis), len(reference))


def evaluate_corpus(hypotheses: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
                    mode: str = "sr") -> dict[str, float]:
    """One Table-1 style row.

    ``sr`` scores against the first reference only.  ``mr`` takes the
    per-example maximum over references for ROUGE and uses all references
    jointly for BLEU.
    """
    mode = mode.lower()
    if mode not in ("sr", "mr"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(hypotheses) != len(references):
        raise ValueError("outputs are not aligned with the corpus")
    if any(not refs for refs in references):
        raise ValueError("example without references")
    refsets = [list(r[:1]) for r in references] if mode == "sr" else [list(r) for r in references]
    n = len(hypotheses)
    row = {"BLEU": bleu(hypotheses, refsets)}
    for name, fn in (("ROUGE-1", lambda h, r: rouge_n(h, r, 1)),
                     ("ROUGE-2", lambda h, r: rouge_n(h, r, 2)),
                     ("ROUGE-L", rouge_l)):
        row[name] = sum(max(fn(h, r) for r in refs) for h, refs in zip(hypotheses, refsets)) / n
    return row


@dataclass
class MetricReport:
    rows: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, system: str, mode: str, values: dict[str, float]) -> None:
        self.rows.setdefault(system, {})[mode.upper()] = dict(values)

    def to_json(self) -> dict:
        return {"meta": self.meta, "rows": self.rows}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def render(self) -> str:
        modes = ("SR", "MR")
        head = f"{'system':<10}" + "".join(f"{m + ' ' + md:>14}" for m in METRICS for md in modes)
        lines = [head]
        for system, by_mode in self.rows.items():
            cells = []
            for m in METRICS:
                for md in modes:
                    v = by_mode.get(md, {}).get(m)
                    cells.append(f"{v:>14.2f}" if v is not None else f"{'-':>14}")
            lines.append(f"{system:<10}" + "".join(cells))
        return "\n".join(lines)
