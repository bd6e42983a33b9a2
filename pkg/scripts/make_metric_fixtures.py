"""Write tests/fixtures/metric_cases.jsonl from a brute-force oracle.

The oracle shares no code with cake.metrics: n-gram tables are built by
enumerating every window, clipping is done by explicit list counting, and
LCS follows the recursive definition.
"""

import json
import math
import sys
from functools import lru_cache
from pathlib import Path

CASES = [
    ("the cat sat", ["the cat sat on the mat"]),
    ("a b c", ["a b d"]),
    ("a c b", ["a b c"]),
    ("the cat sat on the mat", ["the cat sat on the mat"]),
    ("x y z", ["a b c"]),
    ("i think it grossed $ 110,000,082 .", ["it made $ 110,000,082 ."]),
    ("i think ent3 likes val4 val9", ["i think ent3 likes val4 val9", "ent3 likes val4 val9 ."]),
    ("i think ent3 likes val4", ["i think ent3 likes val4 val9"]),
    ("a a a a", ["a a b"]),
    ("a b a b a b", ["a b", "b a b a"]),
    ("one", ["one"]),
    ("one two", ["two one"]),
    ("the the the the the the the", ["the cat is on the mat"]),
    ("my favorite character was david drayton", ["my favorite character was the main protagonist , david drayton ."]),
    ("i agree , fun , august , action movie", ["i agree it was fun", "action movie in august"]),
    ("b c d e f", ["a b c d e f g"]),
    ("a b c d e f g h", ["a b c d", "e f g h"]),
    ("q r s", ["q r s", "q r s"]),
    ("one of the best horror films i've seen", ["the ending was one of the best i've seen ."]),
    ("z", ["a b c d e"]),
]


def windows(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def clipped_overlap(hyp_grams, ref_grams):
    total = 0
    for g in set(hyp_grams):
        total += min(hyp_grams.count(g), ref_grams.count(g))
    return total


def f1(overlap, nh, nr):
    if nh == 0 or nr == 0 or overlap == 0:
        return 0.0
    p, r = overlap / nh, overlap / nr
    return 100.0 * 2 * p * r / (p + r)


def rouge_n(h, r, n):
    hg, rg = windows(h, n), windows(r, n)
    return f1(clipped_overlap(hg, rg), len(hg), len(rg))


def lcs(a, b):
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def rouge_l(h, r):
    return f1(lcs(h, r), len(h), len(r))


def bleu(h, refs):
    if not h:
        return 0.0
    logs = []
    for n in range(1, 5):
        hg = windows(h, n)
        if not hg:
            continue
        m = 0
        for g in set(hg):
            m += min(hg.count(g), max(windows(r, n).count(g) for r in refs))
        logs.append(math.log((m if m > 0 else 1e-9) / len(hg)))
    ref_len = sorted(refs, key=lambda r: (abs(len(r) - len(h)), len(r)))[0]
    c, rl = len(h), len(ref_len)
    bp = 1.0 if c > rl else math.exp(1 - rl / c)
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def expected(hyp, refs):
    h = hyp.split()
    rs = [r.split() for r in refs]
    return {
        "bleu_sr": bleu(h, rs[:1]),
        "bleu_mr": bleu(h, rs),
        "rouge1_sr": rouge_n(h, rs[0], 1),
        "rouge2_sr": rouge_n(h, rs[0], 2),
        "rougeL_sr": rouge_l(h, rs[0]),
        "rouge1_mr": max(rouge_n(h, r, 1) for r in rs),
        "rouge2_mr": max(rouge_n(h, r, 2) for r in rs),
        "rougeL_mr": max(rouge_l(h, r) for r in rs),
    }


def main(out):
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        for hyp, refs in CASES:
            fh.write(json.dumps({"hyp": hyp, "refs": refs, "expected": expected(hyp, refs)}) + "\n")
    print(f"wrote {len(CASES)} cases to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "tests/fixtures/metric_cases.jsonl")
