"""Attention trace export and knowledge-selection heatmaps (ASCII PGM)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import Example
from .generator import AttentionTrace, decode

PANELS = (
    ("a_b2c", "alpha", "b2c attention: background rows, context columns"),
    ("b_c2b", "beta", "c2b attention over background positions"),
    ("c_preselection", "p_background", "pre-selection distribution: decode steps x background"),
    ("d_baseline", "p_background", "baseline knowledge distribution: decode steps x background"),
)
FLAT_GRAY = 128


class TraceError(ValueError):
    pass


def save_trace(trace: AttentionTrace, path, baseline: Optional[AttentionTrace] = None) -> None:
    obj = trace.to_json()
    if baseline is not None:
        obj["baseline"] = baseline.to_json()
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def trace_pair(model, baseline_model, example: Example, max_len: int = 30):
    """Greedy traces of two models on one example."""
    _, tr = decode(model, example, "greedy", max_len=max_len, trace=True)
    _, base = decode(baseline_model, example, "greedy", max_len=max_len, trace=True)
    return tr, base


def _matrix(obj, key, what) -> np.ndarray:
    val = obj.get(key)
    if val is None:
        raise TraceError(f"trace field {key!r} is missing ({what})")
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError) as e:
        raise TraceError(f"trace field {key!r} is not numeric: {e}") from None
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.size == 0:
        raise TraceError(f"trace field {key!r} must be a non-empty matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise TraceError(f"trace field {key!r} has non-finite values")
    return arr


def _check_trace(obj) -> None:
    if not isinstance(obj, dict):
        raise TraceError("trace must be a JSON object")
    for key in ("dims", "background_tokens", "context_tokens"):
        if key not in obj:
            raise TraceError(f"trace field {key!r} is missing")
    dims = obj["dims"]
    if not isinstance(dims, dict) or not {"I", "J", "T"} <= set(dims):
        raise TraceError("trace field 'dims' needs I, J and T")
    if len(obj["background_tokens"]) != dims["I"] or len(obj["context_tokens"]) != dims["J"]:
        raise TraceError("token labels do not match dims")


def load_trace(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise TraceError(f"trace is not valid JSON: line {e.lineno}: {e.msg}") from None
    _check_trace(obj)
    if "baseline" in obj:
        _check_trace(obj["baseline"])
    return obj


def to_gray(matrix: np.ndarray) -> np.ndarray:
    """Linear map of the matrix range onto 0..255; a flat matrix is mid-gray."""
    m = np.asarray(matrix, dtype=float)
    lo, hi = m.min(), m.max()
    if hi - lo <= 1e-12:
        return np.full(m.shape, FLAT_GRAY, dtype=np.int64)
    return np.rint((m - lo) / (hi - lo) * 255).astype(np.int64)


def pgm_text(matrix: np.ndarray) -> str:
    g = to_gray(matrix)
    rows = [" ".join(str(v) for v in row) for row in g]
    return f"P2\n{g.shape[1]} {g.shape[0]}\n255\n" + "\n".join(rows) + "\n"


def read_pgm(path) -> np.ndarray:
    toks = Path(path).read_text().split()
    if toks[0] != "P2":
        raise TraceError(f"{path}: not an ASCII graymap")
    w, h = int(toks[1]), int(toks[2])
    return np.array(toks[4:4 + w * h], dtype=np.int64).reshape(h, w)


def panel_matrices(obj: dict) -> dict:
    """Panel name -> (matrix, row labels, column labels, caption)."""
    bg, ctx, out = obj["background_tokens"], obj["context_tokens"], obj.get("output_tokens", [])
    steps = lambda n: [out[t] if t < len(out) else "<eos>" for t in range(n)]
    panels = {}
    alpha = _matrix(obj, "alpha", "b2c attention")
    panels["a_b2c"] = (alpha, bg, ctx)
    panels["b_c2b"] = (_matrix(obj, "beta", "c2b attention"), ["context"], bg)
    p = _matrix(obj, "p_background", "pre-selection")
    panels["c_preselection"] = (p, steps(p.shape[0]), bg)
    base = obj.get("baseline")
    if base is not None:
        pb = _matrix(base, "p_background", "baseline distribution")
        bsteps = base.get("output_tokens", [])
        panels["d_baseline"] = (pb, [bsteps[t] if t < len(bsteps) else "<eos>" for t in range(pb.shape[0])],
                                base["background_tokens"])
    return panels


def write_panels(obj: dict, out_dir) -> list[Path]:
    """One PGM per panel plus ``panels.json`` with labels and captions."""
    out_dir = Path(out_dir)
    panels = panel_matrices(obj)
    out_dir.mkdir(parents=True, exist_ok=True)
    written, side = [], {}
    captions = {name: cap for name, _, cap in PANELS}
    for name, (m, rows, cols) in panels.items():
        path = out_dir / f"{name}.pgm"
        path.write_text(pgm_text(m))
        written.append(path)
        side[name] = {"file": path.name, "caption": captions[name], "rows": list(rows), "columns": list(cols),
                      "shape": list(m.shape), "min": float(m.min()), "max": float(m.max())}
    if "d_baseline" not in panels:
        side["d_baseline"] = {"missing": "trace has no baseline; pass a trace pair"}
    (out_dir / "panels.json").write_text(json.dumps(side, indent=2))
    return written


def copy_step_accuracy(model, examples: list[Example]) -> float:
    """Fraction of copy-only target steps (teacher forced) where the argmax of
    the background distribution is the gold source position."""
    hits = total = 0
    V = model.vocab_size
    for ex in examples:
        batch = model.make_batch([ex])
        _, (_, _, P_bg, _) = model.teacher_forced(batch)
        if P_bg is None:
            raise ValueError("variant has no background distribution")
        src = np.asarray(ex.background_ext_ids())
        for t, tgt in enumerate(ex.response_ids[1:]):
            if tgt < V:
                continue
            gold = np.flatnonzero(src == tgt)
            if len(gold) != 1:
                continue
            total += 1
            hits += int(P_bg.data[0, t].argmax() == gold[0])
    if total == 0:
        raise ValueError("no copy steps in the given examples")
    return hits / total
