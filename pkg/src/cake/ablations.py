"""Baselines that share the encoders and generator, and the comparison run."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .corpus import Example, Vocabulary
from .diffmath import Array
from .generator import additive_scores, attention_keys, vocab_distribution
from .metrics import METRICS, MetricReport, evaluate_corpus
from .model import Model, ModelDims
from .params import ParamStore
from .preselector import NEG_INF

log = logging.getLogger(__name__)


def gttp_background_dist(hb: Array, h_dec: Array, store: ParamStore, bg_mask=None) -> Array:
    """Additive attention of decoder states over background columns."""
    keys = attention_keys(hb, store, "attn_bg")
    logits = additive_scores(keys, h_dec, store, "attn_bg")
    if bg_mask is not None:
        m = bg_mask if logits.ndim == 2 else bg_mask[:, None, :]
        logits = dm.masked_fill_const(logits, m, NEG_INF)
    return dm.softmax(logits, axis=-1)


def s2sa_step(hb: Array, hc_context: Array, h_dec: Array, store: ParamStore, bg_mask=None) -> Array:
    """Vocabulary distribution from the decoder state, the context vector and
    an attention read of the background; there is no copy path."""
    P_bg = gttp_background_dist(hb, h_dec, store, bg_mask)
    if P_bg.ndim == 2:
        N, I = P_bg.shape
        read = dm.reshape(dm.matmul(dm.reshape(P_bg, (N, 1, I)), hb), (N, hb.shape[-1]))
    else:
        read = dm.matmul(P_bg, hb)
    return vocab_distribution(h_dec, hc_context, store, extra=read)


def manifest_diff(a: Model, b: Model) -> tuple[list[str], list[str], list[str]]:
    """(only in a, only in b, shared names whose shapes differ)."""
    pa, pb = a.params, b.params
    only_a = sorted(set(pa.names()) - set(pb.names()))
    only_b = sorted(set(pb.names()) - set(pa.names()))
    changed = sorted(n for n in set(pa.names()) & set(pb.names()) if pa[n].shape != pb[n].shape)
    return only_a, only_b, changed


def equivalence_losses(examples: Sequence[Example], vocab_size: int, dims: ModelDims, seed: int = 0):
    """Per-example losses of CaKe with its background logits replaced by the
    GTTP scorer, next to the GTTP model's own losses."""
    cake = Model("cake", vocab_size, dims, seed=seed)
    gttp = Model("gttp", vocab_size, dims, seed=seed)

    def gttp_logits(enc, H, X):
        enc_g = gttp.encode_background_keys(enc)
        return gttp.gttp_logits(enc_g, H)

    out = []
    for ex in examples:
        b = cake.make_batch([ex])
        out.append((float(cake.loss(b, logits_fn=gttp_logits).data), float(gttp.loss(b).data)))
    return out


def _config_hash(config) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_comparison(config, train_set: list[Example], dev_set: list[Example], test_set: list[Example],
                   vocab: Vocabulary, seeds: Sequence[int] = (1, 2, 3),
                   variants: Sequence[str] = ("cake", "gttp", "s2sa"), out_dir=None,
                   keep_models: bool = False):
    """Train every variant for every seed and report median test metrics.

    Returns ``(report, runs)`` where ``runs[variant][seed]`` holds the
    per-seed metrics, epoch logs and (optionally) the trained model.
    """
    from .training import decode_corpus, save_checkpoint, train

    for ex in list(train_set[:1]) + list(dev_set[:1]) + list(test_set[:1]):
        if ex.vocab_size != len(vocab):
            raise ValueError("all corpora must be encoded with the shared vocabulary")
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    runs: dict = {}
    for variant in variants:
        runs[variant] = {}
        for seed in seeds:
            cfg = replace(config, variant=variant, seed=seed)
            log_path = out_dir / f"{variant}_seed{seed}.log.jsonl" if out_dir else None
            res = train(cfg, train_set, dev_set, vocab, log_path=log_path)
            hyps = decode_corpus(res.model, test_set, cfg.eval_batch_size, cfg.max_decode_len)
            refs = [ex.references for ex in test_set]
            entry = {
                "sr": evaluate_corpus(hyps, refs, "sr"),
                "mr": evaluate_corpus(hyps, refs, "mr"),
                "log": res.log,
                "best_epoch": res.best_epoch,
                "hyps": hyps,
            }
            if keep_models:
                entry["model"] = res.model
            if out_dir:
                save_checkpoint(out_dir / f"{variant}_seed{seed}.ckpt", res.model, cfg, res.optimizer,
                                [{k: r[k] for k in ("epoch", "train_loss", "score")} for r in res.log])
            runs[variant][seed] = entry
            log.info("%s seed %d: test ROUGE-1 %.2f", variant, seed, entry["sr"]["ROUGE-1"])
    report = MetricReport(meta={"config_hash": _config_hash(config), "seeds": list(seeds),
                                "aggregate": "median over seeds"})
    for variant in variants:
        for mode in ("sr", "mr"):
            report.add(variant, mode, {m: float(np.median([runs[variant][s][mode][m] for s in seeds]))
                                       for m in METRICS})
    report.meta["per_seed"] = {v: {str(s): {"sr": runs[v][s]["sr"], "mr": runs[v][s]["mr"]} for s in seeds}
                               for v in variants}
    if out_dir:
        (out_dir / "report.json").write_text(report.dumps())
        (out_dir / "report.txt").write_text(report.render() + "\n")
    return report, runs
