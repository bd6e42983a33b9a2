"""Adam, gradient clipping, the epoch loop and checkpoint files."""

from __future__ import annotations

import io
import json
import logging
import math
import struct
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .corpus import Example, Vocabulary
from .diffmath import Tape
from .generator import greedy_decode
from .metrics import evaluate_corpus
from .model import Model, ModelDims

log = logging.getLogger(__name__)

MAGIC = b"CAKE"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 30
    clip_norm: float = 2.0
    seed: int = 0
    emb_dim: int = 128
    hidden: int = 256
    dec_dim: Optional[int] = None
    vocab_cap: int = 45000
    background_mode: str = "oracle"
    context_cap: int = 120
    strict_paper_mode: bool = False
    variant: str = "cake"
    max_decode_len: int = 30
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.dec_dim is None:
            self.dec_dim = 2 * self.hidden if isinstance(self.hidden, int) else 0
        self.validate()

    def validate(self) -> None:
        bad = []
        for name in ("learning_rate", "batch_size", "epochs", "clip_norm", "emb_dim", "hidden",
                     "dec_dim", "vocab_cap", "context_cap", "max_decode_len", "eval_batch_size"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
                bad.append(name)
        if self.dec_dim != 2 * self.hidden:
            bad.append("dec_dim")
        if self.background_mode not in ("oracle", "truncate256"):
            bad.append("background_mode")
        if self.variant not in ("cake", "gttp", "s2sa"):
            bad.append("variant")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            bad.append("seed")
        if bad:
            raise ValueError(f"invalid TrainConfig fields: {', '.join(sorted(set(bad)))}")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {', '.join(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def dims(self) -> ModelDims:
        return ModelDims(self.emb_dim, self.hidden, input_feeding=not self.strict_paper_mode)


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads: dict, state: AdamState, lr: float) -> AdamState:
    """In-place bias-corrected Adam update of ``params`` (name -> Array)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise TrainingError(f"gradient shape {g.shape} does not match {name!r} {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
    return state


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: dict, max_norm: float = 2.0):
    """Scale all gradients by ``max_norm / N`` when the global norm N exceeds it."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm


# --------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    model: Model
    log: list
    best_epoch: int
    best_score: float
    optimizer: AdamState
    config: TrainConfig


def batches(n: int, size: int, rng: Optional[np.random.Generator] = None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + size] for i in range(0, n, size)]


def decode_corpus(model: Model, examples: list[Example], batch_size: int = 64, max_len: int = 30):
    """Greedy outputs as token lists, in corpus order."""
    out = []
    for idx in batches(len(examples), batch_size):
        chunk = [examples[i] for i in idx]
        for ex, ids in zip(chunk, greedy_decode(model, chunk, max_len)):
            out.append([ex.token_for(i, model.vocab) for i in ids])
    return out


def dev_metrics(model: Model, examples: list[Example], batch_size: int = 64, max_len: int = 30) -> dict:
    hyps = decode_corpus(model, examples, batch_size, max_len)
    return evaluate_corpus(hyps, [ex.references for ex in examples], "sr")


def selection_score(metrics: dict) -> float:
    return (metrics["BLEU"] + metrics["ROUGE-L"]) / 2.0


def select_best(scores: list[float]) -> int:
    """Index of the first maximal score."""
    return int(np.argmax(scores))


def train(config: TrainConfig, train_set: list[Example], dev_set: list[Example], vocab: Vocabulary,
          log_path=None, on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    if not train_set:
        raise TrainingError("empty training corpus")
    if not dev_set:
        raise TrainingError("empty dev corpus")
    for ex in list(train_set[:1]) + list(dev_set[:1]):
        if ex.vocab_size != len(vocab):
            raise TrainingError("corpus was encoded with a different vocabulary")
    model = Model(config.variant, len(vocab), config.dims(), seed=config.seed, vocab=vocab)
    params = model.params
    names = params.names()
    opt = AdamState()
    rng = np.random.default_rng(config.seed)
    records = []
    best = (-math.inf, 0, None, None)
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            total, count = 0.0, 0
            for b, idx in enumerate(batches(len(train_set), config.batch_size, rng)):
                batch = model.make_batch([train_set[i] for i in idx])
                with Tape() as tape:
                    loss = model.loss(batch)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b} "
                                        f"(examples {idx[:5].tolist()}...)")
                grads = dict(zip(names, tape.backward(loss, params.values())))
                grads, _ = clip_gradients(grads, config.clip_norm)
                adam_step(params, grads, opt, config.learning_rate)
                total += value
                count += len(idx)
            dev = dev_metrics(model, dev_set, config.eval_batch_size, config.max_decode_len)
            rec = {
                "epoch": epoch,
                "train_loss": total / count,
                "dev": {k: round(v, 6) for k, v in dev.items()},
                "score": round(selection_score(dev), 6),
                "seconds": round(time.perf_counter() - t0, 3),
            }
            records.append(rec)
            if fh:
                fh.write(json.dumps({k: v for k, v in rec.items() if k != "seconds"}, sort_keys=True) + "\n")
                fh.flush()
            log.info("epoch %d loss %.4f dev BLEU %.2f ROUGE-L %.2f", epoch, rec["train_loss"],
                     dev["BLEU"], dev["ROUGE-L"])
            if on_epoch:
                on_epoch(rec)
            if rec["score"] > best[0]:
                best = (rec["score"], epoch, params.state(), _copy_adam(opt))
    finally:
        if fh:
            fh.close()
    params.load_state(best[2])
    return TrainResult(model, records, best[1], best[0], best[3], config)


def _copy_adam(opt: AdamState) -> AdamState:
    return AdamState(opt.step, {k: v.copy() for k, v in opt.m.items()},
                     {k: v.copy() for k, v in opt.v.items()}, opt.beta1, opt.beta2, opt.eps)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model, config: TrainConfig, optimizer: Optional[AdamState] = None,
                    log_summary: Optional[list] = None, extra: Optional[dict] = None) -> None:
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, p in model.params.items():
        tensors[f"param/{name}"] = p.data
    if optimizer is not None:
        for name in model.params.names():
            if name in optimizer.m:
                tensors[f"adam_m/{name}"] = optimizer.m[name]
                tensors[f"adam_v/{name}"] = optimizer.v[name]
    meta = {
        "config": config.to_dict(),
        "variant": model.variant,
        "vocab_size": model.vocab_size,
        "vocab_sha256": model.vocab.digest() if model.vocab is not None else None,
        "adam_step": optimizer.step if optimizer is not None else 0,
        "log": log_summary or [],
        "tensors": len(tensors),
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


@dataclass
class Checkpoint:
    meta: dict
    tensors: "OrderedDict[str, np.ndarray]"

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.meta["config"])

    def build_model(self, vocab: Optional[Vocabulary] = None) -> Model:
        if vocab is not None and self.meta.get("vocab_sha256") not in (None, vocab.digest()):
            raise CheckpointError("vocabulary does not match the checkpoint's vocabulary hash")
        cfg = self.config
        model = Model(self.meta["variant"], self.meta["vocab_size"], cfg.dims(), seed=cfg.seed, vocab=vocab)
        model.params.load_state({k[len("param/"):]: v for k, v in self.tensors.items() if k.startswith("param/")})
        return model

    def optimizer(self) -> AdamState:
        st = AdamState(step=self.meta.get("adam_step", 0))
        for k, v in self.tensors.items():
            if k.startswith("adam_m/"):
                st.m[k[7:]] = v.copy()
            elif k.startswith("adam_v/"):
                st.v[k[7:]] = v.copy()
        return st


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    (mlen,) = struct.unpack("<Q", take(8, "metadata length"))
    try:
        meta = json.loads(bytes(take(mlen, "metadata")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata block: {exc}") from None
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for k in range(meta.get("tensors", 0)):
        label = f"tensor #{k}"
        (nlen,) = struct.unpack("<I", take(4, f"{label} name length"))
        name = bytes(take(nlen, f"{label} name")).decode("utf-8", errors="replace")
        (rank,) = struct.unpack("<I", take(4, f"tensor {name!r} rank"))
        if rank > 8:
            raise CheckpointError(f"tensor {name!r}: implausible rank {rank}")
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, f"tensor {name!r} dims"))
        n = int(np.prod(dims)) if rank else 1
        raw = take(4 * n, f"tensor {name!r} data")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(meta, tensors)
