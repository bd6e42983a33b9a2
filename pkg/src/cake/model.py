"""Full background-grounded response model in three variants.

``cake``  pre-selection over the background (context-conditioned)
``gttp``  copy attention queried by the decoder state only
``s2sa``  attention over context and background, no copy path
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Optional

import numpy as np

from . import diffmath as dm
from .corpus import PAD, Example, Vocabulary
from .diffmath import Array
from .encoders import bigru, bridge, embed_ids, init_encoder_params
from .generator import (
    additive_scores, attention_keys, context_attention, generation_gate, init_attention,
    init_generator_params, mix, pad_extended, sequence_loss, vocab_distribution,
)
from .params import ParamStore
from .preselector import NEG_INF, StaticSelection, init_preselector_params, static_selection, step_background_dist

VARIANTS = ("cake", "gttp", "s2sa")


@dataclass(frozen=True)
class ModelDims:
    emb_dim: int = 128
    hidden: int = 256
    input_feeding: bool = True

    @property
    def dec_dim(self) -> int:
        return 2 * self.hidden


@dataclass
class Batch:
    bg_ids: np.ndarray        # (N, I) embedding ids (extended -> UNK)
    bg_ext_ids: np.ndarray    # (N, I) ids in the extended space
    bg_mask: np.ndarray       # (N, I) bool
    ctx_ids: np.ndarray       # (N, J)
    ctx_mask: np.ndarray      # (N, J)
    dec_in: np.ndarray        # (N, T) previous gold token (extended -> UNK)
    targets: np.ndarray       # (N, T) extended ids
    tgt_mask: np.ndarray      # (N, T)
    ext_size: int


def make_batch(examples: list[Example], vocab_size: int, pad_to: Optional[tuple] = None) -> Batch:
    """Pad a list of examples to the batch maxima (or to ``pad_to`` = (I, J, T))."""
    if not examples:
        raise ValueError("empty batch")
    N = len(examples)
    I = max(len(e.background_ids) for e in examples)
    J = max(max(len(e.context_ids), 1) for e in examples)
    T = max(len(e.response_ids) - 1 for e in examples)
    if pad_to is not None:
        I, J, T = max(I, pad_to[0]), max(J, pad_to[1]), max(T, pad_to[2])
    bg = np.full((N, I), PAD, dtype=np.int64)
    bg_ext = np.full((N, I), PAD, dtype=np.int64)
    ctx = np.full((N, J), PAD, dtype=np.int64)
    dec_in = np.full((N, T), PAD, dtype=np.int64)
    tgt = np.full((N, T), PAD, dtype=np.int64)
    bg_mask = np.zeros((N, I), dtype=bool)
    ctx_mask = np.zeros((N, J), dtype=bool)
    tgt_mask = np.zeros((N, T), dtype=bool)
    ext = 0
    for n, e in enumerate(examples):
        b = e.background_ext_ids()
        bg_ext[n, :len(b)] = b
        bg[n, :len(b)] = e.background_ids
        bg_mask[n, :len(b)] = True
        c = e.context_ids or [PAD]
        ctx[n, :len(c)] = c
        ctx_mask[n, :len(c)] = True
        r = e.response_ids
        dec_in[n, :len(r) - 1] = embed_ids(r[:-1], vocab_size)
        tgt[n, :len(r) - 1] = r[1:]
        tgt_mask[n, :len(r) - 1] = True
        ext = max(ext, e.ext_size)
    return Batch(bg, bg_ext, bg_mask, ctx, ctx_mask, dec_in, tgt, tgt_mask, ext)


def _select(obj, idx):
    kw = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, Array):
            v = Array(v.data[idx])
        elif isinstance(v, np.ndarray):
            v = v[idx]
        elif hasattr(v, "select"):
            v = v.select(idx)
        kw[f.name] = v
    return type(obj)(**kw)


@dataclass
class Encoded:
    hb: Array
    hc: Array
    bg_mask: np.ndarray
    ctx_mask: np.ndarray
    bg_ext_ids: np.ndarray
    ext_size: int
    h0: Array
    ctx_keys: Array
    bg_keys: Optional[Array] = None
    static: Optional[StaticSelection] = None

    def select(self, idx) -> "Encoded":
        return _select(self, idx)


@dataclass
class DecodeState:
    h: Array
    c: Array

    def select(self, idx) -> "DecodeState":
        return _select(self, idx)


@dataclass
class StepResult:
    P_final: Array
    P_vocab: Array
    P_background: Optional[Array]
    p_gen: Optional[Array]
    gamma: Array
    state: DecodeState


LogitsFn = Callable[[Encoded, Array, Array], Array]


class Model:
    def __init__(self, variant: str, vocab_size: int, dims: ModelDims, seed: int = 0,
                 vocab: Optional[Vocabulary] = None, dtype=np.float32):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if vocab is not None and len(vocab) != vocab_size:
            raise ValueError("vocab_size does not match the vocabulary")
        self.variant = variant
        self.vocab_size = vocab_size
        self.dims = dims
        self.vocab = vocab
        self.params = ParamStore(seed, dtype)
        e, d, D = dims.emb_dim, dims.hidden, dims.dec_dim
        init_encoder_params(self.params, vocab_size, e, d)
        if variant == "s2sa":
            init_generator_params(self.params, vocab_size, e, d, D, dims.input_feeding, gate=False,
                                  vocab_in=D + 4 * d)
        else:
            init_generator_params(self.params, vocab_size, e, d, D, dims.input_feeding)
        if variant == "cake":
            init_preselector_params(self.params, e, d, D)
        else:
            init_attention(self.params, "attn_bg", 2 * d, D, D)

    @property
    def dtype(self):
        return self.params.dtype

    def make_batch(self, examples, pad_to=None) -> Batch:
        return make_batch(examples, self.vocab_size, pad_to)

    def embed(self, ids: np.ndarray) -> Array:
        return dm.gather_rows(self.params["emb"], embed_ids(ids, self.vocab_size))

    # ------------------------------------------------------------------
    def encode(self, batch: Batch) -> Encoded:
        p = self.params
        hb = bigru(self.embed(batch.bg_ids), p, "enc_bg", batch.bg_mask)
        hc = bigru(self.embed(batch.ctx_ids), p, "enc_ctx", batch.ctx_mask)
        enc = Encoded(hb, hc, batch.bg_mask, batch.ctx_mask, batch.bg_ext_ids, batch.ext_size,
                      bridge(hc, p), attention_keys(hc, p, "attn_ctx"))
        if self.variant == "cake":
            enc.static = static_selection(hb, hc, p, batch.bg_mask, batch.ctx_mask,
                                          self.dims.dec_dim, self.dims.emb_dim)
        else:
            enc.bg_keys = attention_keys(hb, p, "attn_bg")
        return enc

    def initial_state(self, enc: Encoded) -> DecodeState:
        N = enc.h0.shape[0]
        return DecodeState(enc.h0, Array(np.zeros((N, enc.hc.shape[-1]), dtype=self.dtype)))

    def _recur(self, enc: Encoded, state: DecodeState, x_emb: Array):
        """One decoder recurrence plus context attention."""
        p = self.params
        inp = dm.concat([x_emb, state.c], axis=-1) if self.dims.input_feeding else x_emb
        xproj = dm.matmul(inp, p["dec.W"]) + p["dec.b"]
        N = xproj.shape[0]
        h = dm.gru_scan(dm.reshape(xproj, (N, 1, xproj.shape[-1])), p["dec.U"], h0=state.h)
        h = dm.reshape(h, (N, h.shape[-1]))
        gamma, c = context_attention(enc.hc, h, p, enc.ctx_mask, keys=enc.ctx_keys)
        return h, gamma, c

    def encode_background_keys(self, enc: Encoded) -> Encoded:
        """Copy of ``enc`` carrying this model's background attention keys."""
        out = Encoded(**{f.name: getattr(enc, f.name) for f in fields(enc)})
        out.bg_keys = attention_keys(enc.hb, self.params, "attn_bg")
        return out

    def gttp_logits(self, enc: Encoded, H: Array) -> Array:
        """Decoder-state queried additive attention logits over the background (N, T, I)."""
        return additive_scores(enc.bg_keys, H, self.params, "attn_bg")

    def background_dist(self, enc: Encoded, H: Array, X: Array,
                        logits_fn: Optional[LogitsFn] = None) -> Array:
        if self.variant == "cake":
            override = logits_fn(enc, H, X) if logits_fn is not None else None
            P, _ = step_background_dist(enc.static, H, X, self.params, logits_override=override)
            return P
        logits = self.gttp_logits(enc, H)
        logits = dm.masked_fill_const(logits, enc.bg_mask[:, None, :], NEG_INF)
        return dm.softmax(logits, axis=-1)

    def output_dists(self, enc: Encoded, H: Array, C: Array, X: Array,
                     logits_fn: Optional[LogitsFn] = None):
        """Distributions for decoder states H (N, T, D), contexts C, inputs X."""
        p = self.params
        if self.variant == "s2sa":
            P_bg = self.background_dist(enc, H, X)
            N, T, I = P_bg.shape
            ctx_bg = dm.matmul(P_bg, enc.hb)  # (N, T, 2d)
            P_vocab = vocab_distribution(H, C, p, extra=ctx_bg)
            return pad_extended(P_vocab, enc.ext_size), P_vocab, None, None
        P_vocab = vocab_distribution(H, C, p)
        P_bg = self.background_dist(enc, H, X, logits_fn)
        p_gen = generation_gate(C, H, X, p)
        ids = enc.bg_ext_ids[:, None, :]
        P_final = mix(P_vocab, P_bg, p_gen, ids, enc.ext_size)
        return P_final, P_vocab, P_bg, p_gen

    # ------------------------------------------------------------------
    def teacher_forced(self, batch: Batch, logits_fn: Optional[LogitsFn] = None):
        enc = self.encode(batch)
        state = self.initial_state(enc)
        X = self.embed(batch.dec_in)  # (N, T, e)
        hs, cs = [], []
        for t in range(batch.dec_in.shape[1]):
            h, _, c = self._recur(enc, state, X[:, t])
            state = DecodeState(h, c)
            hs.append(h)
            cs.append(c)
        H = dm.stack(hs, axis=1)
        C = dm.stack(cs, axis=1)
        return enc, self.output_dists(enc, H, C, X, logits_fn)

    def targets_for_loss(self, batch: Batch) -> np.ndarray:
        if self.variant == "s2sa":
            # no copy path: copy-only gold tokens are trained as UNK
            return embed_ids(batch.targets, self.vocab_size)
        return batch.targets

    def loss(self, batch: Batch, logits_fn: Optional[LogitsFn] = None) -> Array:
        """Sum over the batch of per-sequence mean token NLL."""
        _, (P_final, *_rest) = self.teacher_forced(batch, logits_fn)
        return sequence_loss(P_final, self.targets_for_loss(batch), batch.tgt_mask)

    def decode_step(self, enc: Encoded, state: DecodeState, prev_ids: np.ndarray) -> StepResult:
        x = self.embed(prev_ids)
        h, gamma, c = self._recur(enc, state, x)
        N = h.shape[0]
        H = dm.reshape(h, (N, 1, h.shape[-1]))
        C = dm.reshape(c, (N, 1, c.shape[-1]))
        X = dm.reshape(x, (N, 1, x.shape[-1]))
        P_final, P_vocab, P_bg, p_gen = self.output_dists(enc, H, C, X)
        sq = lambda a: None if a is None else dm.reshape(a, a.shape[:1] + a.shape[2:])
        return StepResult(sq(P_final), sq(P_vocab), sq(P_bg), sq(p_gen), gamma, DecodeState(h, c))
