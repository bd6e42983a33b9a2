"""Decoder-side distributions, the copy/generate mixture, loss and decoding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diffmath as dm
from .corpus import BOS, EOS, Example
from .diffmath import Array
from .encoders import init_gru
from .params import ParamStore
from .preselector import NEG_INF


def init_generator_params(store: ParamStore, vocab_size: int, emb_dim: int, hidden: int,
                          dec_dim: int, input_feeding: bool = True, gate: bool = True,
                          vocab_in: Optional[int] = None) -> None:
    d2 = 2 * hidden
    init_gru(store, "dec", emb_dim + (d2 if input_feeding else 0), dec_dim)
    init_attention(store, "attn_ctx", d2, dec_dim, dec_dim)
    store.add("gen.W_v", (vocab_in or dec_dim + d2, vocab_size))
    store.add("gen.b_v", (vocab_size,), bias=True)
    if gate:
        store.add("gate.w_c", (d2,))
        store.add("gate.w_s", (dec_dim,))
        store.add("gate.w_x", (emb_dim,))
        store.add("gate.b_gen", (1,), bias=True)


def init_attention(store: ParamStore, prefix: str, key_dim: int, query_dim: int, attn_dim: int) -> None:
    store.add(f"{prefix}.W_c", (key_dim, attn_dim))
    store.add(f"{prefix}.V", (query_dim, attn_dim))
    store.add(f"{prefix}.b_c", (attn_dim,), bias=True)
    store.add(f"{prefix}.v", (attn_dim,))


def attention_keys(memory: Array, store: ParamStore, prefix: str) -> Array:
    """``W_c h_j + b_c`` for every memory column; computed once per example."""
    return dm.matmul(memory, store[f"{prefix}.W_c"]) + store[f"{prefix}.b_c"]


def additive_scores(keys: Array, query: Array, store: ParamStore, prefix: str) -> Array:
    """e_j = v . tanh(W_c h_j + V q + b_c).

    ``keys`` is (N, J, A); ``query`` is (N, D) giving (N, J) or (N, T, D)
    giving (N, T, J).
    """
    q = dm.matmul(query, store[f"{prefix}.V"])
    if query.ndim == 2:
        q = dm.reshape(q, (q.shape[0], 1, q.shape[1]))
        return dm.matmul(dm.tanh(keys + q), store[f"{prefix}.v"])
    N, T, A = q.shape
    J = keys.shape[1]
    hidden = dm.reshape(keys, (N, 1, J, A)) + dm.reshape(q, (N, T, 1, A))
    return dm.matmul(dm.tanh(hidden), store[f"{prefix}.v"])


def context_attention(hc: Array, h_dec: Array, store: ParamStore, ctx_mask=None,
                      keys: Optional[Array] = None, prefix: str = "attn_ctx"):
    """gamma = softmax_j(e_j); c_t = sum_j gamma_j hc_j.  Returns (gamma, c_t)."""
    single = hc.ndim == 2
    if single:
        hc = dm.reshape(hc, (1,) + hc.shape)
        h_dec = dm.reshape(h_dec, (1,) + h_dec.shape)
    if keys is None:
        keys = attention_keys(hc, store, prefix)
    e = additive_scores(keys, h_dec, store, prefix)
    if ctx_mask is not None:
        e = dm.masked_fill_const(e, ctx_mask, NEG_INF)
    gamma = dm.softmax(e, axis=-1)
    N, J = gamma.shape
    c = dm.reshape(dm.matmul(dm.reshape(gamma, (N, 1, J)), hc), (N, hc.shape[-1]))
    if single:
        return dm.reshape(gamma, (J,)), dm.reshape(c, (hc.shape[-1],))
    return gamma, c


def vocab_distribution(h_dec: Array, c: Array, store: ParamStore, extra: Optional[Array] = None) -> Array:
    """P_vocab = softmax(W_v [h_t ; c_t (; extra)] + b_v)."""
    parts = [h_dec, c] + ([extra] if extra is not None else [])
    return dm.softmax(dm.matmul(dm.concat(parts, axis=-1), store["gen.W_v"]) + store["gen.b_v"], axis=-1)


def generation_gate(c: Array, h_dec: Array, x_prev: Array, store: ParamStore) -> Array:
    """p_gen = sigmoid(w_c . c_t + w_s . h_t + w_x . x_{t-1} + b_gen)."""
    z = (dm.matmul(c, store["gate.w_c"]) + dm.matmul(h_dec, store["gate.w_s"])
         + dm.matmul(x_prev, store["gate.w_x"]) + store["gate.b_gen"][0])
    return dm.sigmoid(z)


def mix(P_vocab: Array, P_background: Array, p_gen: Array, bg_ext_ids, ext_size: int) -> Array:
    """P_final over the extended vocabulary.

    ``P_background`` (..., I) is scattered onto token ids ``bg_ext_ids``
    (broadcastable to it); repeated tokens accumulate.
    """
    V = P_vocab.shape[-1]
    ids = np.asarray(bg_ext_ids)
    if ids.size and (ids.min() < 0 or ids.max() >= V + ext_size):
        raise ValueError("background position without a valid id mapping")
    gate = dm.reshape(p_gen, p_gen.shape + (1,))
    vocab_part = P_vocab
    if ext_size:
        zeros = Array(np.zeros(P_vocab.shape[:-1] + (ext_size,), dtype=P_vocab.dtype))
        vocab_part = dm.concat([P_vocab, zeros], axis=-1)
    copy_part = dm.scatter_add(P_background, ids, V + ext_size)
    return gate * vocab_part + (1.0 - gate) * copy_part


def pad_extended(P_vocab: Array, ext_size: int) -> Array:
    if not ext_size:
        return P_vocab
    zeros = Array(np.zeros(P_vocab.shape[:-1] + (ext_size,), dtype=P_vocab.dtype))
    return dm.concat([P_vocab, zeros], axis=-1)


def step_loss(P_final: Array, target_ids) -> Array:
    """-log max(P_final[target], 1e-10), elementwise over leading dims."""
    return dm.neg(dm.log(dm.take_along(P_final, np.asarray(target_ids), axis=-1)))


def sequence_loss(P_final: Array, targets: np.ndarray, target_mask: np.ndarray) -> Array:
    """Sum over sequences of the mean per-step loss over each sequence's own length."""
    losses = step_loss(P_final, targets)
    m = target_mask.astype(P_final.dtype)
    weights = m / np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    return dm.sum(losses * weights)


# --------------------------------------------------------------------------
# decoding


@dataclass
class AttentionTrace:
    S: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    p_background: list = field(default_factory=list)
    p_gen: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    background_tokens: list = field(default_factory=list)
    context_tokens: list = field(default_factory=list)
    output_tokens: list = field(default_factory=list)
    variant: str = ""

    def to_json(self) -> dict:
        def conv(x):
            if x is None:
                return None
            return np.asarray(x, dtype=float).round(6).tolist()

        I, J = len(self.background_tokens), len(self.context_tokens)
        return {
            "variant": self.variant,
            "S": conv(self.S),
            "alpha": conv(self.alpha),
            "beta": conv(self.beta),
            "p_background": [conv(p) for p in self.p_background],
            "p_gen": [float(p) for p in self.p_gen],
            "gamma": [conv(g) for g in self.gamma],
            "dims": {"I": I, "J": J, "T": len(self.output_tokens)},
            "background_tokens": list(self.background_tokens),
            "context_tokens": list(self.context_tokens),
            "output_tokens": list(self.output_tokens),
        }


def _check_max_len(max_len):
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")


def greedy_decode(model, examples: list[Example], max_len: int = 30, traces: bool = False):
    """Batched greedy decoding; returns per-example id lists (and traces)."""
    _check_max_len(max_len)
    batch = model.make_batch(examples)
    enc = model.encode(batch)
    N = len(examples)
    state = model.initial_state(enc)
    prev = np.full(N, BOS, dtype=np.int64)
    done = np.zeros(N, dtype=bool)
    out: list[list[int]] = [[] for _ in range(N)]
    recs = [AttentionTrace() for _ in range(N)] if traces else None
    for _ in range(max_len):
        step = model.decode_step(enc, state, prev)
        P = step.P_final.data
        choice = P.argmax(axis=-1)
        for n in range(N):
            if done[n]:
                continue
            if recs is not None:
                _record_step(recs[n], step, n, len(examples[n].background_ids), len(examples[n].context_ids))
            if choice[n] == EOS:
                done[n] = True
            else:
                out[n].append(int(choice[n]))
        if done.all():
            break
        state = step.state
        prev = choice
    if recs is not None:
        for n, ex in enumerate(examples):
            _finish_trace(recs[n], model, enc, n, ex, out[n])
        return out, recs
    return out


def _record_step(trace: AttentionTrace, step, n: int, I: int, J: int):
    if step.P_background is not None:
        trace.p_background.append(step.P_background.data[n, :I].copy())
    if step.p_gen is not None:
        trace.p_gen.append(float(step.p_gen.data[n]))
    trace.gamma.append(step.gamma.data[n, :J].copy())


def _finish_trace(trace: AttentionTrace, model, enc, n: int, ex: Example, ids):
    I, J = len(ex.background_ids), len(ex.context_ids)
    st = getattr(enc, "static", None)
    if st is not None:
        trace.S = st.S.data[n, :I, :J]
        trace.alpha = st.alpha.data[n, :I, :J]
        trace.beta = st.beta.data[n, :I]
    trace.background_tokens = list(ex.background_tokens)
    trace.context_tokens = list(ex.context_tokens)
    trace.output_tokens = [ex.token_for(i, model.vocab) if model.vocab else str(i) for i in ids]
    trace.variant = model.variant


def beam_decode(model, example: Example, beam_size: int = 4, max_len: int = 30) -> list[int]:
    """Beam search ranking hypotheses by mean log-probability per emitted step."""
    _check_max_len(max_len)
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    batch = model.make_batch([example])
    enc = model.encode(batch)
    state = model.initial_state(enc)
    # (token ids, summed log prob, state index)
    beams = [([], 0.0)]
    states = state
    prev = np.array([BOS], dtype=np.int64)
    finished: list[tuple[list[int], float]] = []
    for t in range(max_len):
        k = len(beams)
        enc_k = enc.select(np.zeros(k, dtype=np.int64))
        step = model.decode_step(enc_k, states, prev)
        logp = np.log(np.maximum(step.P_final.data.astype(np.float64), 1e-10))
        cands = []
        for b, (toks, score) in enumerate(beams):
            row = logp[b]
            top = np.argsort(-row, kind="stable")[:beam_size]
            for tok in top:
                cands.append((score + row[tok], b, int(tok)))
        cands.sort(key=lambda c: (-(c[0] / (len(beams[c[1]][0]) + 1)), c[1], c[2]))
        new_beams, keep, new_prev = [], [], []
        for total, b, tok in cands:
            toks = beams[b][0]
            if tok == EOS:
                finished.append((toks, total / (len(toks) + 1)))
            else:
                new_beams.append((toks + [tok], total))
                keep.append(b)
                new_prev.append(tok)
            if len(new_beams) == beam_size or len(finished) >= beam_size:
                break
        if len(finished) >= beam_size or not new_beams:
            break
        beams = new_beams
        states = step.state.select(np.array(keep))
        prev = np.array(new_prev, dtype=np.int64)
    if not finished:
        finished = [(toks, score / max(len(toks), 1)) for toks, score in beams]
    finished.sort(key=lambda f: -f[1])
    return finished[0][0]


def decode(model, example: Example, mode: str = "greedy", beam_size: int = 4, max_len: int = 30,
           trace: bool = False):
    """Decode one example; returns (tokens, trace-or-None)."""
    if mode == "greedy":
        if trace:
            ids, recs = greedy_decode(model, [example], max_len, traces=True)
            return [example.token_for(i, model.vocab) for i in ids[0]], recs[0]
        ids = greedy_decode(model, [example], max_len)[0]
    elif mode == "beam":
        ids = beam_decode(model, example, beam_size, max_len)
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    return [example.token_for(i, model.vocab) for i in ids], None
