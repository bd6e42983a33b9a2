"""Embedding lookup, GRU cells and the bidirectional encoders."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import diffmath as dm
from .corpus import UNK
from .diffmath import Array, ShapeError
from .params import ParamStore


def init_gru(store: ParamStore, prefix: str, in_dim: int, hidden: int) -> None:
    store.add(f"{prefix}.W", (in_dim, 3 * hidden))
    store.add(f"{prefix}.U", (hidden, 3 * hidden))
    store.add(f"{prefix}.b", (3 * hidden,), bias=True)


def init_bigru(store: ParamStore, prefix: str, in_dim: int, hidden: int) -> None:
    init_gru(store, f"{prefix}.fw", in_dim, hidden)
    init_gru(store, f"{prefix}.bw", in_dim, hidden)


def init_encoder_params(store: ParamStore, vocab_size: int, emb_dim: int, hidden: int) -> None:
    store.add("emb", (vocab_size, emb_dim))
    init_bigru(store, "enc_bg", emb_dim, hidden)
    init_bigru(store, "enc_ctx", emb_dim, hidden)
    store.add("bridge.W", (2 * hidden, 2 * hidden))
    store.add("bridge.b", (2 * hidden,), bias=True)


def embed_ids(ids, vocab_size: int, limit: Optional[int] = None) -> np.ndarray:
    """Map extended ids (>= vocab_size) to UNK; reject ids beyond ``limit``."""
    ids = np.asarray(ids, dtype=np.int64)
    if limit is not None and ids.size and (ids.max() >= limit or ids.min() < 0):
        raise ValueError(f"token id out of extended range [0, {limit})")
    return np.where(ids >= vocab_size, UNK, ids)


def embed(table: Array, ids, ext_size: int = 0) -> Array:
    """Rows of the embedding table for ``ids``; extended ids embed as UNK."""
    V = table.shape[0]
    return dm.gather_rows(table, embed_ids(ids, V, V + ext_size))


def gru_cell(x: Array, h: Array, W: Array, U: Array, b: Array) -> Array:
    """One GRU step built from primitive ops (reference for the fused scan)."""
    H = U.shape[0]
    if x.shape[-1] != W.shape[0] or h.shape[-1] != H:
        raise ShapeError("gru_cell", x.shape, h.shape, W.shape)
    xp = dm.matmul(x, W) + b
    hu = dm.matmul(h, U[:, : 2 * H])
    z = dm.sigmoid(xp[..., :H] + hu[..., :H])
    r = dm.sigmoid(xp[..., H:2 * H] + hu[..., H:])
    n = dm.tanh(xp[..., 2 * H:] + dm.matmul(r * h, U[:, 2 * H:]))
    return (1.0 - z) * h + z * n


def gru_sequence(x: Array, W: Array, U: Array, b: Array, mask=None, reverse=False, h0=None) -> Array:
    """Fused GRU over (N, L, in); returns (N, L, H)."""
    return dm.gru_scan(dm.matmul(x, W) + b, U, h0=h0, mask=mask, reverse=reverse)


def bigru(x: Array, store: ParamStore, prefix: str, mask=None) -> Array:
    fw = gru_sequence(x, store[f"{prefix}.fw.W"], store[f"{prefix}.fw.U"], store[f"{prefix}.fw.b"], mask)
    bw = gru_sequence(x, store[f"{prefix}.bw.W"], store[f"{prefix}.bw.U"], store[f"{prefix}.bw.b"], mask,
                      reverse=True)
    return dm.concat([fw, bw], axis=-1)


def bigru_encode(embedded: Array, store: ParamStore, prefix: str, mask=None) -> Array:
    """Bidirectional encoding; (L, e) -> (L, 2d) or (N, L, e) -> (N, L, 2d).

    Column t holds ``[forward state at t ; backward state at t]``, both
    directions starting from a zero state.
    """
    single = embedded.ndim == 2
    if single:
        embedded = dm.reshape(embedded, (1,) + embedded.shape)
    if embedded.shape[1] < 1:
        raise ShapeError("bigru_encode", embedded.shape)
    out = bigru(embedded, store, prefix, mask)
    return dm.reshape(out, out.shape[1:]) if single else out


def bridge(hc: Array, store: ParamStore) -> Array:
    """Decoder initial state from the context encoder's final states.

    Padded tail positions carry the forward state, so the last column holds
    the forward final state; the backward final state sits at column 0.
    """
    d = hc.shape[-1] // 2
    final = dm.concat([hc[..., -1, :d], hc[..., 0, d:]], axis=-1)
    return dm.tanh(dm.matmul(final, store["bridge.W"]) + store["bridge.b"])
