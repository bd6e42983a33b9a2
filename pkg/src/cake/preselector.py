"""Context-conditioned knowledge pre-selection over background positions.

Shapes are batch-major: ``hb`` (N, I, 2d), ``hc`` (N, J, 2d).  Masks are
boolean (N, I) / (N, J) arrays marking real (non-PAD) positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import diffmath as dm
from .diffmath import Array, ShapeError
from .encoders import init_bigru
from .params import ParamStore

NEG_INF = -1e9


def init_preselector_params(store: ParamStore, emb_dim: int, hidden: int, dec_dim: int) -> None:
    d2 = 2 * hidden
    store.add("presel.w", (3 * d2,))
    init_bigru(store, "presel.model", 4 * d2, hidden)
    init_bigru(store, "presel.out", d2 + dec_dim + emb_dim, hidden)
    store.add("presel.w_p1", (4 * d2 + d2 + (d2 + dec_dim + emb_dim) + d2,))


def _ones_mask(shape):
    return np.ones(shape, dtype=bool)


def similarity(hb: Array, hc: Array, w: Array) -> Array:
    """S[i, j] = w . [hb_i ; hc_j ; hb_i * hc_j]."""
    if hb.shape[-1] != hc.shape[-1]:
        raise ShapeError("similarity", hb.shape, hc.shape)
    d2 = hb.shape[-1]
    if w.shape != (3 * d2,):
        raise ShapeError("similarity", w.shape, (3 * d2,))
    term_b = dm.matmul(hb, w[:d2])                      # (..., I)
    term_c = dm.matmul(hc, w[d2:2 * d2])                # (..., J)
    cross = dm.matmul(hb * w[2 * d2:], dm.swapaxes(hc, -1, -2))  # (..., I, J)
    J = hc.shape[-2]
    return cross + dm.reshape(term_b, term_b.shape + (1,)) + dm.reshape(term_c, term_c.shape[:-1] + (1, J))


def b2c_attend(S: Array, hc: Array, ctx_mask: Optional[np.ndarray] = None):
    """alpha_i = softmax_j S[i, :]; hc_tilde_i = sum_j alpha_ij hc_j."""
    if ctx_mask is not None:
        S = dm.masked_fill_const(S, ctx_mask[..., None, :], NEG_INF)
    alpha = dm.softmax(S, axis=-1)
    return alpha, dm.matmul(alpha, hc)


def c2b_attend(S: Array, hb: Array, bg_mask: Optional[np.ndarray] = None,
               ctx_mask: Optional[np.ndarray] = None):
    """beta = softmax_i(max_j S[i, j]); returns beta and hb_tilde tiled over I."""
    if ctx_mask is not None:
        S = dm.masked_fill_const(S, ctx_mask[..., None, :], NEG_INF)
    row_max = dm.max(S, axis=-1)
    if bg_mask is not None:
        row_max = dm.masked_fill_const(row_max, bg_mask, NEG_INF)
    beta = dm.softmax(row_max, axis=-1)
    I = hb.shape[-2]
    attended = dm.matmul(dm.reshape(beta, beta.shape[:-1] + (1, I)), hb)  # (..., 1, 2d)
    return beta, dm.broadcast_to(attended, hb.shape)


def fuse(hb: Array, hc_tilde: Array, hb_tilde: Array) -> Array:
    """g = [hb ; hc_tilde ; hb * hc_tilde ; hb * hb_tilde] per position."""
    if hb.shape != hc_tilde.shape or hb.shape != hb_tilde.shape:
        raise ShapeError("fuse", hb.shape, hc_tilde.shape, hb_tilde.shape)
    return dm.concat([hb, hc_tilde, hb * hc_tilde, hb * hb_tilde], axis=-1)


def modeling_layer(g: Array, store: ParamStore, bg_mask=None) -> Array:
    from .encoders import bigru
    single = g.ndim == 2
    if single:
        g = dm.reshape(g, (1,) + g.shape)
    m = bigru(g, store, "presel.model", bg_mask)
    return dm.reshape(m, m.shape[1:]) if single else m


@dataclass
class StaticSelection:
    """Per-example quantities computed once and reused at every decode step."""

    S: Array
    alpha: Array
    beta: Array
    hc_tilde: Array
    hb_tilde: Array
    g: Array
    m: Array
    static_logit: Array      # (N, I): w_p1 terms that depend only on g and m
    out_proj_fw: Array       # (N, I, 3d): m @ W_out rows for m, forward GRU
    out_proj_bw: Array
    bg_mask: np.ndarray

    def select(self, idx) -> "StaticSelection":
        kw = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            kw[name] = Array(v.data[idx]) if isinstance(v, Array) else v[idx]
        return StaticSelection(**kw)


def _w_p1_blocks(store: ParamStore, d2: int, dec_dim: int, emb_dim: int):
    w = store["presel.w_p1"]
    o = 0
    blocks = {}
    for name, size in (("g", 4 * d2), ("m", d2), ("s_m", d2), ("s_h", dec_dim), ("s_x", emb_dim), ("u", d2)):
        blocks[name] = w[o:o + size]
        o += size
    if o != w.shape[0]:
        raise ShapeError("step_background_dist", w.shape, (o,))
    return blocks


def static_selection(hb: Array, hc: Array, store: ParamStore, bg_mask: np.ndarray,
                     ctx_mask: np.ndarray, dec_dim: int, emb_dim: int) -> StaticSelection:
    S = similarity(hb, hc, store["presel.w"])
    alpha, hc_tilde = b2c_attend(S, hc, ctx_mask)
    beta, hb_tilde = c2b_attend(S, hb, bg_mask, ctx_mask)
    g = fuse(hb, hc_tilde, hb_tilde)
    m = modeling_layer(g, store, bg_mask)
    d2 = hb.shape[-1]
    blk = _w_p1_blocks(store, d2, dec_dim, emb_dim)
    static_logit = dm.matmul(g, blk["g"]) + dm.matmul(m, blk["m"]) + dm.matmul(m, blk["s_m"])
    proj = {}
    for side in ("fw", "bw"):
        W = store[f"presel.out.{side}.W"]
        proj[side] = dm.matmul(m, W[:d2])
    return StaticSelection(S, alpha, beta, hc_tilde, hb_tilde, g, m, static_logit,
                           proj["fw"], proj["bw"], bg_mask)


def step_background_dist(static: StaticSelection, h_dec: Array, x_prev: Array, store: ParamStore,
                         logits_override: Optional[Array] = None):
    """P_background for decoder states ``h_dec`` (N, T, D) and inputs ``x_prev`` (N, T, e).

    s_i = [m_i ; h_t ; x_{t-1}] is run through the output bi-GRU over the
    background positions to give u; the logit at i is
    ``w_p1 . [g_i ; m_i ; s_i ; u_i]``.  Returns (P (N, T, I), logits).
    """
    N, I, _ = static.m.shape
    T = h_dec.shape[1]
    d2 = static.m.shape[-1]
    dec_dim, emb_dim = h_dec.shape[-1], x_prev.shape[-1]
    if logits_override is None:
        blk = _w_p1_blocks(store, d2, dec_dim, emb_dim)
        outs = []
        mask = np.broadcast_to(static.bg_mask[:, None, :], (N, T, I)).reshape(N * T, I)
        for side, proj in (("fw", static.out_proj_fw), ("bw", static.out_proj_bw)):
            W = store[f"presel.out.{side}.W"]
            step = (dm.matmul(h_dec, W[d2:d2 + dec_dim]) + dm.matmul(x_prev, W[d2 + dec_dim:])
                    + store[f"presel.out.{side}.b"])                           # (N, T, 3d)
            xproj = dm.reshape(proj, (N, 1, I, proj.shape[-1])) + dm.reshape(step, (N, T, 1, step.shape[-1]))
            xproj = dm.reshape(xproj, (N * T, I, proj.shape[-1]))
            outs.append(dm.gru_scan(xproj, store[f"presel.out.{side}.U"], mask=mask, reverse=side == "bw"))
        u = dm.reshape(dm.concat(outs, axis=-1), (N, T, I, d2))
        per_step = dm.matmul(h_dec, blk["s_h"]) + dm.matmul(x_prev, blk["s_x"])   # (N, T)
        logits = (dm.reshape(static.static_logit, (N, 1, I)) + dm.reshape(per_step, (N, T, 1))
                  + dm.matmul(u, blk["u"]))
    else:
        logits = logits_override
    logits = dm.masked_fill_const(logits, static.bg_mask[:, None, :], NEG_INF)
    return dm.softmax(logits, axis=-1), logits
