"""Fused GRU recurrence with a hand-written backward pass.

Gate layout along the last axis of the projections is ``[update, reset,
candidate]``.  Inputs are pre-projected (``x @ W + b``), so the op only owns
the recurrent weights ``U``::

    z = sigmoid(xz + h U_z)
    r = sigmoid(xr + h U_r)
    n = tanh(xn + (r * h) U_n)
    h' = (1 - z) * h + z * n

Positions with ``mask == 0`` carry the previous state through unchanged.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .ops import _sigmoid_np, _wrap
from .tape import Array, ShapeError, make_result

# number of recurrence steps executed, for cost probes
STEP_COUNTER = {"steps": 0}


def gru_scan(xproj, U, h0=None, mask: Optional[np.ndarray] = None, reverse: bool = False) -> Array:
    """Run a GRU over ``xproj`` of shape (N, L, 3H); returns states (N, L, H)."""
    xproj = _wrap(xproj)
    U = _wrap(U, xproj.dtype)
    N, L, H3 = xproj.shape
    H = H3 // 3
    if H3 != 3 * H or U.shape != (H, 3 * H):
        raise ShapeError("gru_scan", xproj.shape, U.shape)
    if L < 1:
        raise ShapeError("gru_scan", xproj.shape)
    if h0 is None:
        h0 = Array(np.zeros((N, H), dtype=xproj.dtype))
    h0 = _wrap(h0, xproj.dtype)
    if h0.shape != (N, H):
        raise ShapeError("gru_scan", h0.shape, (N, H))
    dt = xproj.dtype
    m = np.ones((N, L), dtype=dt) if mask is None else np.asarray(mask, dtype=dt)

    xp = xproj.data
    Uzr = U.data[:, : 2 * H]
    Un = U.data[:, 2 * H:]
    order = range(L - 1, -1, -1) if reverse else range(L)

    out = np.empty((N, L, H), dtype=dt)
    hprev = np.empty((N, L, H), dtype=dt)
    zs = np.empty((N, L, H), dtype=dt)
    rs = np.empty((N, L, H), dtype=dt)
    ns = np.empty((N, L, H), dtype=dt)
    h = h0.data
    for t in order:
        hprev[:, t] = h
        gzr = _sigmoid_np(xp[:, t, : 2 * H] + h @ Uzr)
        z, r = gzr[:, :H], gzr[:, H:]
        n = np.tanh(xp[:, t, 2 * H:] + (r * h) @ Un)
        mt = m[:, t:t + 1]
        h_new = (1.0 - z) * h + z * n
        h = mt * h_new + (1.0 - mt) * h
        out[:, t] = h
        zs[:, t], rs[:, t], ns[:, t] = z, r, n
    STEP_COUNTER["steps"] += L

    def backward(gout):
        dxp = np.zeros_like(xp)
        dU = np.zeros_like(U.data)
        dh = np.zeros((N, H), dtype=dt)
        for t in reversed(list(order)):
            dh = dh + gout[:, t]
            mt = m[:, t:t + 1]
            dh_new = mt * dh
            carry = (1.0 - mt) * dh
            z, r, n, hp = zs[:, t], rs[:, t], ns[:, t], hprev[:, t]
            dz = dh_new * (n - hp)
            dn_pre = dh_new * z * (1.0 - n * n)
            dh_prev = dh_new * (1.0 - z)
            rh = r * hp
            dU[:, 2 * H:] += rh.T @ dn_pre
            d_rh = dn_pre @ Un.T
            dr = d_rh * hp
            dh_prev += d_rh * r
            dzr_pre = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
            dU[:, : 2 * H] += hp.T @ dzr_pre
            dh_prev += dzr_pre @ Uzr.T
            dxp[:, t, : 2 * H] = dzr_pre
            dxp[:, t, 2 * H:] = dn_pre
            dh = dh_prev + carry
        return dxp, dU, dh

    return make_result(out, (xproj, U, h0), backward)
