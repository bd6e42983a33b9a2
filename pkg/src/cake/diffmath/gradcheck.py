"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tape import Array, DiffMathError, Tape


def grad_check(
    builder: Callable[[Sequence[Array]], Array],
    params: Sequence[Array],
    seed: int = 0,
    h: float = 1e-5,
    max_entries: Optional[int] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``builder(params)`` must return a scalar Array and be deterministic.
    Parameters are promoted to float64 in place for the duration of the
    check.  With ``max_entries`` set, a seeded random subset of entries per
    parameter is probed instead of all of them.
    """
    originals = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
        p.requires_grad = True
    try:
        with Tape() as tape:
            loss = builder(params)
        if not np.all(np.isfinite(loss.data)):
            raise DiffMathError("grad_check: non-finite loss")
        analytic = tape.backward(loss, params)

        def value() -> float:
            v = builder(params).data
            if not np.all(np.isfinite(v)):
                raise DiffMathError("grad_check: non-finite loss")
            return float(v)

        rng = np.random.default_rng(seed)
        worst = 0.0
        for p, g in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            for k in idx:
                old = flat[k]
                flat[k] = old + h
                up = value()
                flat[k] = old - h
                down = value()
                flat[k] = old
                num = (up - down) / (2 * h)
                err = abs(gflat[k] - num) / max(1e-8, abs(gflat[k]) + abs(num))
                worst = max(worst, err)
        return worst
    finally:
        for p, d in zip(params, originals):
            p.data = d
