"""Differentiable primitives over :class:`Array`.

Every function takes Arrays (or plain numpy constants, which are wrapped as
non-differentiable inputs cast to the dtype of the Array operands) and
returns a new Array, recording a backward rule on the active tape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tape import Array, DiffMathError, ShapeError, make_result

LOG_FLOOR = 1e-10


def _dtype_of(*xs):
    for x in xs:
        if isinstance(x, Array):
            return x.dtype
    return None


def _wrap(x, dtype=None) -> Array:
    if isinstance(x, Array):
        return x
    if dtype is not None:
        return Array(np.asarray(x, dtype=dtype))
    return Array(x)


def _pair(a, b):
    dt = _dtype_of(a, b)
    return _wrap(a, dt), _wrap(b, dt)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Array:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Array:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Array:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    da, db = a.data, b.data
    return make_result(da * db, (a, b),
                       lambda g: (_unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)))


def div(a, b) -> Array:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    da, db = a.data, b.data
    out = da / db

    def backward(g):
        return _unbroadcast(g / db, da.shape), _unbroadcast(-g * out / db, db.shape)

    return make_result(out, (a, b), backward)


def neg(a) -> Array:
    a = _wrap(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def tanh(a) -> Array:
    a = _wrap(a)
    y = np.tanh(a.data)
    return make_result(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid_np(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Array:
    a = _wrap(a)
    y = _sigmoid_np(a.data)
    return make_result(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Array:
    a = _wrap(a)
    y = np.exp(a.data)
    return make_result(y, (a,), lambda g: (g * y,))


def log(a) -> Array:
    """Natural log of ``max(a, 1e-10)``; clamped entries get zero gradient."""
    a = _wrap(a)
    x = a.data
    safe = np.maximum(x, LOG_FLOOR)
    y = np.log(safe)

    def backward(g):
        return (np.where(x >= LOG_FLOOR, g / safe, 0.0).astype(x.dtype),)

    return make_result(y, (a,), backward)


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Array:
    a = _wrap(a)
    if a.ndim == 0 or a.shape[axis] < 1:
        raise ShapeError("softmax", a.shape)
    y = softmax_np(a.data, axis)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (a,), backward)


# --------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b) -> Array:
    a, b = _pair(a, b)
    A, B = a.data, b.data
    if A.ndim == 0 or B.ndim == 0:
        raise ShapeError("matmul", A.shape, B.shape)
    a2 = A[None, :] if A.ndim == 1 else A
    b2 = B[:, None] if B.ndim == 1 else B
    if a2.shape[-1] != b2.shape[-2]:
        raise ShapeError("matmul", A.shape, B.shape)
    try:
        out = np.matmul(a2, b2)
    except ValueError:
        raise ShapeError("matmul", A.shape, B.shape) from None
    if A.ndim == 1:
        out = out[..., 0, :]
    if B.ndim == 1:
        out = out[..., 0]

    def backward(g):
        g2 = g
        if A.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if B.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(A.shape)
        if b.requires_grad:
            if b2.ndim == 2:
                # fold leading dims of a into one GEMM
                k = a2.shape[-1]
                gb = a2.reshape(-1, k).T @ np.broadcast_to(g2, a2.shape[:-1] + (b2.shape[-1],)).reshape(-1, b2.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape)
            gb = gb.reshape(B.shape)
        return ga, gb

    return make_result(out, (a, b), backward)


def concat(arrays: Sequence, axis: int = -1) -> Array:
    dt = _dtype_of(*arrays)
    arrays = [_wrap(x, dt) for x in arrays]
    if not arrays:
        raise DiffMathError("concat: no inputs")
    nd = arrays[0].ndim
    ax = axis % nd
    for x in arrays[1:]:
        if x.ndim != nd or any(x.shape[i] != arrays[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", arrays[0].shape, x.shape)
    out = np.concatenate([x.data for x in arrays], axis=ax)
    bounds = np.cumsum([x.shape[ax] for x in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return make_result(out, tuple(arrays), backward)


def stack(arrays: Sequence, axis: int = 0) -> Array:
    dt = _dtype_of(*arrays)
    arrays = [_wrap(x, dt) for x in arrays]
    for x in arrays[1:]:
        if x.shape != arrays[0].shape:
            raise ShapeError("stack", arrays[0].shape, x.shape)
    out = np.stack([x.data for x in arrays], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(arrays)))

    return make_result(out, tuple(arrays), backward)


def reshape(a, shape) -> Array:
    a = _wrap(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return make_result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Array:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Array:
    a = _wrap(a)
    return make_result(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def getitem(a, index) -> Array:
    a = _wrap(a)
    out = a.data[index]
    src_shape, dt = a.shape, a.dtype

    def backward(g):
        full = np.zeros(src_shape, dtype=dt)
        np.add.at(full, index, g) if _is_fancy(index) else full.__setitem__(index, g)
        return (full,)

    return make_result(np.array(out, copy=True), (a,), backward)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def broadcast_to(a, shape) -> Array:
    """Tile ``a`` to ``shape`` following numpy broadcasting rules."""
    a = _wrap(a)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", src, tuple(shape)) from None
    return make_result(np.ascontiguousarray(out), (a,), lambda g: (_unbroadcast(g, src),))


def tile(a, reps: int, axis: int) -> Array:
    """Repeat ``a`` ``reps`` times along a new axis inserted at ``axis``."""
    a = _wrap(a)
    expanded = np.expand_dims(a.data, axis)
    shape = list(expanded.shape)
    shape[axis] = reps
    out = np.ascontiguousarray(np.broadcast_to(expanded, shape))
    return make_result(out, (a,), lambda g: (g.sum(axis=axis),))


def masked_fill_const(a, mask: np.ndarray, value: float) -> Array:
    """Add ``value`` where ``mask`` is False (used to silence padded logits)."""
    a = _wrap(a)
    fill = np.where(mask, 0.0, value).astype(a.dtype)
    m = mask.astype(a.dtype)

    def backward(g):
        return (_unbroadcast(g * m, a.shape) if m.shape != a.shape else g * m,)

    return make_result(a.data + fill, (a,), backward)


# --------------------------------------------------------------------------
# reductions


def sum(a, axis=None, keepdims: bool = False) -> Array:
    a = _wrap(a)
    src = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return make_result(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Array:
    a = _wrap(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def max(a, axis: int = -1) -> Array:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    a = _wrap(a)
    x = a.data
    idx = np.argmax(x, axis=axis)
    out = np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_result(out, (a,), backward)


# --------------------------------------------------------------------------
# indexing


def gather_rows(table, ids: np.ndarray) -> Array:
    """``table[ids]``: row lookup, e.g. an embedding table."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise DiffMathError(f"gather_rows: index out of range for {n} rows")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return make_result(out, (table,), backward)


def take_along(a, idx: np.ndarray, axis: int = -1) -> Array:
    """Pick one entry per slice along ``axis`` (output drops that axis)."""
    a = _wrap(a)
    idx = np.expand_dims(np.asarray(idx, dtype=np.int64), axis)
    if np.any(idx < 0) or np.any(idx >= a.shape[axis]):
        raise DiffMathError(f"take_along: index out of range for axis of size {a.shape[axis]}")
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_result(out, (a,), backward)


def scatter_add(src, index: np.ndarray, size: int) -> Array:
    """Accumulate ``src[..., i]`` into ``out[..., index[..., i]]``.

    ``index`` must broadcast to ``src.shape``; duplicate indices sum.
    The result has shape ``src.shape[:-1] + (size,)``.
    """
    src = _wrap(src)
    try:
        idx = np.broadcast_to(np.asarray(index, dtype=np.int64), src.shape)
    except ValueError:
        raise ShapeError("scatter_add", src.shape, np.shape(index)) from None
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise DiffMathError(f"scatter_add: index out of range for size {size}")
    lead = src.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    n = src.shape[-1]
    flat = (np.arange(rows, dtype=np.int64)[:, None] * size + idx.reshape(rows, n)).reshape(-1)
    out = np.bincount(flat, weights=src.data.reshape(-1).astype(np.float64), minlength=rows * size)
    out = out.astype(src.dtype).reshape(lead + (size,))

    def backward(g):
        return (g.reshape(-1)[flat].reshape(src.shape),)

    return make_result(out, (src,), backward)
