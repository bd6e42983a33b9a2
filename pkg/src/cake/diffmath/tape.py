"""Array type and the define-by-run tape used for reverse-mode gradients."""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_DEFAULT_DTYPE = [np.float32]
_ACTIVE_TAPES: list["Tape"] = []


class DiffMathError(Exception):
    """Raised for invalid operations on arrays or tapes."""


class ShapeError(DiffMathError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


def default_dtype():
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for arrays built from Python data."""
    _DEFAULT_DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


def active_tape() -> Optional["Tape"]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Array:
    """Dense tensor with an optional gradient slot.

    Floating numpy input keeps its dtype; anything else is converted to the
    current default dtype (float32 unless changed with ``precision``).
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, Array):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype.kind != "f":
                arr = arr.astype(default_dtype())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Array(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations whose inputs require gradients are
    recorded while the tape is active.  ``backward`` may run once.
    """

    def __init__(self):
        self.records: list[tuple[Array, tuple[Array, ...], BackwardFn]] = []
        self._counter = 0
        self._consumed = False

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def _assign(self, arr: Array):
        if arr.node_id is None:
            arr.node_id = self._counter
            self._counter += 1

    def record(self, out: Array, inputs: tuple[Array, ...], backward_fn: BackwardFn):
        if self._consumed:
            raise DiffMathError("tape already consumed by backward; record a new tape")
        for x in inputs:
            self._assign(x)
        out.node_id = None
        self._assign(out)
        self.records.append((out, inputs, backward_fn))

    def backward(self, loss: Array, params: Optional[Iterable[Array]] = None) -> list[np.ndarray]:
        """Propagate d(loss)/d(node) in reverse recording order.

        Every array that requires gradients and fed the loss gets ``.grad``
        set.  When ``params`` is given, returns their gradients in order,
        with zeros for parameters the loss does not depend on.
        """
        if self._consumed:
            raise DiffMathError("backward called twice on the same tape")
        if loss.data.size != 1:
            raise DiffMathError(f"backward: loss must be scalar, got shape {loss.shape}")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Array] = {}
        produced = {id(out) for out, _, _ in self.records}
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for x, gx in zip(inputs, in_grads):
                if gx is None or not x.requires_grad:
                    continue
                k = id(x)
                if k not in produced:
                    leaves[k] = x
                prev = grads.get(k)
                grads[k] = gx if prev is None else prev + gx
        for k, leaf in leaves.items():
            g = grads.get(k)
            if g is not None:
                leaf.grad = g.astype(leaf.data.dtype, copy=False).reshape(leaf.shape)
        if loss.requires_grad and id(loss) not in produced:
            loss.grad = np.ones_like(loss.data)
        if params is None:
            return []
        out = []
        for p in params:
            g = grads.get(id(p))
            if g is None and p is loss:
                g = np.ones_like(p.data)
            out.append(np.zeros_like(p.data) if g is None else g.reshape(p.shape))
        return out


def backward(tape: Tape, loss: Array, params: Optional[Iterable[Array]] = None):
    return tape.backward(loss, params)


def make_result(data: np.ndarray, inputs: tuple, backward_fn: BackwardFn) -> Array:
    """Wrap an op's output and record it if any input needs a gradient."""
    out = Array(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn)
    return out
