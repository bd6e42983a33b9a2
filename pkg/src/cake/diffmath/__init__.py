"""Dense arrays with reverse-mode differentiation."""

from . import ops
from .gradcheck import grad_check
from .gru import STEP_COUNTER, gru_scan
from .ops import (
    add, broadcast_to, concat, div, exp, gather_rows, getitem, log, masked_fill_const,
    matmul, max, mean, mul, neg, reshape, scatter_add, sigmoid, softmax, stack, sub,
    sum, swapaxes, take_along, tanh, tile, transpose,
)
from .tape import (
    Array, DiffMathError, ShapeError, Tape, active_tape, backward, default_dtype, precision,
)

OPS = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "matmul": matmul, "concat": concat, "stack": stack,
    "tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log, "softmax": softmax,
    "max": max, "sum": sum, "mean": mean,
    "reshape": reshape, "transpose": transpose, "swapaxes": swapaxes, "getitem": getitem,
    "broadcast_to": broadcast_to, "tile": tile, "masked_fill": masked_fill_const,
    "gather_rows": gather_rows, "take_along": take_along, "scatter_add": scatter_add,
    "gru_scan": gru_scan,
}


def forward_op(kind: str, *inputs, **attrs) -> Array:
    """Dispatch a primitive by name, e.g. ``forward_op("softmax", x, axis=0)``."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise DiffMathError(f"unknown op kind {kind!r}") from None
    return fn(*inputs, **attrs)
