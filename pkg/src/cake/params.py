"""Named parameter collections."""

from __future__ import annotations

import zlib
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .diffmath import Array

INIT_SCALE = 0.08


class ParamStore:
    """Ordered name -> Array map.

    Each parameter draws its initial values from an RNG seeded by
    ``(seed, crc32(name))``, so models built from the same seed share the
    values of every parameter they have in common.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._params: "OrderedDict[str, Array]" = OrderedDict()

    def add(self, name: str, shape: tuple, bias: bool = False) -> Array:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        if bias:
            data = np.zeros(shape, dtype=self.dtype)
        else:
            rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
            data = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(self.dtype)
        p = Array(data, requires_grad=True, name=name, dtype=self.dtype)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Array:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return list(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state(self, state: dict) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in self._params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def astype(self, dtype) -> None:
        """Cast every parameter in place (float64 for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for p in self._params.values():
            p.data = p.data.astype(dtype)
