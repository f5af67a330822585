"""Named trainable parameters, persisted across tapes.

Parameter values live outside any tape; each forward pass binds them to
fresh leaf nodes.  Names are dotted paths ("block03.grn_q.b") and must be
unique within a model; registration order is preserved and defines the
checkpoint record order.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Node, Tape
from .linalg import as_tensor


class Parameter:
    __slots__ = ("name", "value")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = as_tensor(value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParamSet:
    """Ordered registry of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, value)
        self._params[name] = p
        return p

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __contains__(self, name: str):
        return name in self._params

    def get(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def values(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, p in self._params.items():
            if name not in values:
                if strict:
                    raise KeyError(f"missing parameter in source: {name}")
                continue
            v = as_tensor(values[name])
            if v.shape != p.value.shape:
                raise ValueError(
                    f"shape mismatch for {name}: have {p.value.shape}, got {v.shape}"
                )
            p.value = v.copy()

    def bind(self, tape: Tape) -> dict[str, Node]:
        """Create one leaf node per parameter on ``tape``."""
        return {name: tape.leaf(p.value) for name, p in self._params.items()}

    def count(self) -> int:
        return sum(p.value.size for p in self)
