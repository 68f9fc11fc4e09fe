"""Named parameter storage."""

from __future__ import annotations

from collections.abc import Iterator, Mapping

import numpy as np

from ..errors import ConfigurationError, ContractError


class ParameterStore(Mapping):
    """Ordered map from dot-separated parameter paths to float64 arrays.

    Each parameter has an optional gradient slot (``grads``) whose shape must
    match the parameter.
    """

    def __init__(self, items: Mapping[str, np.ndarray] | None = None):
        self._values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (items or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._values:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._values[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name in self._values and value.shape != self._values[name].shape:
            raise ConfigurationError(
                f"parameter {name!r}: shape {value.shape} does not match {self._values[name].shape}"
            )
        self._values[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        """Names in fixed (sorted) order, used wherever determinism matters."""
        return sorted(self._values)

    def num_values(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    def set_grads(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if name not in self._values:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != self._values[name].shape:
                raise ContractError(f"gradient for {name!r} has shape {g.shape}, expected {self._values[name].shape}")
            self.grads[name] = g

    def copy(self) -> ParameterStore:
        return ParameterStore({k: v.copy() for k, v in self._values.items()})

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self._values.items() if k.startswith(prefix)}

    def __repr__(self) -> str:
        return f"ParameterStore({len(self)} tensors, {self.num_values()} values)"
