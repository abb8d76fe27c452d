"""Ordered, named collections of trainable tensors.

A ParamSet is the unit of exchange between data centers and the server:
models expose live views, the server works on detached copies, and the
checkpoint format serializes them bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ParamSet:
    """Ordered mapping of parameter name -> Tensor.

    Two ParamSets built from the same architecture carry identical names,
    order and shapes, which is what aggregation and checkpoint loading
    validate against.
    """

    def __init__(self, items: list[tuple[str, Tensor]]):
        names = [n for n, _ in items]
        if len(set(names)) != len(names):
            raise ValueError("ParamSet: duplicate parameter names")
        self._items: list[tuple[str, Tensor]] = list(items)
        self._by_name = dict(items)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._items)

    def names(self) -> list[str]:
        return [n for n, _ in self._items]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self._items]

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, name: str) -> Tensor:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def total_scalars(self) -> int:
        return sum(t.size for t in self.tensors())

    def structure(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, t.shape) for n, t in self._items]

    def copy(self) -> "ParamSet":
        """Detached deep copy; the copies are themselves trainable tensors."""
        return ParamSet([(n, Tensor(t.data.copy(), requires_grad=True))
                         for n, t in self._items])

    def load_from(self, other: "ParamSet") -> None:
        """Overwrite this set's values with another's (bitwise copy)."""
        if self.structure() != other.structure():
            raise ValueError(
                f"ParamSet structure mismatch: {self.structure()} vs {other.structure()}")
        for (_, dst), (_, src) in zip(self._items, other._items):
            np.copyto(dst.data, src.data)

    def allclose(self, other: "ParamSet", atol: float = 0.0) -> bool:
        if self.structure() != other.structure():
            return False
        return all(np.allclose(a.data, b.data, rtol=0.0, atol=atol)
                   for (_, a), (_, b) in zip(self._items, other._items))

    def identical(self, other: "ParamSet") -> bool:
        """Bit-exact equality of structure and values."""
        if self.structure() != other.structure():
            return False
        return all(a.data.tobytes() == b.data.tobytes()
                   for (_, a), (_, b) in zip(self._items, other._items))
