"""Tensor and parameter storage for the numpy network kernel."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy a layer contract."""


class Tensor:
    """Dense float array with an optional gradient buffer.

    Activations flow through the kernel as plain ndarrays; ``Tensor`` wraps the
    values that need a gradient slot or persistence (weights, biases, batch-norm
    statistics).
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = True, dtype=np.float32):
        arr = np.ascontiguousarray(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> None:
        """Cast in place (used by the 64-bit gradient-check mode)."""
        self.data = self.data.astype(dtype)
        if self.grad is not None:
            self.grad = self.grad.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class ParamStore:
    """Ordered name -> Tensor map plus the Adam state for its trainable entries."""

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        for name, t in self.params.items():
            if t.requires_grad:
                yield name, t

    def num_trainable(self) -> int:
        return sum(t.size for _, t in self.trainable())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def astype(self, dtype) -> None:
        for t in self.params.values():
            t.astype(dtype)
        for buf in (self.adam_m, self.adam_v):
            for k in buf:
                buf[k] = buf[k].astype(dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}
