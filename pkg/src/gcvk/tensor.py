"""Dense tensor with a recording tape for reverse-mode differentiation.

A Tensor wraps a numpy float32/float64 array.  While a Tape is active,
every primitive applied to a tensor that requires gradients appends a
node (saved inputs + backward closure) in creation order; Tape.backward
then walks the nodes in strict reverse creation order and accumulates
gradients into ``Tensor.grad``.

Tensors are treated as immutable after construction; only optimizer
steps mutate ``data`` in place, outside any tape.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DtypeError, ShapeError, UsageError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.shape}, dtype={self.dtype.name}, "
                f"requires_grad={self.requires_grad})")

    def __len__(self) -> int:
        if self.ndim == 0:
            raise UsageError("len() of a 0-d tensor")
        return self.shape[0]

    # Arithmetic / shaping methods are attached by gcvk.ops at import time.


def same_dtype(*tensors: Tensor) -> np.dtype:
    """Enforce the no-mixed-precision invariant across operands."""
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise DtypeError(
                f"mixed dtypes in one expression: {dt.name} vs {t.dtype.name}"
            )
    return dt


class Tape:
    """Records primitive applications; backward replays them in reverse."""

    _current: Optional["Tape"] = None

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._prev: Optional["Tape"] = None

    def __enter__(self) -> "Tape":
        self._prev = Tape._current
        Tape._current = self
        return self

    def __exit__(self, *exc) -> None:
        Tape._current = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self._nodes)

    @staticmethod
    def current() -> Optional["Tape"]:
        return Tape._current

    def record(self, out: Tensor, inputs: Sequence[Tensor],
               backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
               ) -> None:
        self._nodes.append((out, tuple(inputs), backward))

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(input) into .grad of every reachable input."""
        if root.size != 1:
            raise UsageError(
                f"backward root must be scalar, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for out, inputs, bwd in reversed(self._nodes):
            gout = out.grad
            if gout is None:
                continue
            grads = bwd(gout)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if g.shape != t.shape:
                    raise ShapeError(
                        f"gradient shape {g.shape} != value shape {t.shape}")
                t.grad = g if t.grad is None else t.grad + g
