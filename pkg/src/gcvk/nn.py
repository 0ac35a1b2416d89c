"""Parameter containers and initialization.

A Module is a plain object whose Tensor attributes are its parameters;
named_parameters walks attributes (and lists of sub-modules) in
definition order, which fixes the serialization naming scheme.
"""

from __future__ import annotations

import contextlib
from typing import Iterator, Optional

import numpy as np

from . import ops
from .errors import ConfigError
from .tensor import Tensor

_ZERO_INIT = False


@contextlib.contextmanager
def zero_init():
    """Build models with zero-filled weight tensors.

    Parameter counting and structure inspection only care about shapes;
    zero fill skips the random sampling, which dominates build time for
    the wide variants.  Models built this way are not for forwards.
    """
    global _ZERO_INIT
    prev = _ZERO_INIT
    _ZERO_INIT = True
    try:
        yield
    finally:
        _ZERO_INIT = prev


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until inside [-2 std, 2 std]."""
    dt = np.dtype(dtype)
    if _ZERO_INIT:
        return np.zeros(shape, dtype=dt)
    out = rng.standard_normal(shape, dtype=dt) * dt.type(std)
    limit = dt.type(2 * std)
    flat = out.reshape(-1)
    bad = np.flatnonzero(np.abs(flat) > limit)
    while bad.size:
        repl = rng.standard_normal(bad.size, dtype=dt) * dt.type(std)
        flat[bad] = repl
        bad = bad[np.abs(repl) > limit]
    return out


def param(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=True)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}" if prefix else key
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class Linear(Module):
    """Affine layer; weights are fan-in-scaled truncated normal so toy
    configs train from scratch with plain SGD."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        self.w = param(trunc_normal(rng, (d_in, d_out),
                                    std=1.0 / np.sqrt(d_in), dtype=dtype))
        self.b = param(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, padding=0,
                 groups: int = 1, dtype=np.float32, bias: bool = True):
        if c_in % groups or c_out % groups:
            raise ConfigError(
                f"conv channels not divisible by groups: {c_in}->{c_out} "
                f"groups={groups}")
        fan_in = (c_in // groups) * kernel * kernel
        self.w = param(trunc_normal(
            rng, (c_out, c_in // groups, kernel, kernel),
            std=1.0 / np.sqrt(fan_in), dtype=dtype))
        self.b = param(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride,
                          padding=self.padding, groups=self.groups)


class LayerNorm(Module):
    """Normalization over the trailing (channel) axis."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = param(np.ones(dim, dtype=dtype))
        self.beta = param(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layernorm(x, self.gamma, self.beta, self.eps)

    def nchw(self, x: Tensor) -> Tensor:
        """Apply over channels of an NCHW tensor."""
        y = ops.permute(x, (0, 2, 3, 1))
        y = self(y)
        return ops.permute(y, (0, 3, 1, 2))


class Mlp(Module):
    """Two-layer GELU MLP with a configurable hidden width ratio."""

    def __init__(self, dim: int, ratio: float, rng: np.random.Generator,
                 dtype=np.float32):
        hidden = int(round(dim * ratio))
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class BatchNorm2d(Module):
    """Batch-statistics normalization over (B, H, W) per channel.

    Desk-scale training use only: no running statistics are kept.
    """

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gamma = param(np.ones(dim, dtype=dtype))
        self.beta = param(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = ops.mean(x, axis=(0, 2, 3), keepdims=True)
        xc = ops.sub(x, mu)
        var = ops.mean(ops.mul(xc, xc), axis=(0, 2, 3), keepdims=True)
        inv = ops.powf(ops.add(var, self.eps), -0.5)
        g = ops.reshape(self.gamma, (1, -1, 1, 1))
        b = ops.reshape(self.beta, (1, -1, 1, 1))
        return ops.add(ops.mul(ops.mul(xc, inv), g), b)


def sgd_step(params: list[Tensor], lr: float) -> None:
    """One plain gradient-descent update; grads are consumed."""
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad
            p.grad = None
