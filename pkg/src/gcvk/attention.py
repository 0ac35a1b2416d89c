"""Windowed multi-head self-attention, local and global-query variants.

Both score tokens as softmax(q k^T / sqrt(d) + b) v per head, where b is
a learned bias looked up by pairwise token displacement.  The local
variant projects q, k, v from the window itself; the global variant
receives a precomputed query map shared by every window of the stage
and only projects k and v.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import Linear, Module, param, trunc_normal
from .tensor import Tensor


def relative_position_index(p: int) -> np.ndarray:
    """Flat displacement index for every ordered token pair of a p x p
    window: (dy + p - 1) * (2p - 1) + (dx + p - 1), values in
    [0, (2p-1)^2).
    """
    if p < 1:
        raise ConfigError(f"window extent must be >= 1, got {p}")
    coords = np.stack(np.meshgrid(np.arange(p), np.arange(p),
                                  indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    return ((rel[0] + p - 1) * (2 * p - 1) + (rel[1] + p - 1)).astype(np.int64)


class RelativePositionBias(Module):
    """Learned (2p-1)^2 x heads bias table sampled per token pair."""

    def __init__(self, p: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.table = param(trunc_normal(
            rng, ((2 * p - 1) ** 2, heads), std=0.02, dtype=dtype))
        self.index = relative_position_index(p)

    def __call__(self) -> Tensor:
        bias = ops.take_rows(self.table, self.index)  # (n, n, heads)
        return ops.permute(bias, (2, 0, 1))


def _split_heads(t: Tensor, heads: int) -> Tensor:
    """(B*, n, C) -> (B*, heads, n, C/heads), head index outer."""
    bn, n, c = t.shape
    t = ops.reshape(t, (bn, n, heads, c // heads))
    return ops.permute(t, (0, 2, 1, 3))


def _merge_heads(t: Tensor) -> Tensor:
    bn, heads, n, d = t.shape
    t = ops.permute(t, (0, 2, 1, 3))
    return ops.reshape(t, (bn, n, heads * d))


def _attend(q: Tensor, k: Tensor, v: Tensor, bias: Tensor,
            scale: float) -> Tensor:
    logits = ops.matmul(ops.mul(q, scale), ops.permute(k, (0, 1, 3, 2)))
    logits = ops.add(logits, ops.reshape(bias, (1,) + bias.shape))
    attn = ops.softmax(logits, axis=-1)
    return ops.matmul(attn, v)


class LocalWindowAttention(Module):
    """Self-attention restricted to each window's own tokens."""

    def __init__(self, dim: int, heads: int, window: int,
                 rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.bias = RelativePositionBias(window, heads, rng, dtype=dtype)
        self.heads = heads
        self.window = window
        self.scale = 1.0 / math.sqrt(dim / heads)

    def __call__(self, tokens: Tensor) -> Tensor:
        bn, n, c = tokens.shape
        if n != self.window * self.window:
            raise ShapeError(
                f"expected {self.window * self.window} tokens per window, "
                f"got {n}")
        qkv = self.qkv(tokens)  # (B*, n, 3C)
        q, k, v = (
            _split_heads(part, self.heads)
            for part in ops.split(qkv, 3, axis=2)
        )
        out = _attend(q, k, v, self.bias(), self.scale)
        return self.proj(_merge_heads(out))


class GlobalWindowAttention(Module):
    """Cross-attention of a stage-shared query map against each window.

    No query projection exists here; q arrives precomputed with shape
    (B, C, h, w), is repeated once per window along the batch axis and
    split into heads.
    """

    def __init__(self, dim: int, heads: int, window: int,
                 rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.kv = Linear(dim, 2 * dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.bias = RelativePositionBias(window, heads, rng, dtype=dtype)
        self.heads = heads
        self.window = window
        self.scale = 1.0 / math.sqrt(dim / heads)

    def __call__(self, tokens: Tensor, q_global: Tensor,
                 q_override: Optional[Tensor] = None) -> Tensor:
        bn, n, c = tokens.shape
        if n != self.window * self.window:
            raise ShapeError(
                f"expected {self.window * self.window} tokens per window, "
                f"got {n}")
        kv = self.kv(tokens)  # (B*, n, 2C)
        k, v = (
            _split_heads(part, self.heads)
            for part in ops.split(kv, 2, axis=2)
        )
        if q_override is not None:
            q = q_override  # test hook: (B*, heads, n, d)
        else:
            B, qc, qh, qw = q_global.shape
            if (qh, qw) != (self.window, self.window) or qc != c:
                raise ShapeError(
                    f"query map {q_global.shape} does not match window "
                    f"{self.window} and dim {c}")
            if bn % B:
                raise ShapeError(
                    f"token batch {bn} is not a multiple of query batch {B}")
            q = ops.permute(q_global, (0, 2, 3, 1))  # (B, h, w, C)
            q = ops.reshape(q, (B, n, c))
            q = ops.repeat_interleave0(q, bn // B)  # (B*, n, C)
            q = _split_heads(q, self.heads)
        out = _attend(q, k, v, self.bias(), self.scale)
        return self.proj(_merge_heads(out))
