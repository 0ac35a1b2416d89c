"""Window partition/reverse and the overlapping-patch stem."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .nn import Conv2d, LayerNorm, Module
from .tensor import Tensor


@dataclass(frozen=True)
class WindowLayout:
    """Tiling of an H x W feature map into non-overlapping h x w windows."""

    H: int
    W: int
    h: int
    w: int

    def __post_init__(self):
        if self.H % self.h or self.W % self.w:
            raise ShapeError(
                f"window ({self.h},{self.w}) does not tile image "
                f"({self.H},{self.W})")

    @property
    def rows(self) -> int:
        return self.H // self.h

    @property
    def cols(self) -> int:
        return self.W // self.w

    @property
    def num_windows(self) -> int:
        return self.rows * self.cols

    @property
    def tokens_per_window(self) -> int:
        return self.h * self.w


def window_partition(x: Tensor, layout: WindowLayout) -> Tensor:
    """(B, C, H, W) -> (B*N, h*w, C).

    Windows are ordered row-major over (row-block, col-block) with the
    window index varying fastest (inner to batch); tokens inside a
    window are row-major over (y, x).
    """
    B, C, H, W = x.shape
    if (H, W) != (layout.H, layout.W):
        raise ShapeError(
            f"input {H}x{W} does not match layout {layout.H}x{layout.W}")
    t = ops.reshape(x, (B, C, layout.rows, layout.h, layout.cols, layout.w))
    t = ops.permute(t, (0, 2, 4, 3, 5, 1))
    return ops.reshape(
        t, (B * layout.num_windows, layout.tokens_per_window, C))


def window_reverse(tokens: Tensor, layout: WindowLayout, batch: int) -> Tensor:
    """Exact inverse of window_partition."""
    expect = batch * layout.num_windows
    if tokens.shape[0] != expect or tokens.shape[1] != layout.tokens_per_window:
        raise ShapeError(
            f"token tensor {tokens.shape} does not match layout "
            f"(expected ({expect}, {layout.tokens_per_window}, C))")
    C = tokens.shape[2]
    t = ops.reshape(tokens, (batch, layout.rows, layout.cols, layout.h,
                             layout.w, C))
    t = ops.permute(t, (0, 5, 1, 3, 2, 4))
    return ops.reshape(t, (batch, C, layout.H, layout.W))


class PatchStem(Module):
    """Overlapping-patch embedding: 3x3 stride-2 conv -> channel LN ->
    one fused inverted-residual block.  Halves the spatial extent; the
    stage-entry reducer supplies the second halving.
    """

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32,
                 se_ratio: int = 4):
        from .blocks import FusedMBConv

        self.conv = Conv2d(3, dim, 3, rng, stride=2, padding=1, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)
        self.block = FusedMBConv(dim, rng, dtype=dtype, se_ratio=se_ratio)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ConfigError(f"stem expects (B,3,H,W), got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ConfigError(
                f"stem input extents must be divisible by 4, got "
                f"{x.shape[2]}x{x.shape[3]}")
        y = self.conv(x)
        y = self.norm.nchw(y)
        return self.block(y)
