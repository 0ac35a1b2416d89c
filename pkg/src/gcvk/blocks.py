"""Convolutional building blocks shared by the backbone stages."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ConfigError
from .nn import Conv2d, LayerNorm, Linear, Module
from .tensor import Tensor


class SqueezeExcite(Module):
    """Channel gating: sigmoid(expand(relu(reduce(pool(x))))) * x."""

    def __init__(self, dim: int, rng: np.random.Generator, ratio: int = 4,
                 dtype=np.float32):
        if dim % ratio:
            raise ConfigError(
                f"squeeze-excite ratio {ratio} does not divide dim {dim}")
        self.reduce = Linear(dim, dim // ratio, rng, dtype=dtype)
        self.expand = Linear(dim // ratio, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        pooled = ops.global_avg_pool(x)  # (B, C)
        gate = ops.sigmoid(self.expand(ops.relu(self.reduce(pooled))))
        gate = ops.reshape(gate, gate.shape + (1, 1))
        return ops.mul(x, gate)


class FusedMBConv(Module):
    """Modified fused inverted-residual block at constant width:
    depthwise 3x3 -> GELU -> squeeze-excite -> pointwise 1x1, plus the
    input (no channel expansion).
    """

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32,
                 se_ratio: int = 4):
        self.dw = Conv2d(dim, dim, 3, rng, stride=1, padding=1, groups=dim,
                         dtype=dtype)
        self.se = SqueezeExcite(dim, rng, ratio=se_ratio, dtype=dtype)
        self.pw = Conv2d(dim, dim, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.dw(x)
        y = ops.gelu(y)
        y = self.se(y)
        return ops.add(self.pw(y), x)


class Downsample(Module):
    """Stage-entry reducer: fused block, then a halving projection
    (strided 3x3 conv by default, or 3x3 conv + max-pool in "maxpool"
    mode), then channel LayerNorm.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 mode: str = "conv", dtype=np.float32, se_ratio: int = 4):
        if mode not in ("conv", "maxpool"):
            raise ConfigError(f"downsampler mode must be conv|maxpool, "
                              f"got {mode!r}")
        self.block = FusedMBConv(c_in, rng, dtype=dtype, se_ratio=se_ratio)
        stride = 2 if mode == "conv" else 1
        self.conv = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1,
                           dtype=dtype)
        self.norm = LayerNorm(c_out, dtype=dtype)
        self.mode = mode

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ConfigError(
                f"downsampler needs even spatial extents, got "
                f"{x.shape[2]}x{x.shape[3]}")
        y = self.block(x)
        y = self.conv(y)
        if self.mode == "maxpool":
            y = ops.maxpool2d(y, kernel=3, stride=2, padding=1)
        return self.norm.nchw(y)


class GlobalTokenGenerator(Module):
    """Produces the stage-shared query map by repeating
    (fused block -> max-pool k3 s2 p1) log2(H/h) times; channels stay
    fixed and the output extent equals the window extent.
    """

    def __init__(self, dim: int, feature_extent: int, window_extent: int,
                 rng: np.random.Generator, dtype=np.float32,
                 se_ratio: int = 4):
        if feature_extent % window_extent:
            raise ConfigError(
                f"feature extent {feature_extent} not a multiple of window "
                f"{window_extent}")
        ratio = feature_extent // window_extent
        reps = int(math.log2(ratio))
        if 2 ** reps != ratio:
            raise ConfigError(
                f"feature/window ratio must be a power of two, got {ratio}")
        self.blocks = [FusedMBConv(dim, rng, dtype=dtype, se_ratio=se_ratio)
                       for _ in range(reps)]
        self.feature_extent = feature_extent
        self.window_extent = window_extent

    @property
    def repetitions(self) -> int:
        return len(self.blocks)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = ops.maxpool2d(block(x), kernel=3, stride=2, padding=1)
        return x
