"""Backbone assembly: stem, four stages of alternating local/global
window attention with shared global queries, stage-entry reducers, and
the classification head."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import ops
from .attention import GlobalWindowAttention, LocalWindowAttention
from .blocks import Downsample, GlobalTokenGenerator
from .errors import ConfigError
from .nn import LayerNorm, Linear, Mlp, Module
from .tensor import Tensor
from .windowing import PatchStem, WindowLayout, window_partition, window_reverse

DEFAULT_WINDOWS = (7, 7, 14, 7)
NUM_STAGES = 4


@dataclass
class ModelConfig:
    """Per-variant hyperparameters.

    Stage i runs at dim base_dim * 2**i and resolution img_size / 2**(i+2).
    windows=None picks, per stage, the largest power-of-two fraction of
    the stage resolution that does not exceed the preferred extents
    (7, 7, 14, 7), so every resolution-to-window ratio stays a power of
    two as the query generator requires.
    """

    name: str = "custom"
    base_dim: int = 64
    depths: tuple[int, ...] = (2, 2, 6, 2)
    heads: tuple[int, ...] = (2, 4, 8, 16)
    windows: Optional[tuple[int, ...]] = None
    mlp_ratio: float = 3.0
    img_size: int = 224
    num_classes: int = 1000
    se_ratio: int = 4
    downsampler: str = "conv"
    mixer: str = "gcvit"

    def stage_dim(self, i: int) -> int:
        return self.base_dim * (2 ** i)

    def stage_resolution(self, i: int) -> int:
        return self.img_size // (2 ** (i + 2))

    def resolved_windows(self) -> tuple[int, ...]:
        if self.windows is not None:
            ws = tuple(self.windows)
            for i, w in enumerate(ws):
                r = self.stage_resolution(i)
                if w < 1 or r % w or (r // w) & (r // w - 1):
                    raise ConfigError(
                        f"windows: stage {i + 1} resolution {r} needs a "
                        f"window dividing it with a power-of-two ratio, "
                        f"got {w}")
            return ws
        return tuple(_fit_window(self.stage_resolution(i),
                                 DEFAULT_WINDOWS[i], i)
                     for i in range(NUM_STAGES))

    def validate(self) -> None:
        if len(self.depths) != NUM_STAGES:
            raise ConfigError(f"depths must list {NUM_STAGES} stages, got "
                              f"{list(self.depths)}")
        if len(self.heads) != NUM_STAGES:
            raise ConfigError(f"heads must list {NUM_STAGES} stages, got "
                              f"{list(self.heads)}")
        for i, d in enumerate(self.depths):
            if d < 2:
                raise ConfigError(
                    f"depths: stage {i + 1} depth must be >= 2 so at least "
                    f"one local/global pair exists, got {d}")
        for i, h in enumerate(self.heads):
            if h < 1 or self.stage_dim(i) % h:
                raise ConfigError(
                    f"heads: stage {i + 1} dim {self.stage_dim(i)} not "
                    f"divisible by {h}")
        if self.img_size % 32:
            raise ConfigError(
                f"img_size must be a multiple of 32, got {self.img_size}")
        if self.mlp_ratio <= 0:
            raise ConfigError(f"mlp_ratio must be positive, got "
                              f"{self.mlp_ratio}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got "
                              f"{self.num_classes}")
        if self.downsampler not in ("conv", "maxpool"):
            raise ConfigError(
                f"downsampler must be conv|maxpool, got {self.downsampler!r}")
        if self.mixer not in ("gcvit", "mamba_hybrid"):
            raise ConfigError(
                f"mixer must be gcvit|mamba_hybrid, got {self.mixer!r}")
        self.resolved_windows()


def _fit_window(resolution: int, preferred: int, stage: int) -> int:
    w = resolution
    while w > preferred:
        if w % 2:
            raise ConfigError(
                f"stage {stage + 1} resolution {resolution} admits no "
                f"window <= {preferred} with a power-of-two ratio")
        w //= 2
    if w < 1:
        raise ConfigError(f"stage {stage + 1} resolution {resolution} too "
                          f"small")
    return w


VARIANTS: dict[str, ModelConfig] = {
    "xxt": ModelConfig(name="xxt", base_dim=64, depths=(2, 2, 6, 2),
                       heads=(2, 4, 8, 16), mlp_ratio=3.0),
    "xt": ModelConfig(name="xt", base_dim=64, depths=(3, 4, 6, 5),
                      heads=(2, 4, 8, 16), mlp_ratio=3.0),
    "tiny": ModelConfig(name="tiny", base_dim=64, depths=(3, 4, 19, 5),
                        heads=(2, 4, 8, 16), mlp_ratio=3.0),
    # The wider variants hit their published parameter budgets with a
    # leaner MLP; ratio is part of the per-variant tuning surface.
    "small": ModelConfig(name="small", base_dim=96, depths=(3, 4, 19, 5),
                         heads=(3, 6, 12, 24), mlp_ratio=2.0),
    "base": ModelConfig(name="base", base_dim=128, depths=(3, 4, 19, 5),
                        heads=(4, 8, 16, 32), mlp_ratio=2.0),
}


def variant_config(name: str, **overrides) -> ModelConfig:
    if name not in VARIANTS:
        raise ConfigError(
            f"unknown variant {name!r}; available: {sorted(VARIANTS)}")
    return replace(VARIANTS[name], **overrides)


class AttentionBlock(Module):
    """Pre-norm residual attention followed by a pre-norm residual MLP."""

    def __init__(self, dim: int, heads: int, window: int, kind: str,
                 mlp_ratio: float, rng: np.random.Generator, dtype):
        self.norm1 = LayerNorm(dim, dtype=dtype)
        if kind == "local":
            self.attn = LocalWindowAttention(dim, heads, window, rng,
                                             dtype=dtype)
        else:
            self.attn = GlobalWindowAttention(dim, heads, window, rng,
                                              dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, mlp_ratio, rng, dtype=dtype)
        self.kind = kind

    def __call__(self, tokens: Tensor, q_global: Tensor) -> Tensor:
        normed = self.norm1(tokens)
        if self.kind == "local":
            mixed = self.attn(normed)
        else:
            mixed = self.attn(normed, q_global)
        tokens = ops.add(tokens, mixed)
        return ops.add(tokens, self.mlp(self.norm2(tokens)))


class Stage(Module):
    """Entry reducer, one global-query generator, and depth attention
    blocks alternating local (even index) / global (odd index)."""

    def __init__(self, c_in: int, dim: int, depth: int, heads: int,
                 resolution: int, window: int, mlp_ratio: float,
                 downsampler: str, se_ratio: int,
                 rng: np.random.Generator, dtype):
        self.reduce = Downsample(c_in, dim, rng, mode=downsampler,
                                 dtype=dtype, se_ratio=se_ratio)
        self.token_gen = GlobalTokenGenerator(dim, resolution, window, rng,
                                              dtype=dtype, se_ratio=se_ratio)
        self.blocks = [
            AttentionBlock(dim, heads, window,
                           "local" if i % 2 == 0 else "global",
                           mlp_ratio, rng, dtype)
            for i in range(depth)
        ]
        self.dim = dim
        self.depth = depth
        self.heads = heads
        self.resolution = resolution
        self.window = window

    def layout(self) -> WindowLayout:
        return WindowLayout(self.resolution, self.resolution,
                            self.window, self.window)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.reduce(x)
        q_global = self.token_gen(x)  # one query map, shared by all blocks
        layout = self.layout()
        batch = x.shape[0]
        tokens = window_partition(x, layout)
        for block in self.blocks:
            tokens = block(tokens, q_global)
        return window_reverse(tokens, layout, batch)


class GlobalContextViT(Module):
    """Hierarchical backbone with stage-shared global query attention."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 dtype=np.float32):
        config.validate()
        rng = np.random.default_rng(seed)
        windows = config.resolved_windows()
        self.stem = PatchStem(config.base_dim, rng, dtype=dtype,
                              se_ratio=config.se_ratio)
        stages = []
        c_in = config.base_dim
        for i in range(NUM_STAGES):
            dim = config.stage_dim(i)
            stages.append(Stage(
                c_in, dim, config.depths[i], config.heads[i],
                config.stage_resolution(i), windows[i], config.mlp_ratio,
                config.downsampler, config.se_ratio, rng, dtype))
            c_in = dim
        self.stages = stages
        self.norm = LayerNorm(c_in, dtype=dtype)
        self.head = Linear(c_in, config.num_classes, rng, dtype=dtype)
        self.config = config
        self.dtype = np.dtype(dtype)

    def features(self, x: Tensor) -> Tensor:
        S = self.config.img_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != S or x.shape[3] != S:
            raise ConfigError(
                f"expected input (B,3,{S},{S}), got {x.shape}")
        y = self.stem(x)
        for stage in self.stages:
            y = stage(y)
        return y

    def __call__(self, x: Tensor) -> Tensor:
        y = self.features(x)  # (B, C, S/32, S/32)
        B, C, H, W = y.shape
        tokens = ops.reshape(ops.permute(y, (0, 2, 3, 1)), (B, H * W, C))
        tokens = self.norm(tokens)
        pooled = ops.mean(tokens, axis=1)
        return self.head(pooled)


def build(config: ModelConfig, seed: int = 0,
          dtype=np.float32) -> GlobalContextViT:
    return GlobalContextViT(config, seed=seed, dtype=dtype)
