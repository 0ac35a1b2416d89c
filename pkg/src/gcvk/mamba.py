"""Selective-scan state-space mixer and the hybrid mixer/attention stage.

The mixer splits the embedding into two half-width branches: a
selective-scan branch (non-causal depthwise conv -> SiLU -> scan) and a
symmetric branch without the scan (conv -> SiLU); their concatenation
is projected back to full width.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ConfigError, NumericError, UsageError
from .nn import BatchNorm2d, Conv2d, LayerNorm, Linear, Mlp, Module, param, trunc_normal
from .ops import selective_scan
from .tensor import Tensor

DT_MIN = 1e-3
DT_MAX = 0.1


def discretize(A: np.ndarray, B: np.ndarray, delta) -> tuple[np.ndarray,
                                                             np.ndarray]:
    """Zero-order-hold discretization of a diagonal continuous system.

    Abar = exp(delta A); Bbar = (delta A)^-1 (exp(delta A) - 1) delta B,
    elementwise over the state axis.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if (delta <= 0).any():
        raise NumericError(f"discretize: step must be positive, got "
                           f"{delta}")
    if (A >= 0).any():
        raise NumericError("discretize: state matrix entries must be "
                           "negative")
    z = delta * A
    abar = np.exp(z)
    bbar = np.expm1(z) / A * B
    return abar, bbar


def ssm_conv_kernel(A: np.ndarray, B: np.ndarray, C: np.ndarray, delta,
                    T: int) -> np.ndarray:
    """Length-T causal convolution kernel equivalent to the scan with
    time-invariant parameters: K = (C Bbar, C Abar Bbar, ...,
    C Abar^(T-1) Bbar).

    Raises if any parameter carries a varying time axis; selectivity has
    no kernel form.
    """
    A = np.asarray(A, dtype=np.float64)
    B = _require_static(np.asarray(B, dtype=np.float64), 1, "B")
    C = _require_static(np.asarray(C, dtype=np.float64), 1, "C")
    delta = _require_static(np.asarray(delta, dtype=np.float64), 0, "delta")
    abar, bbar = discretize(A, B, delta)
    powers = abar[None, :] ** np.arange(T)[:, None]  # (T, M)
    return powers @ (C * bbar)


def _require_static(arr: np.ndarray, state_rank: int,
                    name: str) -> np.ndarray:
    """Collapse an optional trailing time axis, rejecting values that
    genuinely vary over time."""
    if arr.ndim == state_rank:
        return arr
    if arr.ndim != state_rank + 1:
        raise UsageError(
            f"ssm_conv_kernel: {name} has rank {arr.ndim}, expected "
            f"{state_rank} (static) or {state_rank + 1} (with time axis)")
    first = arr[..., :1]
    if not np.array_equal(np.broadcast_to(first, arr.shape), arr):
        raise UsageError(
            f"ssm_conv_kernel: {name} varies over time; the kernel form "
            f"only exists for frozen parameters")
    return first[..., 0]


def apply_ssm_kernel(x: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Causal convolution y(t) = sum_tau K(tau) x(t - tau), per row."""
    T = x.shape[-1]
    full = np.apply_along_axis(lambda row: np.convolve(row, K)[:T], -1, x)
    return full


class SsmMixer(Module):
    """Two-branch token mixer with a selective scan on one branch."""

    def __init__(self, dim: int, rng: np.random.Generator,
                 d_state: int = 16, kernel: int = 3, dtype=np.float32):
        if dim % 2:
            raise ConfigError(f"mixer dim must be even, got {dim}")
        half = dim // 2
        self.dt_rank = math.ceil(dim / 16)
        self.d_state = d_state
        conv_std = 1.0 / math.sqrt(kernel)
        self.in_proj = Linear(dim, dim, rng, dtype=dtype)
        self.conv_x_w = param(trunc_normal(rng, (half, kernel), std=conv_std,
                                           dtype=dtype))
        self.conv_x_b = param(np.zeros(half, dtype=dtype))
        self.conv_z_w = param(trunc_normal(rng, (half, kernel), std=conv_std,
                                           dtype=dtype))
        self.conv_z_b = param(np.zeros(half, dtype=dtype))
        self.x_proj = Linear(half, self.dt_rank + 2 * d_state, rng,
                             dtype=dtype)
        self.dt_proj = Linear(self.dt_rank, half, rng, dtype=dtype)
        # steps start inside [DT_MIN, DT_MAX]: bias = softplus^-1(dt)
        dt = np.exp(rng.uniform(math.log(DT_MIN), math.log(DT_MAX),
                                size=half))
        self.dt_proj.b = param(np.log(np.expm1(dt)).astype(dtype))
        # state matrix -1..-M per channel, stored in log space
        a_init = np.tile(np.arange(1, d_state + 1, dtype=np.float64),
                         (half, 1))
        self.A_log = param(np.log(a_init).astype(dtype))
        self.D = param(np.ones(half, dtype=dtype))
        self.out_proj = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        B, T, C = x.shape
        half = C // 2
        xz = ops.permute(self.in_proj(x), (0, 2, 1))  # (B, C, T)
        xb, zb = ops.split(xz, 2, axis=1)
        xb = ops.silu(ops.conv1d_depthwise(xb, self.conv_x_w, self.conv_x_b))
        zb = ops.silu(ops.conv1d_depthwise(zb, self.conv_z_w, self.conv_z_b))

        tokens = ops.permute(xb, (0, 2, 1))  # (B, T, C/2)
        dbl = self.x_proj(tokens)  # (B, T, rank + 2M)
        dt = ops.narrow(dbl, 2, 0, self.dt_rank)
        Bp = ops.narrow(dbl, 2, self.dt_rank, self.d_state)
        Cp = ops.narrow(dbl, 2, self.dt_rank + self.d_state, self.d_state)
        delta = ops.permute(ops.softplus(self.dt_proj(dt)), (0, 2, 1))
        A = ops.neg(ops.exp(self.A_log))
        y = selective_scan(xb, delta, A, ops.permute(Bp, (0, 2, 1)),
                           ops.permute(Cp, (0, 2, 1)), self.D)
        out = ops.permute(ops.concat([y, zb], axis=1), (0, 2, 1))
        return self.out_proj(out)


class SelfAttentionMixer(Module):
    """Plain multi-head self-attention over the full token sequence
    (no position bias)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dtype=np.float32):
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        self.heads = heads
        self.scale = 1.0 / math.sqrt(dim / heads)

    def __call__(self, x: Tensor) -> Tensor:
        B, T, C = x.shape
        qkv = self.qkv(x)
        parts = []
        for part in ops.split(qkv, 3, axis=2):
            part = ops.reshape(part, (B, T, self.heads, C // self.heads))
            parts.append(ops.permute(part, (0, 2, 1, 3)))
        q, k, v = parts
        logits = ops.matmul(ops.mul(q, self.scale),
                            ops.permute(k, (0, 1, 3, 2)))
        attn = ops.softmax(logits, axis=-1)
        out = ops.matmul(attn, v)
        out = ops.reshape(ops.permute(out, (0, 2, 1, 3)), (B, T, C))
        return self.proj(out)


def hybrid_pattern(n: int) -> str:
    """Mixer-kind string for an n-layer stage: scan mixers first, then
    self-attention for the last n//2 layers."""
    m = n - n // 2
    return "M" * m + "S" * (n - m)


class HybridLayer(Module):
    """Pre-norm residual mixer + pre-norm residual MLP (token form)."""

    def __init__(self, dim: int, kind: str, heads: int, mlp_ratio: float,
                 rng: np.random.Generator, d_state: int = 16,
                 dtype=np.float32):
        if kind not in ("M", "S"):
            raise ConfigError(f"layer kind must be M or S, got {kind!r}")
        self.norm1 = LayerNorm(dim, dtype=dtype)
        if kind == "M":
            self.mixer = SsmMixer(dim, rng, d_state=d_state, dtype=dtype)
        else:
            self.mixer = SelfAttentionMixer(dim, heads, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, mlp_ratio, rng, dtype=dtype)
        self.kind = kind

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.mixer(self.norm1(x)))
        return ops.add(x, self.mlp(self.norm2(x)))


class HybridStage(Module):
    def __init__(self, dim: int, depth: int, heads: int, mlp_ratio: float,
                 rng: np.random.Generator, d_state: int = 16,
                 dtype=np.float32):
        self.pattern = hybrid_pattern(depth)
        self.layers = [HybridLayer(dim, kind, heads, mlp_ratio, rng,
                                   d_state=d_state, dtype=dtype)
                       for kind in self.pattern]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class ResidualConvBlock(Module):
    """Plain residual CNN unit: conv-BN-GELU, conv-BN, plus input."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.conv1 = Conv2d(dim, dim, 3, rng, stride=1, padding=1,
                            dtype=dtype)
        self.bn1 = BatchNorm2d(dim, dtype=dtype)
        self.conv2 = Conv2d(dim, dim, 3, rng, stride=1, padding=1,
                            dtype=dtype)
        self.bn2 = BatchNorm2d(dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.gelu(self.bn1(self.conv1(x)))
        return ops.add(self.bn2(self.conv2(y)), x)


class HybridToyNet(Module):
    """Desk-scale hybrid: CNN stages at high resolution, scan/attention
    stages on tokens, then pooled classification.
    """

    def __init__(self, config, seed: int = 0, dtype=np.float32,
                 d_state: int = 16):
        config.validate()
        rng = np.random.default_rng(seed)
        C = config.base_dim
        if C % 2:
            raise ConfigError(f"hybrid base_dim must be even, got {C}")
        d1, d2, d3, d4 = config.depths
        self.stem1 = Conv2d(3, C, 3, rng, stride=2, padding=1, dtype=dtype)
        self.stem2 = Conv2d(C, C, 3, rng, stride=2, padding=1, dtype=dtype)
        self.stage1 = [ResidualConvBlock(C, rng, dtype=dtype)
                       for _ in range(d1)]
        self.down1 = Conv2d(C, 2 * C, 3, rng, stride=2, padding=1,
                            dtype=dtype)
        self.bn1 = BatchNorm2d(2 * C, dtype=dtype)
        self.stage2 = [ResidualConvBlock(2 * C, rng, dtype=dtype)
                       for _ in range(d2)]
        self.stage3 = HybridStage(2 * C, d3, config.heads[2], config.mlp_ratio,
                                  rng, d_state=d_state, dtype=dtype)
        self.down2 = Conv2d(2 * C, 4 * C, 3, rng, stride=2, padding=1,
                            dtype=dtype)
        self.bn2 = BatchNorm2d(4 * C, dtype=dtype)
        self.stage4 = HybridStage(4 * C, d4, config.heads[3], config.mlp_ratio,
                                  rng, d_state=d_state, dtype=dtype)
        self.norm = LayerNorm(4 * C, dtype=dtype)
        self.head = Linear(4 * C, config.num_classes, rng, dtype=dtype)
        self.config = config
        self.dtype = np.dtype(dtype)

    @staticmethod
    def _to_tokens(x: Tensor) -> tuple[Tensor, tuple[int, int, int, int]]:
        B, C, H, W = x.shape
        return ops.reshape(ops.permute(x, (0, 2, 3, 1)), (B, H * W, C)), \
            (B, C, H, W)

    @staticmethod
    def _to_map(t: Tensor, shape) -> Tensor:
        B, C, H, W = shape
        return ops.permute(ops.reshape(t, (B, H, W, C)), (0, 3, 1, 2))

    def __call__(self, x: Tensor) -> Tensor:
        y = self.stem2(ops.gelu(self.stem1(x)))
        for block in self.stage1:
            y = block(y)
        y = self.bn1(self.down1(y))
        for block in self.stage2:
            y = block(y)
        tokens, shape = self._to_tokens(y)
        tokens = self.stage3(tokens)
        y = self._to_map(tokens, shape)
        y = self.bn2(self.down2(y))
        tokens, _ = self._to_tokens(y)
        tokens = self.stage4(tokens)
        tokens = self.norm(tokens)
        return self.head(ops.mean(tokens, axis=1))


def build_hybrid(config, seed: int = 0, dtype=np.float32) -> HybridToyNet:
    return HybridToyNet(config, seed=seed, dtype=dtype)
