"""Finite-difference verification of every exported block.

Used by `gcvk gradcheck` and by the acceptance suite.  All checks run in
float64 on small random inputs (token counts <= 64) and probe the full
chain from input to a scalar sum of the block output; the end-to-end
check differences a seeded subsample of image coordinates through the
whole toy classifier.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .attention import GlobalWindowAttention, LocalWindowAttention
from .blocks import FusedMBConv, GlobalTokenGenerator, SqueezeExcite
from .gradcheck import gradcheck
from .mamba import SsmMixer
from .model import build
from .tensor import Tensor
from .train import toy_backbone_config

F64 = np.float64


def _rand(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype=F64)


def _check_fused_mbconv(h: float) -> float:
    rng = np.random.default_rng(1)
    block = FusedMBConv(4, rng, dtype=F64)
    x = _rand(rng, (1, 4, 4, 4))
    return gradcheck(lambda t: ops.tensor_sum(ops.gelu(block(t))), x, h)


def _check_se(h: float) -> float:
    rng = np.random.default_rng(2)
    block = SqueezeExcite(4, rng, ratio=2, dtype=F64)
    for p in block.parameters():
        p.data = rng.standard_normal(p.data.shape)
    x = _rand(rng, (2, 4, 3, 3))
    return gradcheck(lambda t: ops.tensor_sum(ops.mul(block(t), block(t))),
                     x, h)


def _check_local_attention(h: float) -> float:
    rng = np.random.default_rng(3)
    attn = LocalWindowAttention(8, 2, 2, rng, dtype=F64)
    x = _rand(rng, (2, 4, 8))
    return gradcheck(lambda t: ops.tensor_sum(ops.gelu(attn(t))), x, h)


def _check_global_attention(h: float) -> float:
    rng = np.random.default_rng(4)
    attn = GlobalWindowAttention(8, 2, 2, rng, dtype=F64)
    tokens = _rand(rng, (4, 4, 8))
    q_map = _rand(rng, (1, 8, 2, 2))
    err_tokens = gradcheck(
        lambda t: ops.tensor_sum(ops.gelu(attn(t, q_map))), tokens, h)
    err_query = gradcheck(
        lambda q: ops.tensor_sum(ops.gelu(attn(tokens, q))), q_map, h)
    return max(err_tokens, err_query)


def _check_global_token_gen(h: float) -> float:
    rng = np.random.default_rng(5)
    gtg = GlobalTokenGenerator(4, 8, 2, rng, dtype=F64)
    x = _rand(rng, (1, 4, 8, 8))
    return gradcheck(lambda t: ops.tensor_sum(ops.gelu(gtg(t))), x, h)


def _check_mixer(h: float) -> float:
    rng = np.random.default_rng(6)
    mixer = SsmMixer(8, rng, d_state=4, dtype=F64)
    x = _rand(rng, (1, 8, 8))
    return gradcheck(lambda t: ops.tensor_sum(ops.gelu(mixer(t))), x, h)


def _check_selective_scan(h: float) -> float:
    """Probe a flat vector unpacked into all six scan inputs."""
    B, C, T, M = 1, 2, 6, 3
    sizes = [B * C * T, B * C * T, C * M, B * M * T, B * M * T, C]
    rng = np.random.default_rng(7)
    v = Tensor(rng.standard_normal(sum(sizes)) * 0.5, dtype=F64)

    def f(t: Tensor) -> Tensor:
        parts = []
        start = 0
        for s in sizes:
            parts.append(ops.narrow(t, 0, start, s))
            start += s
        x = ops.reshape(parts[0], (B, C, T))
        delta = ops.softplus(ops.reshape(parts[1], (B, C, T)))
        A = ops.neg(ops.exp(ops.reshape(parts[2], (C, M))))
        Bm = ops.reshape(parts[3], (B, M, T))
        Cm = ops.reshape(parts[4], (B, M, T))
        D = parts[5]
        y = ops.selective_scan(x, delta, A, Bm, Cm, D)
        return ops.tensor_sum(ops.mul(y, y))

    return gradcheck(f, v, h)


def _check_end_to_end(h: float) -> float:
    model = build(toy_backbone_config(), seed=0, dtype=F64)
    rng = np.random.default_rng(8)
    x = _rand(rng, (1, 3, 32, 32))
    labels = np.array([1])
    return gradcheck(lambda t: ops.cross_entropy(model(t), labels), x, h,
                     sample=48, seed=0)


BLOCK_CHECKS: dict[str, Callable[[float], float]] = {
    "fused_mbconv": _check_fused_mbconv,
    "se_block": _check_se,
    "local_attention": _check_local_attention,
    "global_attention": _check_global_attention,
    "global_token_gen": _check_global_token_gen,
    "mamba_mixer": _check_mixer,
    "selective_scan": _check_selective_scan,
    "end_to_end": _check_end_to_end,
}


def run_checks(blocks=None, h: float = 1e-5,
               inject_wrong_gradient: str | None = None
               ) -> dict[str, float]:
    """Run named checks (all by default).  `inject_wrong_gradient`
    deliberately corrupts one block's reported error so the failure
    path is testable."""
    names = list(BLOCK_CHECKS) if blocks is None else list(blocks)
    results = {}
    for name in names:
        err = BLOCK_CHECKS[name](h)
        if inject_wrong_gradient == name:
            err = max(err, 1.0)
        results[name] = err
    return results
