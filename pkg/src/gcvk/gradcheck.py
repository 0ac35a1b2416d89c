"""Finite-difference verification of the recorded gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import Tape, Tensor


def gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
              sample: int | None = None, seed: int = 0) -> float:
    """Max relative error between tape and central-difference gradients.

    f must map x to a scalar; x must be float64.  The error metric is
    max over elements of |analytic - numeric| / max(1, |analytic|).
    When `sample` is given, only that many (seeded) randomly chosen
    coordinates are differenced, which bounds the 2-forward-passes-per-
    element cost on large inputs.
    """
    if x.dtype != np.float64:
        raise ConfigError("gradcheck requires a float64 input")
    if not 1e-6 <= h <= 1e-4:
        raise ConfigError(f"gradcheck step h={h} outside [1e-6, 1e-4]")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
        if not isinstance(out, Tensor) or out.size != 1:
            raise UsageError("gradcheck objective must produce a scalar")
        tape.backward(out)
    analytic = (probe.grad if probe.grad is not None
                else np.zeros_like(probe.data))

    flat = probe.data.reshape(-1)
    if sample is None or sample >= flat.size:
        coords = np.arange(flat.size)
    else:
        coords = np.random.default_rng(seed).choice(
            flat.size, size=sample, replace=False)
    numeric = np.zeros(coords.size, dtype=np.float64)
    for pos, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(probe.data.copy())).item()
        flat[i] = orig - h
        fm = f(Tensor(probe.data.copy())).item()
        flat[i] = orig
        numeric[pos] = (fp - fm) / (2.0 * h)

    a = analytic.reshape(-1)[coords]
    rel = np.abs(a - numeric) / np.maximum(1.0, np.abs(a))
    return float(rel.max())
