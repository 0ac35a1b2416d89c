"""Toy-scale training: synthetic two-class data and a plain SGD loop."""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import NumericError
from .mamba import build_hybrid
from .model import ModelConfig, build
from .nn import Module, sgd_step
from .tensor import Tape, Tensor


def synthetic_two_class(seed: int = 0, n: int = 256, size: int = 32,
                        dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Seeded dataset: class 0 images are smooth low-frequency waves,
    class 1 images are high-frequency gratings; both carry mild noise.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    images = np.empty((n, 3, size, size), dtype=np.float64)
    labels = rng.integers(0, 2, size=n)
    for i in range(n):
        freq = (rng.uniform(0.5, 1.0) if labels[i] == 0
                else rng.uniform(6.0, 9.0))
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq / size
                      * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        for c in range(3):
            images[i, c] = wave + 0.05 * rng.standard_normal((size, size))
    return images.astype(dtype), labels.astype(np.int64)


def toy_backbone_config(num_classes: int = 2) -> ModelConfig:
    return ModelConfig(name="toy", base_dim=8, depths=(2, 2, 2, 2),
                       heads=(2, 2, 2, 2), mlp_ratio=2.0, img_size=32,
                       num_classes=num_classes)


def toy_hybrid_config(num_classes: int = 2) -> ModelConfig:
    return ModelConfig(name="toy-hybrid", base_dim=8, depths=(2, 2, 2, 2),
                       heads=(2, 2, 8, 16), mlp_ratio=2.0, img_size=32,
                       num_classes=num_classes, mixer="mamba_hybrid")


def build_toy(config: ModelConfig, seed: int = 0, dtype=np.float64) -> Module:
    if config.mixer == "mamba_hybrid":
        return build_hybrid(config, seed=seed, dtype=dtype)
    return build(config, seed=seed, dtype=dtype)


def evaluate(model: Module, images: np.ndarray, labels: np.ndarray,
             batch: int = 64) -> tuple[float, float]:
    """(mean cross-entropy, accuracy) without recording gradients."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(labels), batch):
        xb = Tensor(images[start:start + batch])
        yb = labels[start:start + batch]
        logits = model(xb)
        total_loss += ops.cross_entropy(logits, yb).item() * len(yb)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return total_loss / len(labels), correct / len(labels)


def train(model: Module, images: np.ndarray, labels: np.ndarray,
          steps: int, lr: float, batch: int = 64, seed: int = 0,
          log=None) -> list[float]:
    """Minibatch SGD on cross-entropy; returns the per-step loss curve."""
    rng = np.random.default_rng(seed)
    params = model.parameters()
    n = len(labels)
    losses = []
    for step in range(steps):
        idx = rng.choice(n, size=min(batch, n), replace=False)
        xb = Tensor(images[idx])
        yb = labels[idx]
        with Tape() as tape:
            loss = ops.cross_entropy(model(xb), yb)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"training diverged at step {step}: "
                                   f"loss={value}")
            tape.backward(loss)
        sgd_step(params, lr)
        losses.append(value)
        if log is not None and (step % 10 == 0 or step == steps - 1):
            log(step, value)
    return losses
