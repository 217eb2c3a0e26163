"""Loss, Adam and the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, config,
              lr: float | None = None) -> AdamState:
    """
    One bias-corrected Adam update, applied to ``params`` in place.

    ``config`` supplies ``learning_rate``, ``beta1``, ``beta2`` and ``adam_eps``; ``lr``
    overrides the learning rate (used by the decay schedule).
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lr = config.learning_rate if lr is None else lr
    b1, b2, eps = config.beta1, config.beta2, config.adam_eps
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def scheduled_lr(base: float, epoch: int, epochs: int, milestones=(0.6, 0.85), factor=0.5) -> float:
    """Step decay: multiply by ``factor`` once past each fractional milestone."""
    lr = base
    for frac in milestones:
        if epoch >= frac * epochs:
            lr *= factor
    return lr
