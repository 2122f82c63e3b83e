"""Adam optimizer and cosine learning-rate schedule for tape parameters."""

from __future__ import annotations

import math
from typing import Dict, Sequence

import numpy as np

from .tape import GradError, Tensor


class AdamState:
    """Per-parameter first/second moment accumulators and a shared step count."""

    def __init__(self, params: Sequence[Tensor],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {p.uid: np.zeros_like(p.data) for p in params}
        self.v = {p.uid: np.zeros_like(p.data) for p in params}


def adam_step(params: Sequence[Tensor], grads: Dict[Tensor, Tensor],
              state: AdamState, lr: float) -> None:
    """One in-place Adam update: θ ← θ − lr · m̂ / (√v̂ + ε).

    Aborts with the parameter's name if its update would introduce NaN/Inf.
    """
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p in params:
        g = grads[p].data
        with np.errstate(invalid="ignore", over="ignore"):
            m = state.m[p.uid] = b1 * state.m[p.uid] + (1.0 - b1) * g
            v = state.v[p.uid] = b2 * state.v[p.uid] + (1.0 - b2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
            new_data = p.data - update
        if not np.all(np.isfinite(new_data)):
            raise GradError(
                f"non-finite update for parameter {p.name or p.uid!r} at step {t}")
        p.data = new_data


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max (step 0) to lr_min (step total_steps)."""
    if total_steps <= 0:
        return lr_min
    t = min(max(step, 0), total_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total_steps))
