"""Adam with bias correction, learning-rate schedule, gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError


class NonFiniteGradientError(RuntimeError):
    """Raised when an update is rejected because a gradient is not finite."""


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, params: list[Tensor]):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place. Rejects non-finite grads."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    state.ensure(params)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeError(f"param {i}: grad shape {g.shape} != param {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in param {i}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class LrSchedule:
    peak_lr: float
    final_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not (self.warmup_steps < self.total_steps):
            raise ValueError("warmup_steps must be below total_steps")
        if not (self.peak_lr >= self.final_lr > 0):
            raise ValueError("need peak_lr >= final_lr > 0")


def schedule_lr(schedule: LrSchedule, step: int) -> float:
    """Linear warmup to peak, then geometric decay hitting final_lr at total_steps."""
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    if step >= schedule.total_steps:
        return schedule.final_lr
    frac = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.peak_lr * (schedule.final_lr / schedule.peak_lr) ** frac


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total
