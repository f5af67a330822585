"""Plain SGD and AdamW with decoupled weight decay.

A non-finite gradient aborts the step with a diagnostic naming the offending
parameter; nothing is mutated in that case, so the caller still holds the
last good weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamSet


class NonFiniteGradientError(RuntimeError):
    """A gradient contained NaN or infinite entries; the run must stop."""


def _check_grads(params: ParamSet, grads: dict[str, np.ndarray]) -> None:
    for p in params:
        g = grads.get(p.name)
        if g is None:
            raise KeyError(f"missing gradient for {p.name}")
        if g.shape != p.value.shape:
            raise ValueError(
                f"gradient shape mismatch for {p.name}: {g.shape} vs {p.value.shape}"
            )
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in {p.name}")


def sgd_step(params: ParamSet, grads: dict[str, np.ndarray], lr: float) -> None:
    _check_grads(params, grads)
    for p in params:
        p.value = p.value - lr * grads[p.name]


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: ParamSet, grads: dict[str, np.ndarray], state: AdamWState,
               lr: float, beta1: float = 0.9, beta2: float = 0.98,
               eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    _check_grads(params, grads)
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in params:
        g = grads[p.name]
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.value = p.value - lr * (update + weight_decay * p.value)


def lr_at(step: int, base_lr: float, schedule: str = "constant",
          warmup_steps: int = 0) -> float:
    """Learning rate for 1-based ``step``.

    ``inverse_sqrt`` ramps linearly over the warmup then decays as
    sqrt(warmup/step), peaking at ``base_lr``.
    """
    if schedule == "constant":
        return base_lr
    if schedule == "inverse_sqrt":
        warmup = max(warmup_steps, 1)
        return base_lr * min(step / warmup, (warmup / step) ** 0.5)
    raise ValueError(f"unknown schedule: {schedule}")
