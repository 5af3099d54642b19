"""AdamW with decoupled weight decay and a half-cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from msgen.errors import NonFiniteGradient, NonFiniteUpdate


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 0.0
    betas: tuple[float, float] = field(default=(0.9, 0.999))
    eps: float = 1e-8
    clip_norm: float = 0.0


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    """Half-cosine decay from ``lr_max`` at step 0 to ``lr_min`` at ``total``."""
    if total <= 0:
        return lr_max
    frac = min(max(step / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))


def adamw_step(
    params: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """In-place ``theta <- theta (1 - lr wd) - lr mhat / (sqrt(vhat) + eps)``."""
    if not np.isfinite(grad).all():
        raise NonFiniteGradient("gradient has non-finite entries")
    b1, b2 = betas
    state.step += 1
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    mhat = state.m / (1.0 - b1 ** state.step)
    vhat = state.v / (1.0 - b2 ** state.step)
    update = params * (1.0 - lr * weight_decay) - lr * mhat / (np.sqrt(vhat) + eps)
    if not np.isfinite(update).all():
        raise NonFiniteUpdate("parameter update is not finite")
    params[...] = update


def clip_grad(grad: np.ndarray, max_norm: float) -> float:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        grad *= max_norm / norm
    return norm
