"""Mini-batch SGD with classical momentum, per-epoch exponential learning
rate decay, and L2 regularization on weights (biases excluded).

Update rule: v <- mu*v - lr*(g + l2*w); w <- w + v.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from apac.nn_core import Param


@dataclass(frozen=True)
class OptimConfig:
    initial_lr: float
    decay_per_epoch: float = 1.0
    momentum: float = 0.0
    l2_factor: float = 0.0
    batch_size: int = 100

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.decay_per_epoch <= 1:
            raise ValueError("decay_per_epoch must be in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.l2_factor < 0:
            raise ValueError("l2_factor must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class OptimState:
    velocity: list[np.ndarray]
    epoch: int = 0
    current_lr: float = field(default=0.0)

    @classmethod
    def for_params(cls, params: list[Param], cfg: OptimConfig) -> "OptimState":
        return cls(velocity=[np.zeros_like(p.value) for p in params],
                   epoch=0, current_lr=cfg.initial_lr)


def lr_at_epoch(cfg: OptimConfig, e: int) -> float:
    if e < 0:
        raise ValueError("epoch index must be non-negative")
    return cfg.initial_lr * cfg.decay_per_epoch ** e


def l2_gradient(param: np.ndarray, l2_factor: float) -> np.ndarray:
    """Gradient of the penalty (l2_factor/2)*||w||^2."""
    return l2_factor * param


def sgd_momentum_step(params: list[Param], grads: list[np.ndarray],
                      state: OptimState, cfg: OptimConfig) -> None:
    """One in-place update of all parameters. ``grads`` are batch means."""
    if len(grads) != len(params):
        raise ValueError(f"{len(grads)} gradients for {len(params)} parameters")
    lr = state.current_lr
    for p, g, v in zip(params, grads, state.velocity):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.value.shape} ({p.name})")
        eff = g + l2_gradient(p.value, cfg.l2_factor) if (cfg.l2_factor and p.decay) else g
        v *= cfg.momentum
        v -= (lr * eff).astype(v.dtype)
        p.value += v
