"""Adam optimizer with a piecewise-constant learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import NonFiniteError

logger = logging.getLogger(__name__)

Schedule = List[Tuple[int, float]]


def normalize_schedule(schedule: Sequence[Sequence[float]]) -> Schedule:
    """Return the schedule as sorted ``(epoch, lr)`` pairs, validating values."""
    if not schedule:
        raise ValueError("learning-rate schedule must not be empty")
    pairs = sorted((int(epoch), float(lr)) for epoch, lr in schedule)
    for epoch, lr in pairs:
        if epoch < 0:
            raise ValueError(f"schedule epoch must be >= 0, got {epoch}")
        if not lr > 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
    return pairs


def lr_at(schedule: Sequence[Sequence[float]], epoch: int) -> float:
    """Learning rate of the last schedule entry starting at or before ``epoch``."""
    pairs = normalize_schedule(schedule)
    current = pairs[0][1]
    for start, lr in pairs:
        if start <= epoch:
            current = lr
        else:
            break
    return current


@dataclass
class OptimizerState:
    """Adam moments, step counter and learning-rate schedule."""

    schedule: Schedule
    lr: float = 0.0
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.schedule = normalize_schedule(self.schedule)
        if self.lr <= 0:
            self.lr = self.schedule[0][1]
        if self.step < 0:
            raise ValueError("step counter must be >= 0")

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray], schedule: Sequence[Sequence[float]]) -> "OptimizerState":
        state = cls(schedule=normalize_schedule(schedule))
        state.m = {name: np.zeros_like(value) for name, value in params.items()}
        state.v = {name: np.zeros_like(value) for name, value in params.items()}
        return state

    def copy(self) -> "OptimizerState":
        """Independent snapshot of the moments, step counter and schedule."""
        return OptimizerState(
            schedule=list(self.schedule),
            lr=self.lr,
            step=self.step,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            m={name: value.copy() for name, value in self.m.items()},
            v={name: value.copy() for name, value in self.v.items()},
        )

    def set_epoch(self, epoch: int) -> float:
        """Move the learning rate to the schedule entry for ``epoch``."""
        new_lr = lr_at(self.schedule, epoch)
        if new_lr != self.lr:
            logger.info("Learning rate %.3g -> %.3g at epoch %d", self.lr, new_lr, epoch)
        self.lr = new_lr
        return new_lr

    def scalars(self) -> Dict[str, object]:
        return {
            "lr": self.lr,
            "step": self.step,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "schedule": [[epoch, lr] for epoch, lr in self.schedule],
        }


def adam_step(
    state: OptimizerState,
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    *,
    batch: Optional[int] = None,
    epoch: Optional[int] = None,
) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """Apply one bias-corrected Adam update in place and return ``(params, state)``."""
    for name, grad in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter '{name}'")
        if grad.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {grad.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}", batch=batch, epoch=epoch)

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype)
    return params, state


__all__ = ["OptimizerState", "adam_step", "lr_at", "normalize_schedule"]
