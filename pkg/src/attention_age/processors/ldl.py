"""
Label-distribution mathematics for age estimation.

Ages are integer months ``1..T``. Vectors indexed by age are stored
0-based, so entry ``i`` belongs to age ``i + 1`` (see :func:`ages`).

- Soft classification labels for the attention classifiers.
- Gaussian targets and the KL regularizer ``D_KL(G || p)``.
- Expectation regression: ``y_hat = sum_k k * p_k`` with an MAE loss.
- The joint loss ``|y - y_hat| + lambda * D_KL(G_y || p)`` and its gradient
  with respect to the logits.

Losses accept one logit vector ``(T,)`` or a batch ``(N, T)``; batched
losses are means and their gradients are divided by ``N``. Everything is
computed in float64.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import NonFiniteError

logger = logging.getLogger(__name__)

DEFAULT_NUM_AGES = 240
DEFAULT_SOFT_WIDTH = 50
DEFAULT_SIGMA = 15.0

Labels = Union[int, Sequence[int], np.ndarray]


def ages(num_ages: int) -> np.ndarray:
    """Return the age grid ``[1, 2, ..., T]`` as float64."""
    return np.arange(1, num_ages + 1, dtype=np.float64)


def _check_age(age: int, num_ages: int, name: str = "age") -> None:
    if not 1 <= age <= num_ages:
        raise ValueError(f"{name} must be in [1, {num_ages}], got {age}")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgeDistribution:
    """Probability vector over ages ``1..T``."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if probs.size == 0:
            raise ValueError("age distribution must not be empty")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("age distribution must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"age distribution sums to {probs.sum():.8f}, expected 1")
        object.__setattr__(self, "probs", probs)

    @property
    def num_ages(self) -> int:
        return int(self.probs.size)


@dataclass(frozen=True)
class SoftLabel:
    """Triangular label around ``center`` with half-width ``width``."""

    values: np.ndarray
    center: int
    width: int

    def normalized(self) -> np.ndarray:
        return self.values / self.values.sum()


@dataclass(frozen=True)
class GaussianTarget:
    """Gaussian over ages, renormalized to sum to one."""

    probs: np.ndarray
    mean: int
    stddev: float
    density: np.ndarray


@dataclass(frozen=True)
class LossConfig:
    """Trade-off ``lam`` between expectation MAE and KL, plus target settings."""

    lam: float = 0.5
    sigma: float = DEFAULT_SIGMA
    num_ages: int = DEFAULT_NUM_AGES

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.num_ages < 1:
            raise ValueError(f"num_ages must be >= 1, got {self.num_ages}")


# ---------------------------------------------------------------------------
# Softmax helpers
# ---------------------------------------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy in nats along the last axis, with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=-1)


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------

def soft_label(t: int, l: int = DEFAULT_SOFT_WIDTH, num_ages: int = DEFAULT_NUM_AGES) -> SoftLabel:
    """``values[i] = max(0, 1 - |i - t| / l)`` for ages ``i = 1..T``."""
    _check_age(t, num_ages, "label age")
    if l < 1:
        raise ValueError(f"soft label width must be >= 1, got {l}")
    values = np.maximum(0.0, 1.0 - np.abs(ages(num_ages) - t) / l)
    return SoftLabel(values=values, center=int(t), width=int(l))


def soft_label_matrix(l: int = DEFAULT_SOFT_WIDTH, num_ages: int = DEFAULT_NUM_AGES) -> np.ndarray:
    """Row ``t - 1`` holds the normalized soft label for age ``t``."""
    grid = ages(num_ages)
    table = np.maximum(0.0, 1.0 - np.abs(grid[:, None] - grid[None, :]) / l)
    return table / table.sum(axis=1, keepdims=True)


def gaussian_density(k: np.ndarray, y: float, sigma: float) -> np.ndarray:
    """Sampled normal density ``exp(-(k - y)^2 / 2 sigma^2) / (sqrt(2 pi) sigma)``."""
    k = np.asarray(k, dtype=np.float64)
    return np.exp(-((k - y) ** 2) / (2.0 * sigma * sigma)) / (math.sqrt(2.0 * math.pi) * sigma)


def gaussian_target(y: int, sigma: float = DEFAULT_SIGMA, num_ages: int = DEFAULT_NUM_AGES) -> GaussianTarget:
    """Gaussian centred on age ``y``, sampled on ``1..T`` and renormalized."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    _check_age(y, num_ages)
    density = gaussian_density(ages(num_ages), y, sigma)
    total = density.sum()
    if total <= 0:
        # Density underflowed everywhere except possibly y itself.
        probs = np.zeros(num_ages)
        probs[y - 1] = 1.0
    else:
        probs = density / total
    return GaussianTarget(probs=probs, mean=int(y), stddev=float(sigma), density=density)


def gaussian_target_matrix(sigma: float = DEFAULT_SIGMA, num_ages: int = DEFAULT_NUM_AGES) -> np.ndarray:
    """Row ``y - 1`` holds the renormalized Gaussian target for age ``y``."""
    return np.stack([gaussian_target(y, sigma, num_ages).probs for y in range(1, num_ages + 1)])


# ---------------------------------------------------------------------------
# Distribution statistics
# ---------------------------------------------------------------------------

def expectation(p) -> Union[float, np.ndarray]:
    """Expected age ``sum_k k * p_k`` (per row for a batch)."""
    probs = p.probs if isinstance(p, AgeDistribution) else np.asarray(p, dtype=np.float64)
    value = probs @ ages(probs.shape[-1])
    return float(value) if np.ndim(value) == 0 else value


def kl_regularizer(p, G) -> float:
    """``D_KL(G || p) = sum_k G_k ln(G_k / p_k)`` with ``0 ln 0 = 0``."""
    probs = p.probs if isinstance(p, AgeDistribution) else np.asarray(p, dtype=np.float64)
    target = G.probs if isinstance(G, GaussianTarget) else np.asarray(G, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValueError(f"distribution shapes differ: {probs.shape} vs {target.shape}")
    if np.any(probs <= 0):
        raise ValueError("predicted distribution has zero entries; KL(G || p) is undefined")
    positive = target > 0
    value = float(np.sum(target[positive] * (np.log(target[positive]) - np.log(probs[positive]))))
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _as_batch(z, y: Labels) -> Tuple[np.ndarray, np.ndarray, bool]:
    logits = np.asarray(z, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
    labels = np.asarray(y, dtype=np.int64).reshape(-1)
    if labels.size != logits.shape[0]:
        raise ValueError(f"{labels.size} labels for {logits.shape[0]} logit rows")
    return logits, labels, single


def _check_finite(logits: np.ndarray, sample_ids: Optional[Sequence[str]]) -> None:
    finite = np.all(np.isfinite(logits), axis=1)
    if not np.all(finite):
        bad = int(np.argmin(finite))
        sample = sample_ids[bad] if sample_ids is not None else str(bad)
        raise NonFiniteError("non-finite logits", sample_id=sample)


def _finish(loss_rows: np.ndarray, grad: np.ndarray, single: bool) -> Tuple[float, np.ndarray]:
    n = loss_rows.shape[0]
    grad = grad / n
    return float(loss_rows.mean()), (grad[0] if single else grad)


def joint_loss(
    z,
    y: Labels,
    g: LossConfig,
    *,
    sample_ids: Optional[Sequence[str]] = None,
    targets: Optional[np.ndarray] = None,
) -> Tuple[float, np.ndarray]:
    """Expectation-regression MAE plus ``lam`` times ``D_KL(G_y || softmax(z))``.

    Returns ``(loss, dL/dz)``. The MAE subgradient is 0 at ``y == y_hat``.
    ``targets`` may carry a precomputed :func:`gaussian_target_matrix`.
    """
    logits, labels, single = _as_batch(z, y)
    if logits.shape[1] != g.num_ages:
        raise ValueError(f"logits have {logits.shape[1]} entries, expected {g.num_ages}")
    _check_finite(logits, sample_ids)
    for label in np.unique(labels):
        _check_age(int(label), g.num_ages)

    log_p = log_softmax(logits)
    p = np.exp(log_p)
    grid = ages(g.num_ages)
    y_hat = p @ grid
    diff = y_hat - labels
    mae_rows = np.abs(diff)
    sign = np.sign(diff)
    grad = sign[:, None] * p * (grid[None, :] - y_hat[:, None])
    loss_rows = mae_rows

    if g.lam > 0:
        table = targets if targets is not None else gaussian_target_matrix(g.sigma, g.num_ages)
        G = table[labels - 1]
        positive = G > 0
        kl_terms = np.where(positive, G * (np.log(np.where(positive, G, 1.0)) - log_p), 0.0)
        kl_rows = np.maximum(kl_terms.sum(axis=1), 0.0)
        loss_rows = loss_rows + g.lam * kl_rows
        grad = grad + g.lam * (p - G)

    return _finish(loss_rows, grad, single)


def phase1_loss(z, Y) -> Tuple[float, np.ndarray]:
    """Cross-entropy between the normalized soft label ``Y`` and ``softmax(z)``."""
    logits = np.asarray(z, dtype=np.float64)
    values = Y.values if isinstance(Y, SoftLabel) else np.asarray(Y, dtype=np.float64)
    single = logits.ndim == 1
    if single:
        logits = logits[None, :]
        values = values[None, :]
    if values.shape != logits.shape:
        raise ValueError(f"soft label shape {values.shape} does not match logits {logits.shape}")
    _check_finite(logits, None)
    totals = values.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("soft label is all zeros")
    target = values / totals
    log_p = log_softmax(logits)
    loss_rows = -(target * log_p).sum(axis=1)
    grad = np.exp(log_p) - target
    return _finish(loss_rows, grad, single)


def regression_ages(outputs, num_ages: int = DEFAULT_NUM_AGES) -> np.ndarray:
    """Map the raw output of an l1 head onto the age scale.

    ``age = (T + 1) / 2 + (T - 1) / 2 * out``, so an output of 0 sits at the
    middle of the range and +-1 at its ends.
    """
    out = np.asarray(outputs, dtype=np.float64).reshape(-1)
    return (num_ages + 1) / 2.0 + (num_ages - 1) / 2.0 * out


def l1_loss(outputs, y: Labels, num_ages: int = DEFAULT_NUM_AGES) -> Tuple[float, np.ndarray]:
    """Plain regression baseline ``|y - age(out)|`` with gradient w.r.t. ``out``."""
    out = np.asarray(outputs, dtype=np.float64)
    shape = out.shape
    labels = np.asarray(y, dtype=np.float64).reshape(-1)
    pred = regression_ages(out, num_ages)
    if pred.size != labels.size:
        raise ValueError(f"{labels.size} labels for {pred.size} outputs")
    diff = pred - labels
    grad = np.sign(diff) * (num_ages - 1) / 2.0 / labels.size
    return float(np.abs(diff).mean()), grad.reshape(shape)


__all__ = [
    "AgeDistribution",
    "SoftLabel",
    "GaussianTarget",
    "LossConfig",
    "ages",
    "softmax",
    "log_softmax",
    "entropy",
    "soft_label",
    "soft_label_matrix",
    "gaussian_density",
    "gaussian_target",
    "gaussian_target_matrix",
    "expectation",
    "kl_regularizer",
    "joint_loss",
    "phase1_loss",
    "regression_ages",
    "l1_loss",
]
