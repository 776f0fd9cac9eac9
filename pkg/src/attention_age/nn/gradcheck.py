"""Finite-difference verification of analytic gradients.

Everything runs in float64. Parameters whose perturbation flips a ReLU
mask or a max-pool winner sit on a kink where the central difference is
meaningless; they are counted as ``kink_skipped`` instead of compared.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .network import Network

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

# Below the usual 1e-3 so fewer perturbations cross a ReLU or max-pool kink;
# float64 keeps the rounding error of the quotient near 1e-11.
DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-4
MAX_CHECKED_PARAMETERS = 100_000


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + step
        plus = float(fn(x))
        flat_x[i] = original - step
        minus = float(fn(x))
        flat_x[i] = original
        flat_g[i] = (plus - minus) / (2.0 * step)
    return grad


@dataclass
class GradCheckReport:
    """Worst-case relative error overall and per layer."""

    max_rel_error: float
    per_layer: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    kink_skipped: int = 0
    tolerance: float = 1e-4
    refused: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.refused is None and self.max_rel_error <= self.tolerance

    def summary(self) -> str:
        if self.refused is not None:
            return f"gradient check refused: {self.refused}"
        lines = [f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:g})"]
        for layer, err in self.per_layer.items():
            lines.append(f"  {layer}: {err:.3e}")
        lines.append(f"  checked={self.checked} kink_skipped={self.kink_skipped}")
        return "\n".join(lines)


def _same_signature(a, b) -> bool:
    for left, right in zip(a, b):
        if left is None and right is None:
            continue
        if left is None or right is None or not np.array_equal(left, right):
            return False
    return True


def grad_check(
    net: Network,
    loss_fn: LossFn,
    sample,
    tolerance: float = 1e-4,
    *,
    covariate=None,
    at: str = "output",
    step: float = DEFAULT_STEP,
    floor: float = DEFAULT_FLOOR,
) -> GradCheckReport:
    """Compare back-propagated gradients with central finite differences.

    ``loss_fn`` receives the network output (or the pre-softmax logits when
    ``at="logits"``) as a float64 array and returns ``(loss, d loss / d input)``.
    """
    total = net.num_parameters()
    if total >= MAX_CHECKED_PARAMETERS:
        reason = f"{total} parameters are too many to enumerate (limit {MAX_CHECKED_PARAMETERS})"
        logger.warning("Gradient check refused: %s", reason)
        return GradCheckReport(max_rel_error=float("inf"), tolerance=tolerance, refused=reason)

    net64 = net.astype(np.float64)
    x = np.asarray(sample, dtype=np.float64)

    def evaluate() -> Tuple[float, np.ndarray, object]:
        output, record, _ = net64.run(x, covariate)
        target = record.logits if at == "logits" else output
        loss, grad = loss_fn(target)
        return float(loss), np.asarray(grad, dtype=np.float64), record

    _, grad_out, base_record = evaluate()
    target_shape = base_record.logits.shape if at == "logits" else base_record.output.shape
    analytic = net64.backward(grad_out.reshape(target_shape), at=at, cache=base_record)
    base_signature = base_record.kink_signature(net64.spec)

    per_layer: Dict[str, float] = {}
    checked = 0
    skipped = 0
    for name, value in net64.params.items():
        index = Network.layer_of(name)
        key = f"{index}:{net64.spec.layers[index].kind}"
        worst = per_layer.get(key, 0.0)
        flat = value.reshape(-1)
        flat_grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus, _, plus_record = evaluate()
            flat[i] = original - step
            minus, _, minus_record = evaluate()
            flat[i] = original
            if not (
                _same_signature(base_signature, plus_record.kink_signature(net64.spec))
                and _same_signature(base_signature, minus_record.kink_signature(net64.spec))
            ):
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * step)
            err = float(relative_error(flat_grad[i], numeric, floor))
            worst = max(worst, err)
            checked += 1
        per_layer[key] = worst

    report = GradCheckReport(
        max_rel_error=max(per_layer.values(), default=0.0),
        per_layer=per_layer,
        checked=checked,
        kink_skipped=skipped,
        tolerance=tolerance,
    )
    logger.debug("Gradient check:\n%s", report.summary())
    return report


__all__ = ["grad_check", "GradCheckReport", "numeric_gradient", "relative_error"]
