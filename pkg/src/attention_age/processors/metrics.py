"""
Evaluation metrics and report containers.

- Age error: :func:`mae`.
- Localization: :func:`iou`, :func:`miou`, :func:`ap50` (strict ``IoU > 0.5``),
  :func:`localization_table`.
- Learned distributions: :func:`distribution_diagnostics`.
- Parameter sweeps: :func:`sweep` / :class:`SweepTable`.
- :class:`EvalReport` with its JSON and CSV forms.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .attention import RegionBox
from .ldl import entropy, expectation, gaussian_target_matrix

logger = logging.getLogger(__name__)

BoxLike = Union[RegionBox, Sequence[float]]

MAXIMIZED_METRICS = {"miou", "ap50"}


# ---------------------------------------------------------------------------
# Age error
# ---------------------------------------------------------------------------

def mae(preds: Sequence[float], truths: Sequence[float]) -> float:
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("mae needs at least one prediction")
    if p.size != t.size:
        raise ValueError(f"{p.size} predictions for {t.size} truths")
    return float(np.mean(np.abs(p - t)))


# ---------------------------------------------------------------------------
# Localization
# ---------------------------------------------------------------------------

def _coords(box: BoxLike) -> Tuple[float, float, float, float]:
    if isinstance(box, RegionBox):
        return box.as_tuple()
    x0, y0, x1, y1 = box
    return float(x0), float(y0), float(x1), float(y1)


def iou(a: BoxLike, b: BoxLike) -> float:
    """Area of overlap over area of union of two ``(x0, y0, x1, y1)`` boxes."""
    ax0, ay0, ax1, ay1 = _coords(a)
    bx0, by0, bx1, by1 = _coords(b)
    overlap = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - overlap
    if union <= 0:
        return 0.0
    return overlap / union


def _pairwise(preds: Sequence[BoxLike], truths: Sequence[BoxLike]) -> np.ndarray:
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predicted boxes for {len(truths)} truth boxes")
    if not preds:
        raise ValueError("need at least one box pair")
    return np.array([iou(p, t) for p, t in zip(preds, truths)], dtype=np.float64)


def miou(preds: Sequence[BoxLike], truths: Sequence[BoxLike]) -> float:
    return float(_pairwise(preds, truths).mean())


def ap50(preds: Sequence[BoxLike], truths: Sequence[BoxLike]) -> float:
    """Fraction of pairs with ``IoU > 0.5``; exactly 0.5 counts as a miss."""
    return float(np.mean(_pairwise(preds, truths) > 0.5))


@dataclass(frozen=True)
class LocalizationRow:
    kind: str
    miou: float
    ap50: float
    tau: float
    count: int


def localization_table(
    preds: Mapping[str, Sequence[BoxLike]],
    truths: Mapping[str, Sequence[BoxLike]],
    taus: Mapping[str, float],
) -> List[LocalizationRow]:
    """One row per region kind present in both ``preds`` and ``truths``."""
    rows = []
    for kind, predicted in preds.items():
        if kind not in truths or not predicted:
            continue
        rows.append(
            LocalizationRow(
                kind=kind,
                miou=miou(predicted, truths[kind]),
                ap50=ap50(predicted, truths[kind]),
                tau=float(taus.get(kind, float("nan"))),
                count=len(predicted),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass
class DistributionDiagnostics:
    mean_kl: float
    mean_entropy: float
    mean_gap: float
    kl: np.ndarray = field(repr=False)
    entropy: np.ndarray = field(repr=False)
    gap: np.ndarray = field(repr=False)

    def summary(self) -> Dict[str, float]:
        return {"mean_kl": self.mean_kl, "mean_entropy": self.mean_entropy, "mean_gap": self.mean_gap}


def distribution_diagnostics(distributions, truths: Sequence[int], sigma: float) -> DistributionDiagnostics:
    """KL to the Gaussian target, entropy, and ``|argmax - expectation|`` per sample."""
    probs = np.atleast_2d(np.asarray(distributions, dtype=np.float64))
    labels = np.asarray(truths, dtype=np.int64).reshape(-1)
    if probs.shape[0] != labels.size:
        raise ValueError(f"{probs.shape[0]} distributions for {labels.size} truths")
    targets = gaussian_target_matrix(sigma, probs.shape[1])[labels - 1]
    positive = targets > 0
    log_ratio = np.log(np.where(positive, targets, 1.0)) - np.log(np.maximum(probs, np.finfo(np.float64).tiny))
    kl = np.maximum(np.where(positive, targets * log_ratio, 0.0).sum(axis=1), 0.0)
    ent = entropy(probs)
    gap = np.abs(probs.argmax(axis=1) + 1 - np.asarray(expectation(probs)))
    return DistributionDiagnostics(
        mean_kl=float(kl.mean()),
        mean_entropy=float(ent.mean()),
        mean_gap=float(gap.mean()),
        kl=kl,
        entropy=ent,
        gap=gap,
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepTable:
    """Metric per grid point; ``values[i]`` is the mean over ``per_seed[i]``."""

    param: str
    metric: str
    grid: List[Any]
    values: List[float]
    per_seed: List[List[float]] = field(default_factory=list)
    maximize: bool = False

    @property
    def best_index(self) -> int:
        """Best grid point; ties go to the smallest parameter value."""
        def key(i: int):
            value = -self.values[i] if self.maximize else self.values[i]
            return (value, _sort_key(self.grid[i]))

        return min(range(len(self.grid)), key=key)

    @property
    def best(self) -> Tuple[Any, float]:
        i = self.best_index
        return self.grid[i], self.values[i]

    def rows(self) -> List[List[Any]]:
        best = self.best_index
        out = []
        for i, (param, value) in enumerate(zip(self.grid, self.values)):
            seeds = self.per_seed[i] if i < len(self.per_seed) else []
            spread = float(np.std(seeds)) if len(seeds) > 1 else 0.0
            out.append([param, value, spread, len(seeds) or 1, int(i == best)])
        return out

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow([self.param, self.metric, "std", "seeds", "best"])
            for row in self.rows():
                writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", row[3], row[4]])
        return path

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["best_index"] = self.best_index
        return data


def _sort_key(value: Any):
    try:
        return (0, float(value), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(value))


def sweep(
    param: str,
    grid: Sequence[Any],
    values: Sequence[Union[float, Sequence[float]]],
    metric: str = "mae",
    maximize: Optional[bool] = None,
) -> SweepTable:
    """Tabulate a metric over a parameter grid (one value or one list per seed)."""
    if not grid:
        raise ValueError("sweep grid must not be empty")
    if len(values) != len(grid):
        raise ValueError(f"{len(values)} metric values for a grid of {len(grid)}")
    per_seed = [list(np.atleast_1d(np.asarray(v, dtype=np.float64)).tolist()) for v in values]
    means = [float(np.mean(v)) for v in per_seed]
    return SweepTable(
        param=param,
        metric=metric,
        grid=list(grid),
        values=means,
        per_seed=per_seed,
        maximize=(metric in MAXIMIZED_METRICS) if maximize is None else maximize,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplePrediction:
    id: str
    age: int
    pred: float

    @property
    def abs_error(self) -> float:
        return abs(self.pred - self.age)


@dataclass
class EvalReport:
    split: str
    samples: List[SamplePrediction]
    localization: List[LocalizationRow] = field(default_factory=list)
    diagnostics: Optional[Dict[str, float]] = None
    distributions: Optional[np.ndarray] = field(default=None, repr=False)
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def mae(self) -> float:
        return mae([s.pred for s in self.samples], [s.age for s in self.samples])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "split": self.split,
            "count": len(self.samples),
            "mae": self.mae,
            "localization": [asdict(row) for row in self.localization],
            "diagnostics": self.diagnostics,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, directory: Path) -> Dict[str, Path]:
        """Write ``report.json``, ``per_sample.csv`` and, if present, ``distributions.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {"report": directory / "report.json", "per_sample": directory / "per_sample.csv"}
        paths["report"].write_text(self.to_json() + "\n", encoding="utf-8")
        with open(paths["per_sample"], "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["id", "age", "pred", "abs_error"])
            for s in self.samples:
                writer.writerow([s.id, s.age, repr(float(s.pred)), repr(float(s.abs_error))])
        if self.distributions is not None:
            paths["distributions"] = directory / "distributions.csv"
            with open(paths["distributions"], "w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(["id", "age", "k", "prob"])
                for s, probs in zip(self.samples, self.distributions):
                    for k, prob in enumerate(probs, start=1):
                        writer.writerow([s.id, s.age, k, f"{prob:.8g}"])
        return paths


def read_per_sample(path: Path) -> List[SamplePrediction]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return [
            SamplePrediction(row["id"], int(row["age"]), float(row["pred"]))
            for row in csv.DictReader(handle)
        ]


__all__ = [
    "mae",
    "iou",
    "miou",
    "ap50",
    "LocalizationRow",
    "localization_table",
    "DistributionDiagnostics",
    "distribution_diagnostics",
    "SweepTable",
    "sweep",
    "SamplePrediction",
    "EvalReport",
    "read_per_sample",
]
