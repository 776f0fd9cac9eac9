"""
SVG figures for sweeps and learned age distributions.

Figures are rendered with the Agg backend; a fixed ``svg.hashsalt`` and an
empty ``Date`` entry keep repeated renders byte-identical.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ldl import ages, gaussian_target
from .metrics import SweepTable

logger = logging.getLogger(__name__)

_SVG_METADATA = {"Date": None}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams.update(
        {
            "font.family": "DejaVu Sans",
            "axes.unicode_minus": False,
            "svg.hashsalt": "attention-age",
            "svg.fonttype": "none",
        }
    )
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    logger.debug("Wrote %s", path)
    return path


def plot_sweep(table: SweepTable, path: Path, title: Optional[str] = None) -> Path:
    """Metric against grid position, error bars over seeds, best point marked."""
    plt = _pyplot()
    positions = np.arange(len(table.grid))
    spread = [float(np.std(s)) if len(s) > 1 else 0.0 for s in table.per_seed] or [0.0] * len(table.grid)

    fig, ax = plt.subplots(figsize=(6, 3.5), constrained_layout=True)
    ax.errorbar(positions, table.values, yerr=spread, marker="o", capsize=3)
    best = table.best_index
    ax.plot([positions[best]], [table.values[best]], marker="*", markersize=14, linestyle="none", label="best")
    ax.set_xticks(positions)
    ax.set_xticklabels([str(value) for value in table.grid], rotation=30)
    ax.set_xlabel(table.param)
    ax.set_ylabel(table.metric)
    ax.set_title(title or f"{table.metric} vs {table.param}")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)


def plot_distributions(
    distributions: np.ndarray,
    truths: Sequence[int],
    sigma: float,
    path: Path,
    ids: Optional[Sequence[str]] = None,
    limit: int = 4,
) -> Path:
    """Learned age distributions of the first ``limit`` samples with their Gaussian targets."""
    plt = _pyplot()
    probs = np.atleast_2d(np.asarray(distributions, dtype=np.float64))
    count = min(limit, probs.shape[0])
    if count == 0:
        raise ValueError("no distributions to plot")
    grid = ages(probs.shape[1])

    fig, axes = plt.subplots(1, count, figsize=(3.2 * count, 3.0), constrained_layout=True, squeeze=False)
    for i, ax in enumerate(axes[0]):
        target = gaussian_target(int(truths[i]), sigma, probs.shape[1]).probs
        ax.plot(grid, probs[i], label="predicted")
        ax.plot(grid, target, linestyle="--", label="target")
        ax.axvline(int(truths[i]), color="grey", linewidth=0.8)
        name = ids[i] if ids is not None else f"#{i}"
        ax.set_title(f"{name} (age {int(truths[i])})", fontsize=9)
        ax.set_xlabel("age (months)")
        ax.grid(True, alpha=0.3)
    axes[0][0].set_ylabel("probability")
    axes[0][-1].legend(loc="best", fontsize=8)
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)


__all__ = ["plot_sweep", "plot_distributions"]
