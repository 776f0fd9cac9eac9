"""Shared utilities for command implementations.

Provides the dataset, split, checkpoint and table helpers used across
multiple commands.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Optional, Sequence

from .checkpoint import Checkpoint
from .command_context import ExperimentContext
from .config import ConfigManager, PHASE1_MODES
from .errors import DatasetFormatError
from .paths import CHECKPOINTS_DIR

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def load_records(ctx: ExperimentContext):
    """Load the experiment's dataset, generated or external.

    Raises:
        DatasetFormatError: When the dataset directory has not been written yet.
    """
    from ..processors.dataset_io import METADATA_CSV, load

    directory = ctx.dataset_dir
    if not (directory / METADATA_CSV).exists():
        hint = "run gen-data first" if ctx.generates_data else "check data.path"
        raise DatasetFormatError(f"no dataset found; {hint}", path=str(directory))
    return load(directory, num_ages=ctx.config_manager.num_ages)


def split_records(config: ConfigManager, records: Sequence[Any]) -> Dict[str, List[Any]]:
    """Train/val/test record lists for the configured split sizes and seed."""
    from ..processors.synth import split

    parts = split(
        len(records),
        config.seed,
        int(config.get("data.split.n_val")),
        int(config.get("data.split.n_test")),
    )
    return {name: [records[i] for i in parts.indices(name)] for name in SPLITS}


def checkpoint_path(ctx: ExperimentContext, stage: str):
    return ctx.path(CHECKPOINTS_DIR, f"{stage}.ckpt", ensure_parent=True)


def load_stage_checkpoint(ctx: ExperimentContext, stage: str) -> Checkpoint:
    """Load ``checkpoints/<stage>.ckpt``, refusing one from another configuration."""
    return Checkpoint.load(checkpoint_path(ctx, stage), phase=stage, config_hash=ctx.stage_hash(stage))


def load_phase1_networks(ctx: ExperimentContext, required: Sequence[str] = ("region1",)) -> Dict[str, Any]:
    """Phase I networks keyed by mode; optional modes without a checkpoint are left out."""
    networks = {}
    for mode in PHASE1_MODES:
        stage = f"phase1_{mode}"
        if mode not in required and not checkpoint_path(ctx, stage).exists():
            logger.warning("No %s checkpoint; skipping %s localization", stage, mode)
            continue
        networks[mode] = load_stage_checkpoint(ctx, stage).network
    return networks


def localization_policies(config: ConfigManager) -> Dict[str, Any]:
    from ..processors.attention import LocalizationPolicy

    policies = {}
    for mode in PHASE1_MODES:
        settings = config.phase1_settings(mode)
        policies[mode] = LocalizationPolicy(
            pool=settings.pool,
            input_scale=settings.input_scale,
            tau=settings.tau,
            normalize=settings.normalize_maps,
        )
    return policies


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]], *, floats: str = "{:.3f}") -> str:
    """Render rows as an aligned plain-text table."""

    def cell(value: Any) -> str:
        if isinstance(value, float):
            return floats.format(value)
        return "-" if value is None else str(value)

    body = [[cell(v) for v in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in body:
        for i, value in enumerate(row):
            widths[i] = max(widths[i], len(value))
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def summary_table(summary: Dict[str, Any], *, skip: Optional[Sequence[str]] = None) -> str:
    """Two-column key/value table for flat command summaries."""
    skip = set(skip or ())
    rows = [(key, value) for key, value in summary.items() if key not in skip and not isinstance(value, (dict, list))]
    return format_table(["key", "value"], rows)


__all__ = [
    "SPLITS",
    "load_records",
    "split_records",
    "checkpoint_path",
    "load_stage_checkpoint",
    "load_phase1_networks",
    "localization_policies",
    "format_table",
    "summary_table",
]
