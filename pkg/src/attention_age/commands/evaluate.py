"""
evaluate command implementation.
Scores the Phase II checkpoint on one split and writes
``reports/<split>/`` (report.json, per_sample.csv, distributions.csv and a
distribution plot for expectation heads).
"""

import logging
from typing import Any, Dict, Optional

from ..core.command_context import ExperimentContext
from ..core.command_utils import SPLITS, load_records, load_stage_checkpoint, split_records
from ..core.paths import LOCALIZATION_CSV, REPORTS_DIR
from ..processors.evaluator import evaluate
from ..processors.plotter import plot_distributions
from ..processors.regions import load_crops, read_localization

logger = logging.getLogger(__name__)


def run(
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    *,
    split: str = "test",
    shuffle_labels: bool = False,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    force: bool = False,
) -> Dict[str, Any]:
    """Evaluate ``checkpoints/phase2.ckpt`` on ``split``.

    Returns:
        The report dict plus the paths written.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {', '.join(SPLITS)}, got '{split}'")
    with ExperimentContext(config_path, out, seed=seed, threads=threads, force=force) as ctx:
        config = ctx.config_manager
        checkpoint = load_stage_checkpoint(ctx, "phase2")
        parts = split_records(config, load_records(ctx))
        records = parts[split]
        if not records:
            raise ValueError(f"split '{split}' is empty")

        needed = list(records)
        if shuffle_labels:
            needed += parts["train"] + parts["val"]
        crops = load_crops(ctx.root, config.phase2_settings().regions, [r.id for r in needed])
        localization_file = ctx.path(LOCALIZATION_CSV)
        localization = read_localization(localization_file) if localization_file.exists() else None

        report = evaluate(
            checkpoint,
            records,
            crops,
            config,
            split_name=split,
            localization=localization,
            train_records=parts["train"],
            val_records=parts["val"],
            shuffle_labels=shuffle_labels,
        )
        directory = ctx.path(REPORTS_DIR, split)
        paths = report.write(directory)
        if report.distributions is not None:
            paths["plot"] = plot_distributions(
                report.distributions,
                [s.age for s in report.samples],
                config.loss_config().sigma,
                directory / "distributions.svg",
                ids=[s.id for s in report.samples],
            )
        return {**report.to_dict(), "paths": {key: str(value) for key, value in paths.items()}}
