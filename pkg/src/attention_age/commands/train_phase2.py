"""
train-phase2 command implementation.
Stacks the cached crops of the configured regions and trains the regressor,
keeping the parameters with the best validation MAE.
"""

import logging
from typing import Any, Dict, Optional

from ..core.command_context import ExperimentContext
from ..core.command_utils import checkpoint_path, load_records, split_records
from ..processors.regions import load_crops
from ..processors.trainer import stack_regions, train_phase2

logger = logging.getLogger(__name__)

STAGE = "phase2"


def run(
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    *,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    force: bool = False,
) -> Dict[str, Any]:
    """Train Phase II on the train split, selecting on the val split."""
    with ExperimentContext(config_path, out, seed=seed, threads=threads, force=force) as ctx:
        config = ctx.config_manager
        path = checkpoint_path(ctx, STAGE)
        if ctx.stage_done(STAGE) and path.exists():
            logger.info("Phase II is up to date")
            return {**ctx.read_marker(STAGE)["summary"], "skipped": True}

        settings = config.phase2_settings()
        parts = split_records(config, load_records(ctx))
        ids = [record.id for name in ("train", "val") for record in parts[name]]
        crops = load_crops(ctx.root, settings.regions, ids)
        train = stack_regions(parts["train"], crops, settings.regions, settings.crop_size)
        val = stack_regions(parts["val"], crops, settings.regions, settings.crop_size) if parts["val"] else None

        checkpoint = train_phase2(config, train, val)
        checkpoint.save(path)
        summary = {
            "regions": "+".join(settings.regions),
            "head": settings.head,
            "epochs": len(checkpoint.history),
            "final_loss": checkpoint.history[-1]["loss"],
            "best_epoch": checkpoint.extra["best_epoch"] + 1 if checkpoint.extra["best_epoch"] >= 0 else None,
            "best_val_mae": checkpoint.extra["best_val_mae"],
            "checkpoint": str(path),
        }
        ctx.mark_done(STAGE, summary)
        return {**summary, "skipped": False}
