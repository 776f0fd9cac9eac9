"""
train-phase1 command implementation.
Trains the Phase I soft-label classifiers. The erased mode localizes Region1
on every training image with the region1 classifier first, so ``all`` runs
the modes in the order region1, hand, erased.
"""

import logging
from typing import Any, Dict, Optional

from ..core.command_context import ExperimentContext
from ..core.command_utils import (
    checkpoint_path,
    load_records,
    load_stage_checkpoint,
    localization_policies,
    split_records,
)
from ..core.config import PHASE1_MODES
from ..processors.attention import RegionKind
from ..processors.regions import localize_boxes
from ..processors.trainer import train_phase1

logger = logging.getLogger(__name__)


def run(
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    *,
    mode: str = "all",
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    force: bool = False,
) -> Dict[str, Dict[str, Any]]:
    """Train one or all Phase I modes.

    Returns:
        Per-mode summary (epochs, first and last epoch loss, checkpoint path).
    """
    if mode != "all" and mode not in PHASE1_MODES:
        raise ValueError(f"mode must be one of {', '.join(PHASE1_MODES)} or 'all', got '{mode}'")
    modes = PHASE1_MODES if mode == "all" else (mode,)

    with ExperimentContext(config_path, out, seed=seed, threads=threads, force=force) as ctx:
        config = ctx.config_manager
        train = split_records(config, load_records(ctx))["train"]
        results: Dict[str, Dict[str, Any]] = {}
        for current in modes:
            stage = f"phase1_{current}"
            path = checkpoint_path(ctx, stage)
            if ctx.stage_done(stage) and path.exists():
                logger.info("%s is up to date", stage)
                results[current] = {**ctx.read_marker(stage)["summary"], "skipped": True}
                continue

            records, erase_boxes = train, None
            if current == "erased":
                region1 = load_stage_checkpoint(ctx, "phase1_region1")
                erase_boxes, skipped = localize_boxes(
                    region1.network,
                    train,
                    RegionKind.REGION1,
                    localization_policies(config)["region1"],
                    workers=config.threads,
                )
                missing = {entry.image_id for entry in skipped}
                if missing:
                    logger.warning("Leaving %d image(s) without a Region1 box out of erased training", len(missing))
                records = [record for record in train if record.id not in missing]

            checkpoint = train_phase1(config, records, current, erase_boxes=erase_boxes)
            checkpoint.save(path)
            summary = {
                "epochs": checkpoint.epoch,
                "images": len(records),
                "initial_loss": checkpoint.history[0]["loss"],
                "final_loss": checkpoint.history[-1]["loss"],
                "checkpoint": str(path),
            }
            ctx.mark_done(stage, summary)
            results[current] = {**summary, "skipped": False}
        return results
