"""
localize command implementation.
Runs the Phase I classifiers over every image, writes crops for all region
codes, ``localization.csv`` and ``skip_list.csv``, and scores the boxes of
the test split against the truth boxes.
"""

import logging
from dataclasses import asdict
from typing import Any, Dict, Optional

from ..core.command_context import ExperimentContext
from ..core.command_utils import load_phase1_networks, load_records, localization_policies, split_records
from ..processors.evaluator import localization_rows
from ..processors.regions import extract_regions

logger = logging.getLogger(__name__)

STAGE = "localize"


def run(
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    *,
    dump_maps: bool = False,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    force: bool = False,
) -> Dict[str, Any]:
    """Extract regions for the whole dataset.

    Returns:
        Summary with crop counts, skipped localizations and per-kind test
        mIoU/AP50 rows.
    """
    with ExperimentContext(config_path, out, seed=seed, threads=threads, force=force) as ctx:
        config = ctx.config_manager
        if ctx.stage_done(STAGE) and not dump_maps:
            logger.info("Localization is up to date")
            return {**ctx.read_marker(STAGE)["summary"], "skipped": True}

        records = load_records(ctx)
        networks = load_phase1_networks(ctx)
        result = extract_regions(
            networks,
            records,
            localization_policies(config),
            ctx.root,
            crop_size=config.phase2_settings().crop_size,
            seed=config.seed,
            erase=config.erase_policy(),
            dump_maps=dump_maps,
            workers=config.threads,
        )
        test = split_records(config, records)["test"]
        rows = localization_rows(test, result.records)
        summary = {
            "images": len(records),
            "boxes": result.counts(),
            "skipped_images": len(result.skipped),
            "localization": [asdict(row) for row in rows],
        }
        ctx.mark_done(STAGE, summary)
        return {**summary, "skipped": False}
