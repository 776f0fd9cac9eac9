"""
gen-data command implementation.
Renders the synthetic dataset into ``<out>/data`` together with a manifest
holding the generation settings and oracle MAEs.
"""

import logging
from typing import Any, Dict, Optional

from ..core.command_context import ExperimentContext
from ..processors.dataset_io import read_manifest, store
from ..processors.synth import generate, oracle_maes

logger = logging.getLogger(__name__)

STAGE = "gen-data"


def run(
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    *,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    force: bool = False,
    n: Optional[int] = None,
) -> Dict[str, Any]:
    """Generate the dataset for an experiment.

    Args:
        config_path: Experiment YAML (``None``/``"default"`` for the bundled defaults)
        out: Experiment root (defaults under ``ATTENTION_AGE_DATA_DIR``)
        seed: Overrides ``seed``
        threads: Overrides ``threads`` (rendering workers)
        force: Regenerate even if the stage marker matches
        n: Overrides ``data.generate.n``

    Returns:
        Summary dict with the sample count, dataset path and oracle MAEs.
    """
    overrides = {"data": {"generate": {"n": n}}} if n is not None else None
    with ExperimentContext(config_path, out, seed=seed, threads=threads, overrides=overrides, force=force) as ctx:
        config = ctx.config_manager
        if not ctx.generates_data:
            manifest = read_manifest(ctx.dataset_dir)
            logger.info("data.path is set; nothing to generate for %s", ctx.dataset_dir)
            return {"path": str(ctx.dataset_dir), "count": manifest.get("count"), "skipped": True}
        if ctx.stage_done(STAGE):
            logger.info("Dataset in %s is up to date", ctx.dataset_dir)
            return {**ctx.read_marker(STAGE)["summary"], "skipped": True}

        spec = config.gen_spec()
        records = generate(spec, workers=config.threads)
        oracle = oracle_maes(records, spec)
        store(records, ctx.dataset_dir, {"gen_spec": spec.to_dict(), "oracle_mae": oracle})
        summary = {"path": str(ctx.dataset_dir), "count": len(records), "oracle_mae": oracle}
        ctx.mark_done(STAGE, summary)
        return {**summary, "skipped": False}
