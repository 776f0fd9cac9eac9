"""
sweep command implementation.
Tabulates one metric over a parameter grid and writes
``sweeps/<name>.csv``, ``.svg`` and ``.json``.

* ``lambda``, ``regions``, ``head``: retrain Phase II per grid value and seed
  on the cached crops, then score the chosen split (``mae`` or ``kl``).
* ``tau``: re-threshold the heat maps of one Phase I classifier and score
  the boxes against the truth (``miou`` or ``ap50``).
"""

import json
import logging
from typing import Any, Dict, List, Optional, Sequence

from ..core.command_context import ExperimentContext
from ..core.command_utils import (
    SPLITS,
    load_records,
    load_stage_checkpoint,
    localization_policies,
    split_records,
)
from ..core.config import HEADS, REGION_CODES, ConfigManager
from ..core.paths import SWEEPS_DIR
from ..core.seeding import derive_seed
from ..processors.attention import RegionKind
from ..processors.evaluator import score
from ..processors.metrics import sweep as tabulate
from ..processors.plotter import plot_sweep
from ..processors.regions import MODE_FOR_KIND, load_crops, localization_at_taus, localize_boxes
from ..processors.trainer import stack_regions, train_phase2

logger = logging.getLogger(__name__)

PARAMS = ("lambda", "tau", "regions", "head")
REGRESSION_METRICS = ("mae", "kl")
LOCALIZATION_METRICS = ("miou", "ap50")


def _expand(items: List[str]) -> List[str]:
    """Expand ``a,b,...,z`` into the arithmetic progression it abbreviates."""
    if "..." not in items:
        return items
    at = items.index("...")
    if at < 2 or at != len(items) - 2:
        raise ValueError("'...' needs two values before it and one after")
    first, second, last = float(items[at - 2]), float(items[at - 1]), float(items[at + 1])
    step = second - first
    if step <= 0 or last < second:
        raise ValueError("'...' only expands increasing progressions")
    count = int(round((last - first) / step))
    values = [first + i * step for i in range(count + 1)]
    return items[:at - 2] + [f"{v:g}" for v in values]


def parse_grid(param: str, text: str) -> List[Any]:
    """Parse a comma-separated grid for ``param``.

    ``regions`` entries join codes with ``+`` (``H+R1``); numeric grids accept
    ``10,20,...,100``.
    """
    if param not in PARAMS:
        raise ValueError(f"param must be one of {', '.join(PARAMS)}, got '{param}'")
    items = [item.strip() for item in str(text).split(",") if item.strip()]
    if not items:
        raise ValueError("grid must not be empty")
    if param in ("lambda", "tau"):
        values = [float(item) for item in _expand(items)]
        if param == "lambda" and any(v < 0 for v in values):
            raise ValueError("lambda values must be >= 0")
        return values
    if param == "regions":
        grid = []
        for item in items:
            codes = [code.strip() for code in item.split("+")]
            unknown = [code for code in codes if code not in REGION_CODES]
            if unknown:
                raise ValueError(f"unknown region code(s) {unknown}; use {', '.join(REGION_CODES)}")
            grid.append("+".join(codes))
        return grid
    for item in items:
        if item not in HEADS:
            raise ValueError(f"head must be one of {', '.join(HEADS)}, got '{item}'")
    return items


def variant_config(config: ConfigManager, param: str, value: Any) -> ConfigManager:
    if param == "lambda":
        overrides = {"labels": {"lambda": float(value)}}
    elif param == "regions":
        overrides = {"phase2": {"regions": str(value).split("+")}}
    elif param == "head":
        overrides = {"phase2": {"head": str(value)}}
    else:
        raise ValueError(f"'{param}' is not a Phase II parameter")
    variant = config.with_overrides(overrides)
    variant.require_valid()
    return variant


def _regression_values(
    config: ConfigManager,
    root,
    parts: Dict[str, list],
    param: str,
    grid: Sequence[Any],
    seeds: int,
    metric: str,
    split: str,
) -> List[List[float]]:
    values = []
    for value in grid:
        variant = variant_config(config, param, value)
        settings = variant.phase2_settings()
        if metric == "kl" and settings.head != "expectation":
            raise ValueError(f"metric 'kl' is undefined for the {settings.head} head")
        ids = [r.id for name in ("train", "val", split) for r in parts[name]]
        crops = load_crops(root, settings.regions, ids)
        train = stack_regions(parts["train"], crops, settings.regions, settings.crop_size)
        val = stack_regions(parts["val"], crops, settings.regions, settings.crop_size) if parts["val"] else None
        target = stack_regions(parts[split], crops, settings.regions, settings.crop_size)
        per_seed = []
        for k in range(seeds):
            checkpoint = train_phase2(variant, train, val, seed=derive_seed(config.seed, "sweep", k))
            per_seed.append(score(checkpoint.network, target, variant.num_ages, variant.loss_config().sigma, metric))
        logger.info("%s=%s: %s %s", param, value, metric, ", ".join(f"{v:.4f}" for v in per_seed))
        values.append(per_seed)
    return values


def _tau_values(ctx: ExperimentContext, parts, grid, kind: RegionKind, metric: str, split: str) -> List[float]:
    config = ctx.config_manager
    policies = localization_policies(config)
    mode = MODE_FOR_KIND[kind]
    network = load_stage_checkpoint(ctx, f"phase1_{mode}").network
    records = parts[split]
    erase_boxes = None
    if mode == "erased":
        region1 = load_stage_checkpoint(ctx, "phase1_region1").network
        erase_boxes, skipped = localize_boxes(
            region1, records, RegionKind.REGION1, policies["region1"], workers=config.threads
        )
        missing = {entry.image_id for entry in skipped}
        records = [record for record in records if record.id not in missing]
    result = localization_at_taus(
        network, records, kind, policies[mode], grid,
        erase_boxes=erase_boxes, seed=config.seed, erase=config.erase_policy(), workers=config.threads,
    )
    return result[metric]


def run(
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    *,
    param: str,
    grid: str,
    seeds: int = 1,
    metric: Optional[str] = None,
    split: str = "test",
    kind: str = "region1",
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    force: bool = False,
) -> Dict[str, Any]:
    """Run a parameter sweep.

    Args:
        param: One of ``lambda``, ``tau``, ``regions``, ``head``
        grid: Comma-separated grid values
        seeds: Training seeds per grid value (Phase II parameters only)
        metric: ``mae``/``kl`` for Phase II parameters, ``miou``/``ap50`` for ``tau``
        split: Split the metric is computed on
        kind: Region kind localized in a ``tau`` sweep

    Returns:
        The sweep table as a dict plus the written paths.
    """
    values_grid = parse_grid(param, grid)
    if split not in SPLITS:
        raise ValueError(f"split must be one of {', '.join(SPLITS)}, got '{split}'")
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    if param == "tau":
        metric = metric or "ap50"
        allowed = LOCALIZATION_METRICS
    else:
        metric = metric or "mae"
        allowed = REGRESSION_METRICS
    if metric not in allowed:
        raise ValueError(f"metric for a {param} sweep must be one of {', '.join(allowed)}, got '{metric}'")
    region_kind = RegionKind.parse(kind)

    name = f"tau_{region_kind.code}" if param == "tau" else param
    stage = f"sweep_{name}"
    request = {"grid": values_grid, "seeds": seeds, "metric": metric, "split": split}

    with ExperimentContext(config_path, out, seed=seed, threads=threads, force=force) as ctx:
        config = ctx.config_manager
        directory = ctx.path(SWEEPS_DIR)
        marker = ctx.read_marker(stage)
        if ctx.stage_done(stage) and marker["summary"].get("request") == request and (directory / f"{name}.json").exists():
            logger.info("Sweep %s is up to date", name)
            table = json.loads((directory / f"{name}.json").read_text(encoding="utf-8"))
            return {**table, "skipped": True}

        parts = split_records(config, load_records(ctx))
        if not parts[split]:
            raise ValueError(f"split '{split}' is empty")
        if param == "tau":
            values: List[Any] = _tau_values(ctx, parts, values_grid, region_kind, metric, split)
        else:
            values = _regression_values(config, ctx.root, parts, param, values_grid, seeds, metric, split)

        table = tabulate(param, values_grid, values, metric)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "csv": table.write_csv(directory / f"{name}.csv"),
            "svg": plot_sweep(table, directory / f"{name}.svg"),
        }
        body = table.to_dict()
        (directory / f"{name}.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        best_value, best_metric = table.best
        ctx.mark_done(stage, {"request": request, "best": best_value, "best_metric": best_metric})
        return {**body, "paths": {key: str(value) for key, value in paths.items()}, "skipped": False}
