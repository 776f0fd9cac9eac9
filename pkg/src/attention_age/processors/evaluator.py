"""
Evaluation of a Phase II checkpoint on one split.

The report carries the MAE, localization metrics for every region kind with
truth boxes, distribution diagnostics for expectation heads, and the
mean-predictor baseline. With ``shuffle_labels`` a second regressor is
trained on ages permuted across images as a null control.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..core.checkpoint import Checkpoint
from ..core.config import ConfigManager, stage_sections
from ..core.errors import CheckpointMismatchError
from ..core.seeding import derive_seed
from .attention import RegionKind
from .metrics import EvalReport, LocalizationRow, SamplePrediction, distribution_diagnostics, localization_table, mae
from .regions import LocalizationRecord
from .synth import SampleRecord, permute_ages
from .trainer import predict, stack_regions, train_phase2

logger = logging.getLogger(__name__)


def check_checkpoint(checkpoint: Checkpoint, config: ConfigManager, phase: str = "phase2") -> None:
    if checkpoint.phase != phase:
        raise CheckpointMismatchError(f"expected a {phase} checkpoint, got {checkpoint.phase}")
    expected = config.config_hash(*stage_sections(phase))
    if checkpoint.config_hash != expected:
        raise CheckpointMismatchError(
            f"{phase} checkpoint was trained with a different configuration; rerun train-phase2 with --force"
        )


def localization_rows(
    records: Sequence[SampleRecord],
    localization: Sequence[LocalizationRecord],
) -> List[LocalizationRow]:
    """Localization metrics for the images in ``records`` that have truth boxes."""
    by_id = {record.id: record for record in records}
    preds: Dict[str, list] = {}
    truths: Dict[str, list] = {}
    taus: Dict[str, float] = {}
    for found in localization:
        record = by_id.get(found.image_id)
        if record is None:
            continue
        truth = record.box(found.kind)
        if truth is None:
            continue
        preds.setdefault(found.kind.value, []).append(found.box)
        truths.setdefault(found.kind.value, []).append(truth)
        taus[found.kind.value] = found.tau
    order = [kind.value for kind in RegionKind]
    rows = localization_table(preds, truths, taus)
    return sorted(rows, key=lambda row: order.index(row.kind))


def mean_predictor_mae(train_ages: Sequence[int], truths: Sequence[int]) -> float:
    """MAE of always answering the mean training age."""
    if len(train_ages) == 0:
        raise ValueError("mean predictor needs training ages")
    guess = float(np.mean(train_ages))
    return mae([guess] * len(truths), truths)


def shuffled_label_mae(
    config: ConfigManager,
    train_records: Sequence[SampleRecord],
    val_records: Sequence[SampleRecord],
    records: Sequence[SampleRecord],
    crops: Mapping[str, Mapping[str, np.ndarray]],
    *,
    seed: Optional[int] = None,
) -> float:
    """Test MAE of a regressor trained on ages shuffled across images."""
    settings = config.phase2_settings()
    seed = config.seed if seed is None else seed
    train = stack_regions(permute_ages(train_records, derive_seed(seed, "train")), crops, settings.regions, settings.crop_size)
    val = None
    if val_records:
        val = stack_regions(permute_ages(val_records, derive_seed(seed, "val")), crops, settings.regions, settings.crop_size)
    logger.info("Training the shuffled-label control on %d images", len(train))
    control = train_phase2(config, train, val, seed=derive_seed(seed, "shuffled"))
    test = stack_regions(records, crops, settings.regions, settings.crop_size)
    pred, _ = predict(control.network, test, config.num_ages)
    return mae(pred, test.ages)


def score(network, data, num_ages: int, sigma: float, metric: str = "mae") -> float:
    """One number for a trained regressor on ``data``: ``mae`` or mean ``kl`` to the Gaussian targets."""
    pred, dists = predict(network, data, num_ages)
    if metric == "mae":
        return mae(pred, data.ages)
    if metric == "kl":
        if dists is None:
            raise ValueError("metric 'kl' needs an expectation head")
        return distribution_diagnostics(dists, data.ages, sigma).mean_kl
    raise ValueError(f"unknown regression metric '{metric}'")


def evaluate(
    checkpoint: Checkpoint,
    records: Sequence[SampleRecord],
    crops: Mapping[str, Mapping[str, np.ndarray]],
    config: ConfigManager,
    *,
    split_name: str = "test",
    localization: Optional[Sequence[LocalizationRecord]] = None,
    train_records: Optional[Sequence[SampleRecord]] = None,
    val_records: Optional[Sequence[SampleRecord]] = None,
    shuffle_labels: bool = False,
) -> EvalReport:
    """Score ``checkpoint`` on the images of one split.

    Args:
        checkpoint: A ``phase2`` checkpoint matching ``config``.
        records: Samples of the split being evaluated.
        crops: ``crops[code][image_id]`` grids as written by localization.
        config: The experiment configuration.
        split_name: Name recorded in the report.
        localization: Boxes from ``localization.csv`` for localization metrics.
        train_records: Training samples, for the mean-predictor baseline and
            the shuffled-label control.
        val_records: Validation samples used by the shuffled-label control.
        shuffle_labels: Also train and score the shuffled-label control.

    Returns:
        The populated :class:`EvalReport`.
    """
    if not records:
        raise ValueError(f"split '{split_name}' is empty")
    check_checkpoint(checkpoint, config)
    settings = config.phase2_settings()
    data = stack_regions(records, crops, settings.regions, settings.crop_size)
    pred, dists = predict(checkpoint.network, data, config.num_ages)
    samples = [SamplePrediction(i, int(a), float(p)) for i, a, p in zip(data.ids, data.ages, pred)]

    diagnostics = None
    if dists is not None:
        diagnostics = distribution_diagnostics(dists, data.ages, config.loss_config().sigma).summary()

    notes: Dict[str, object] = {
        "regions": list(settings.regions),
        "head": settings.head,
        "use_gender": settings.use_gender,
        "best_epoch": checkpoint.extra.get("best_epoch"),
    }
    rows: List[LocalizationRow] = []
    if localization is not None:
        rows = localization_rows(records, localization)
        ids = set(data.ids)
        notes["fallback_boxes"] = sum(1 for r in localization if r.fallback and r.image_id in ids)
    if train_records:
        notes["mean_predictor_mae"] = mean_predictor_mae([r.age for r in train_records], data.ages)
    if shuffle_labels:
        if not train_records:
            raise ValueError("the shuffled-label control needs the training split")
        notes["shuffled_label_mae"] = shuffled_label_mae(config, train_records, val_records or [], records, crops)

    report = EvalReport(
        split=split_name,
        samples=samples,
        localization=rows,
        diagnostics=diagnostics,
        distributions=dists,
        notes=notes,
    )
    logger.info("Evaluated %d %s images: MAE %.3f months", len(samples), split_name, report.mae)
    return report


__all__ = [
    "check_checkpoint",
    "localization_rows",
    "mean_predictor_mae",
    "shuffled_label_mae",
    "score",
    "evaluate",
]
