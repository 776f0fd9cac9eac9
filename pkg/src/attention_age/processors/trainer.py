"""
Training loops for both phases.

Phase I trains a soft-label age classifier per localization mode
(``region1``: full-size input with GMP, ``hand``: downscaled input with GAP,
``erased``: Region1 replaced by noise). Phase II trains the regressor on
stacked region crops with the joint expectation-MAE + KL loss (or the plain
l1 head), keeping the parameters with the best validation MAE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.checkpoint import Checkpoint
from ..core.config import ConfigManager, Phase2Settings, stage_sections
from ..core.errors import NonFiniteError, ShapeMismatchError
from ..core.seeding import derive_seed, rng as seeded_rng
from ..nn.network import Network, classifier_spec, regressor_spec
from ..nn.optim import OptimizerState, adam_step
from .attention import ErasePolicy, RegionBox, resize_image
from .ldl import (
    LossConfig,
    expectation,
    gaussian_target_matrix,
    joint_loss,
    l1_loss,
    phase1_loss,
    regression_ages,
    soft_label_matrix,
    softmax,
)
from .synth import SampleRecord

logger = logging.getLogger(__name__)

PREDICT_BATCH = 64


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def iterate_batches(count: int, batch_size: int, seed: int, *keys) -> Iterator[Tuple[int, np.ndarray]]:
    """Yield ``(batch number, indices)`` over a seeded permutation of ``range(count)``."""
    order = seeded_rng(seed, *keys).permutation(count)
    for number, start in enumerate(range(0, count, batch_size)):
        yield number, order[start:start + batch_size]


def _check_logits(logits: np.ndarray, ids: Sequence[str], epoch: int, batch: int) -> None:
    finite = np.all(np.isfinite(logits), axis=1)
    if not np.all(finite):
        raise NonFiniteError(
            "training diverged: non-finite logits",
            sample_id=ids[int(np.argmin(finite))],
            batch=batch,
            epoch=epoch,
        )


def _check_loss(loss: float, epoch: int, batch: int) -> None:
    if not np.isfinite(loss):
        raise NonFiniteError("training diverged: non-finite loss", batch=batch, epoch=epoch)


def phase1_inputs(
    records: Sequence[SampleRecord],
    input_size: int,
    *,
    erase_boxes: Optional[Mapping[str, RegionBox]] = None,
    seed: int = 0,
    erase: ErasePolicy = ErasePolicy(),
) -> np.ndarray:
    """Stack Phase I inputs ``(N, s, s, 1)``, erasing Region1 when boxes are given."""
    images = []
    for record in records:
        image = record.image
        if erase_boxes is not None:
            box = erase_boxes.get(record.id)
            if box is None:
                raise ValueError(f"erased mode needs a Region1 box for image {record.id}")
            image = erase.apply(image, box, seed, record.id)
        images.append(resize_image(image, input_size))
    return np.stack(images).astype(np.float32)[..., None]


# ---------------------------------------------------------------------------
# Phase I
# ---------------------------------------------------------------------------

def train_phase1(
    config: ConfigManager,
    records: Sequence[SampleRecord],
    mode: str,
    *,
    erase_boxes: Optional[Mapping[str, RegionBox]] = None,
    seed: Optional[int] = None,
) -> Checkpoint:
    """Train the Phase I classifier for ``mode`` on ``records`` (the training split)."""
    settings = config.phase1_settings(mode)
    seed = config.seed if seed is None else seed
    if mode == "erased" and erase_boxes is None:
        raise ValueError("erased mode requires Region1 boxes for every training image")
    if not records:
        raise ValueError("no training records")

    x = phase1_inputs(
        records,
        settings.input_size,
        erase_boxes=erase_boxes if mode == "erased" else None,
        seed=seed,
        erase=config.erase_policy(),
    )
    ages = np.array([record.age for record in records])
    ids = [record.id for record in records]
    targets = soft_label_matrix(settings.soft_label_width, settings.num_ages)[ages - 1]

    spec = classifier_spec(
        settings.input_size,
        settings.num_ages,
        channels=settings.channels,
        kernel=settings.kernel,
        pool=settings.pool,
        downsample=settings.downsample,
        seed=derive_seed(seed, "phase1", mode),
    )
    net = Network(spec)
    optimizer = OptimizerState.for_params(net.params, settings.schedule)
    history: List[Dict[str, float]] = []
    logger.info(
        "Phase I (%s): %d images at %dpx, %d parameters, %d epochs",
        mode, len(records), settings.input_size, net.num_parameters(), settings.epochs,
    )

    for epoch in range(settings.epochs):
        lr = optimizer.set_epoch(epoch)
        total, seen = 0.0, 0
        for batch, idx in iterate_batches(len(records), settings.batch_size, seed, "phase1", mode, epoch):
            _, cache, _ = net.run(x[idx])
            _check_logits(cache.logits, [ids[i] for i in idx], epoch, batch)
            loss, grad = phase1_loss(cache.logits, targets[idx])
            _check_loss(loss, epoch, batch)
            grads = net.backward(grad, at="logits", cache=cache)
            adam_step(optimizer, net.params, grads, batch=batch, epoch=epoch)
            total += loss * len(idx)
            seen += len(idx)
        mean_loss = total / seen
        history.append({"epoch": epoch, "loss": mean_loss, "lr": lr})
        logger.info("Phase I (%s) epoch %d/%d: loss %.4f lr %.3g", mode, epoch + 1, settings.epochs, mean_loss, lr)

    return Checkpoint(
        phase=f"phase1_{mode}",
        network=net,
        config_hash=config.config_hash(*stage_sections(f"phase1_{mode}")),
        epoch=settings.epochs,
        optimizer=optimizer,
        history=history,
        extra={"mode": mode, "input_size": settings.input_size, "seed": seed},
    )


# ---------------------------------------------------------------------------
# Phase II
# ---------------------------------------------------------------------------

@dataclass
class RegionStack:
    """Phase II inputs: crops stacked as channels in region order."""

    ids: List[str]
    x: np.ndarray
    ages: np.ndarray
    genders: np.ndarray
    regions: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices: Sequence[int]) -> "RegionStack":
        idx = np.asarray(indices, dtype=np.int64)
        return RegionStack(
            ids=[self.ids[i] for i in idx],
            x=self.x[idx],
            ages=self.ages[idx],
            genders=self.genders[idx],
            regions=self.regions,
        )

    def with_ages(self, ages: Sequence[int]) -> "RegionStack":
        return RegionStack(self.ids, self.x, np.asarray(ages), self.genders, self.regions)


def stack_regions(
    records: Sequence[SampleRecord],
    crops: Mapping[str, Mapping[str, np.ndarray]],
    regions: Sequence[str],
    crop_size: int,
) -> RegionStack:
    """Stack ``crops[code][id]`` for every record into ``(N, s, s, len(regions))``."""
    channels = []
    for code in regions:
        available = crops.get(code)
        if not available:
            raise ShapeMismatchError(f"no crops for region {code}; run localize first")
        grids = []
        for record in records:
            grid = available.get(record.id)
            if grid is None:
                raise ShapeMismatchError(f"region {code} has no crop for image {record.id}")
            if grid.shape != (crop_size, crop_size):
                raise ShapeMismatchError(
                    f"crop {code}/{record.id} is {grid.shape}, configured crop_size is {crop_size}"
                )
            grids.append(grid)
        channels.append(np.stack(grids))
    x = np.stack(channels, axis=-1).astype(np.float32)
    return RegionStack(
        ids=[record.id for record in records],
        x=x,
        ages=np.array([record.age for record in records]),
        genders=np.array([record.gender for record in records]),
        regions=tuple(regions),
    )


def build_regressor(settings: Phase2Settings, in_channels: int, num_ages: int, seed: int) -> Network:
    spec = regressor_spec(
        settings.crop_size,
        in_channels,
        num_ages,
        channels=settings.channels,
        kernel=settings.kernel,
        hidden_units=settings.hidden_units,
        gender_units=settings.gender_units if settings.use_gender else 0,
        head=settings.head,
        downsample=settings.downsample,
        seed=seed,
    )
    return Network(spec)


def predict(net: Network, data: RegionStack, num_ages: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Predicted ages and, for an expectation head, the age distributions."""
    preds, dists = [], []
    for start in range(0, len(data), PREDICT_BATCH):
        sl = slice(start, start + PREDICT_BATCH)
        cov = data.genders[sl] if net.spec.has_covariate else None
        out, cache, _ = net.run(data.x[sl], cov)
        if net.spec.has_softmax:
            probs = softmax(cache.logits)
            dists.append(probs)
            preds.append(np.asarray(expectation(probs)))
        else:
            preds.append(regression_ages(out, num_ages))
    pred = np.concatenate(preds) if preds else np.zeros(0)
    return pred, (np.concatenate(dists) if dists else None)


def train_phase2(
    config: ConfigManager,
    train: RegionStack,
    val: Optional[RegionStack] = None,
    *,
    seed: Optional[int] = None,
    loss_config: Optional[LossConfig] = None,
) -> Checkpoint:
    """Train the Phase II regressor; the returned network is the best on ``val``."""
    settings = config.phase2_settings()
    seed = config.seed if seed is None else seed
    loss_cfg = loss_config or config.loss_config()
    if len(train) == 0:
        raise ValueError("no training samples for Phase II")
    if train.x.shape[-1] != len(settings.regions):
        raise ShapeMismatchError(
            f"inputs have {train.x.shape[-1]} channels but {len(settings.regions)} regions are configured"
        )
    num_ages = loss_cfg.num_ages

    net = build_regressor(settings, train.x.shape[-1], num_ages, derive_seed(seed, "phase2"))
    optimizer = OptimizerState.for_params(net.params, settings.schedule)
    gaussian_table = gaussian_target_matrix(loss_cfg.sigma, num_ages) if settings.head == "expectation" else None
    history: List[Dict[str, float]] = []
    best_params, best_optimizer, best_mae, best_epoch = None, None, float("inf"), -1
    logger.info(
        "Phase II: regions %s, head %s, lambda %g, %d train / %d val, %d parameters",
        "+".join(settings.regions), settings.head, loss_cfg.lam, len(train),
        len(val) if val is not None else 0, net.num_parameters(),
    )

    for epoch in range(settings.epochs):
        lr = optimizer.set_epoch(epoch)
        total, seen = 0.0, 0
        for batch, idx in iterate_batches(len(train), settings.batch_size, seed, "phase2", epoch):
            cov = train.genders[idx] if net.spec.has_covariate else None
            out, cache, _ = net.run(train.x[idx], cov)
            ids = [train.ids[i] for i in idx]
            if settings.head == "expectation":
                _check_logits(cache.logits, ids, epoch, batch)
                loss, grad = joint_loss(cache.logits, train.ages[idx], loss_cfg, sample_ids=ids, targets=gaussian_table)
                at = "logits"
            else:
                _check_logits(out, ids, epoch, batch)
                loss, grad = l1_loss(out, train.ages[idx], num_ages)
                at = "output"
            _check_loss(loss, epoch, batch)
            grads = net.backward(grad, at=at, cache=cache)
            adam_step(optimizer, net.params, grads, batch=batch, epoch=epoch)
            total += loss * len(idx)
            seen += len(idx)

        record = {"epoch": epoch, "loss": total / seen, "lr": lr}
        if val is not None and len(val):
            pred, _ = predict(net, val, num_ages)
            val_mae = float(np.mean(np.abs(pred - val.ages)))
            record["val_mae"] = val_mae
            if val_mae < best_mae:
                best_mae, best_epoch = val_mae, epoch
                best_params = {name: value.copy() for name, value in net.params.items()}
                best_optimizer = optimizer.copy()
        history.append(record)
        logger.info(
            "Phase II epoch %d/%d: loss %.4f val MAE %s lr %.3g",
            epoch + 1, settings.epochs, record["loss"],
            f"{record['val_mae']:.3f}" if "val_mae" in record else "n/a", lr,
        )

    epoch_count = settings.epochs
    if best_params is not None:
        net.load_params(best_params)
        optimizer, epoch_count = best_optimizer, best_epoch + 1
        logger.info("Keeping epoch %d (validation MAE %.3f)", best_epoch + 1, best_mae)
    return Checkpoint(
        phase="phase2",
        network=net,
        config_hash=config.config_hash(*stage_sections("phase2")),
        epoch=epoch_count,
        optimizer=optimizer,
        history=history,
        extra={
            "regions": list(settings.regions),
            "head": settings.head,
            "use_gender": settings.use_gender,
            "lambda": loss_cfg.lam,
            "best_epoch": best_epoch,
            "best_val_mae": best_mae if best_params is not None else None,
            "seed": seed,
        },
    )


__all__ = [
    "iterate_batches",
    "phase1_inputs",
    "train_phase1",
    "RegionStack",
    "stack_regions",
    "build_regressor",
    "predict",
    "train_phase2",
]
