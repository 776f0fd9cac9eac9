"""Small training runs that check the learning behaviour of both phases.

The data are hand-built so each run takes a second or two: image brightness
is a linear function of age, so the networks only need to learn a
one-dimensional mapping.
"""

from __future__ import annotations

import math
from pathlib import Path
import sys

import numpy as np

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

from attention_age.core.config import ConfigManager  # noqa: E402
from attention_age.nn.optim import OptimizerState, adam_step  # noqa: E402
from attention_age.processors import trainer  # noqa: E402
from attention_age.processors.ldl import entropy, soft_label_matrix  # noqa: E402
from attention_age.processors.metrics import distribution_diagnostics  # noqa: E402
from attention_age.processors.synth import SampleRecord  # noqa: E402

NUM_AGES = 60


def _brightness(ages) -> np.ndarray:
    return 0.1 + 0.8 * (np.asarray(ages, dtype=np.float64) - 1) / (NUM_AGES - 1)


def _records(count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    ages = rng.integers(1, NUM_AGES + 1, size=count)
    return [
        SampleRecord(
            id=f"s{i:03d}",
            image=np.clip(_brightness(age) + rng.normal(0.0, 0.02, size=(32, 32)), 0.0, 1.0),
            age=int(age),
            gender=1 if i % 2 else -1,
        )
        for i, age in enumerate(ages)
    ]


def _stack(ages, regions=("H", "R1"), crop_size: int = 8) -> trainer.RegionStack:
    ages = np.asarray(ages)
    grids = np.broadcast_to(_brightness(ages)[:, None, None, None], (ages.size, crop_size, crop_size, len(regions)))
    return trainer.RegionStack(
        ids=[f"s{i:03d}" for i in range(ages.size)],
        x=np.ascontiguousarray(grids, dtype=np.float32),
        ages=ages,
        genders=np.where(np.arange(ages.size) % 2, 1, -1),
        regions=tuple(regions),
    )


# ---------------------------------------------------------------------------
# Phase I: soft labels
# ---------------------------------------------------------------------------

def _phase1_excess(smoke_config: str, width: int, records) -> float:
    """Share of the loss above its floor still left after training."""
    config = ConfigManager(smoke_config, {
        "labels": {"soft_label_width": width},
        "phase1": {"epochs": 8, "batch_size": 8, "schedule": [[0, 0.01]]},
    })
    checkpoint = trainer.train_phase1(config, records, "region1")
    targets = soft_label_matrix(width, NUM_AGES)[np.array([r.age for r in records]) - 1]
    floor = float(entropy(targets / targets.sum(axis=1, keepdims=True)).mean())
    start = math.log(NUM_AGES)
    return (checkpoint.history[-1]["loss"] - floor) / (start - floor)


def test_soft_labels_converge_where_one_hot_stalls(smoke_config):
    records = _records(48)
    soft = _phase1_excess(smoke_config, 10, records)
    one_hot = _phase1_excess(smoke_config, 1, records)
    assert soft < one_hot


# ---------------------------------------------------------------------------
# Phase II
# ---------------------------------------------------------------------------

def _phase2_config(smoke_config: str, **labels) -> ConfigManager:
    return ConfigManager(smoke_config, {
        "labels": labels,
        "phase2": {
            "epochs": 300,
            "batch_size": 8,
            "hidden_units": 16,
            "schedule": [[0, 0.01], [200, 0.002]],
            "network": {"channels": [8]},
        },
    })


def test_overfits_a_tiny_training_set(smoke_config):
    train = _stack(np.arange(5, 61, 5))
    config = _phase2_config(smoke_config)
    checkpoint = trainer.train_phase2(config, train)
    pred, dists = trainer.predict(checkpoint.network, train, NUM_AGES)
    assert dists is not None
    assert float(np.mean(np.abs(pred - train.ages))) < 2.0


def test_kl_term_pulls_distributions_toward_targets(smoke_config):
    train = _stack(np.arange(5, 61, 5))
    kls = {}
    for lam in (0.0, 0.5):
        config = _phase2_config(smoke_config, **{"lambda": lam})
        checkpoint = trainer.train_phase2(config, train)
        _, dists = trainer.predict(checkpoint.network, train, NUM_AGES)
        kls[lam] = distribution_diagnostics(dists, train.ages, config.loss_config().sigma).mean_kl
    assert kls[0.5] < kls[0.0]


def test_best_epoch_keeps_its_optimizer_state(smoke_config):
    config = ConfigManager(smoke_config, {"phase2": {"epochs": 6, "batch_size": 4}})
    train = _stack(np.arange(3, 60, 6))
    val = _stack(np.array([10, 25, 40, 55]))
    checkpoint = trainer.train_phase2(config, train, val)

    maes = [row["val_mae"] for row in checkpoint.history]
    best = int(np.argmin(maes))
    batches = math.ceil(len(train) / 4)
    assert checkpoint.extra["best_epoch"] == best
    assert checkpoint.epoch == best + 1
    assert checkpoint.optimizer.step == (best + 1) * batches
    assert len(checkpoint.history) == 6


def test_optimizer_copy_is_independent():
    params = {"w": np.ones(3)}
    state = OptimizerState.for_params(params, [[0, 0.1]])
    adam_step(state, params, {"w": np.ones(3)})
    snapshot = state.copy()
    adam_step(state, params, {"w": np.ones(3)})
    assert snapshot.step == 1 and state.step == 2
    assert not np.array_equal(snapshot.m["w"], state.m["w"])

