"""Full-scale directional checks on the default synthetic experiment.

These train every network at the default sizes and take tens of minutes;
run them with ``pytest -m slow``.
"""

from __future__ import annotations

from pathlib import Path
import sys

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

import attention_age as aa  # noqa: E402
from attention_age.core.paths import LOCALIZATION_CSV  # noqa: E402
from attention_age.processors.attention import RegionKind  # noqa: E402
from attention_age.processors.metrics import iou  # noqa: E402
from attention_age.processors.regions import read_localization  # noqa: E402

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def experiment(tmp_path_factory) -> str:
    out = tmp_path_factory.mktemp("acceptance") / "default"
    aa.gen_data("default", str(out))
    aa.train_phase1("default", str(out))
    aa.localize("default", str(out))
    return str(out)


def _l1_config(tmp_path: Path) -> str:
    path = tmp_path / "l1.yaml"
    path.write_text("phase2:\n  head: l1\n", encoding="utf-8")
    return str(path)


@pytest.mark.parametrize("kind,floor", [("region1", 0.9), ("hand", 0.9), ("region2", 0.6)])
def test_localization_ap50_at_best_threshold(experiment, kind, floor):
    table = aa.sweep(None, experiment, param="tau", grid="10,20,...,100", metric="ap50", kind=kind)
    assert table["values"][table["best_index"]] >= floor


def test_region2_is_disjoint_from_region1(experiment):
    found = {}
    for record in read_localization(Path(experiment) / LOCALIZATION_CSV):
        found.setdefault(record.image_id, {})[record.kind] = record
    pairs = [
        (boxes[RegionKind.REGION1], boxes[RegionKind.REGION2])
        for boxes in found.values()
        if not boxes[RegionKind.REGION1].fallback
    ]
    disjoint = sum(iou(primary.box, secondary.box) == 0.0 for primary, secondary in pairs)
    assert disjoint / len(pairs) >= 0.95


def test_region_and_head_ordering(experiment, tmp_path):
    grid = "O,H,R1,R2,H+R1"
    joint = aa.sweep("default", experiment, param="regions", grid=grid, seeds=3)
    mae = dict(zip(joint["grid"], joint["values"]))
    assert mae["R1"] < mae["O"]
    assert mae["H+R1"] < mae["H"]
    assert mae["R1"] < mae["R2"]

    plain = aa.sweep(_l1_config(tmp_path), experiment, param="regions", grid=grid, seeds=3)
    for regions, value in zip(plain["grid"], plain["values"]):
        assert mae[regions] < value, regions


def test_regularizer_pulls_distributions_toward_targets(experiment):
    table = aa.sweep("default", experiment, param="lambda", grid="0,0.05,0.5,5", metric="kl")
    assert np.all(np.diff(table["values"]) < 0)


def test_lambda_curve_has_interior_minimum(experiment):
    table = aa.sweep("default", experiment, param="lambda", grid="0,0.001,0.01,0.05,0.1,0.5,1,5")
    assert 0 < table["best_index"] < 7
