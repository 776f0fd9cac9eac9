"""Localization quality on scenes with known answers.

A hand-weighted classifier responds only to pixels brighter than 0.4, so its
class activation map marks the bright patches and nothing else. Running the
real projection, thresholding, box and erase code over it checks that boxes
land on the patch they should, at the right pixel offset.
"""

from __future__ import annotations

import csv
from pathlib import Path
import sys

import numpy as np

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

import attention_age as aa  # noqa: E402
from attention_age.core.paths import SKIP_LIST_CSV  # noqa: E402
from attention_age.nn.network import Network, classifier_spec  # noqa: E402
from attention_age.processors.attention import (  # noqa: E402
    ErasePolicy,
    LocalizationPolicy,
    RegionBox,
    RegionKind,
    localize,
)
from attention_age.processors.metrics import ap50, iou, miou  # noqa: E402
from attention_age.processors.regions import RegionExtractor, localization_at_taus  # noqa: E402
from attention_age.processors.synth import SampleRecord  # noqa: E402

SIZE = 32
PRIMARY, SECONDARY = 6, 5


def _bright_detector(size: int = SIZE) -> Network:
    """Conv (centre tap, bias -0.4) -> stride-2 conv (centre tap) -> GMP -> dense picking class 4."""
    spec = classifier_spec(size, 4, channels=(1, 2), kernel=3, pool="max", downsample=1)
    first = np.zeros((3, 3, 1, 1))
    first[1, 1, 0, 0] = 1.0
    second = np.zeros((3, 3, 1, 2))
    second[1, 1, 0, 0] = 1.0
    head = np.zeros((2, 4))
    head[0, 3] = 1.0
    return Network(spec, {
        "0.weight": first,
        "0.bias": np.array([-0.4]),
        "2.weight": second,
        "2.bias": np.zeros(2),
        "5.weight": head,
        "5.bias": np.array([0.0, 0.0, 0.0, 0.1]),
    })


def _scenes(count: int, seed: int = 0):
    """Dark noisy images with a 0.9 patch top-left and a dimmer 0.7 patch bottom-right."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        image = np.clip(0.05 + rng.normal(0.0, 0.01, size=(SIZE, SIZE)), 0.0, 1.0)
        ay, ax = rng.integers(2, 11, size=2)
        by, bx = rng.integers(19, 26, size=2)
        image[ay:ay + PRIMARY, ax:ax + PRIMARY] = 0.9
        image[by:by + SECONDARY, bx:bx + SECONDARY] = 0.7
        boxes = [
            RegionBox(RegionKind.REGION1, int(ax), int(ay), int(ax) + PRIMARY, int(ay) + PRIMARY),
            RegionBox(RegionKind.REGION2, int(bx), int(by), int(bx) + SECONDARY, int(by) + SECONDARY),
        ]
        records.append(SampleRecord(id=f"s{i:03d}", image=image, age=30, gender=1, truth_boxes=boxes))
    return records


def test_boxes_land_on_the_bright_patch():
    net = _bright_detector()
    records = _scenes(20)
    policy = LocalizationPolicy(tau=70)
    preds = [localize(net, r.image, RegionKind.REGION1, policy, image_id=r.id).box for r in records]
    truths = [r.box(RegionKind.REGION1) for r in records]
    full = [RegionBox.full(RegionKind.REGION1, SIZE, SIZE)] * len(records)

    assert ap50(preds, truths) >= 0.9
    assert miou(preds, truths) > miou(full, truths)


def test_threshold_sweep_agrees_with_single_localization():
    net = _bright_detector()
    records = _scenes(12, seed=1)
    table = localization_at_taus(net, records, RegionKind.REGION1, LocalizationPolicy(), [70, 101])
    assert table["ap50"][0] >= 0.9
    # nothing reaches 101, so every image falls back to the full frame
    assert table["ap50"][1] == 0.0


def test_region2_moves_off_the_erased_patch():
    net = _bright_detector()
    records = _scenes(20, seed=2)
    extractor = RegionExtractor(
        {"region1": net, "erased": net},
        {"region1": LocalizationPolicy(tau=70), "erased": LocalizationPolicy(tau=40)},
        crop_size=8,
        seed=0,
        erase=ErasePolicy(fill="local", margin=2),
    )
    disjoint = 0
    for record in records:
        found = {r.kind: r for r in extractor.extract_one(record).records}
        primary, secondary = found[RegionKind.REGION1], found[RegionKind.REGION2]
        assert not primary.fallback and not secondary.fallback
        disjoint += iou(primary.box, secondary.box) == 0.0
        assert iou(secondary.box, record.box(RegionKind.REGION2)) > 0.5
    assert disjoint / len(records) >= 0.95


def test_default_threshold_leaves_skip_list_empty(smoke_config, tmp_path):
    out = tmp_path / "run"
    aa.gen_data(smoke_config, str(out))
    aa.train_phase1(smoke_config, str(out))
    summary = aa.localize(smoke_config, str(out))

    assert summary["skipped_images"] == 0
    with open(out / SKIP_LIST_CSV, encoding="utf-8") as handle:
        assert list(csv.DictReader(handle)) == []
