"""Tests for age, localization and distribution metrics and sweep tables."""

from __future__ import annotations

import csv
import math
from pathlib import Path
import sys

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

from attention_age.processors import metrics  # noqa: E402
from attention_age.processors.attention import RegionBox, RegionKind  # noqa: E402
from attention_age.processors.ldl import gaussian_target_matrix  # noqa: E402


def _brute_iou(a, b) -> float:
    grid_a = np.zeros((20, 20), dtype=bool)
    grid_b = np.zeros((20, 20), dtype=bool)
    grid_a[a[1]:a[3], a[0]:a[2]] = True
    grid_b[b[1]:b[3], b[0]:b[2]] = True
    return (grid_a & grid_b).sum() / (grid_a | grid_b).sum()


def test_mae_oracles():
    assert metrics.mae([3, 4, 5], [3, 4, 5]) == 0.0
    assert metrics.mae([17, 27, 37], [10, 20, 30]) == pytest.approx(7.0)
    assert metrics.mae([1, 5], [2, 9]) == pytest.approx(2.5)


def test_mae_rejects_bad_input():
    with pytest.raises(ValueError):
        metrics.mae([], [])
    with pytest.raises(ValueError):
        metrics.mae([1, 2], [1])


def test_iou_oracles():
    box = RegionBox(RegionKind.REGION1, 2, 3, 9, 7)
    assert metrics.iou(box, box) == 1.0
    assert metrics.iou((0, 0, 2, 2), (5, 5, 8, 8)) == 0.0
    assert metrics.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)


def test_iou_matches_pixel_count():
    rng = np.random.default_rng(12)
    for _ in range(50):
        a = sorted(rng.choice(20, 2, replace=False))
        b = sorted(rng.choice(20, 2, replace=False))
        c = sorted(rng.choice(20, 2, replace=False))
        d = sorted(rng.choice(20, 2, replace=False))
        first = (a[0], b[0], a[1], b[1])
        second = (c[0], d[0], c[1], d[1])
        assert metrics.iou(first, second) == pytest.approx(_brute_iou(first, second))


def test_ap50_oracles():
    truths = [(0, 0, 4, 4), (10, 10, 14, 14)]
    assert metrics.ap50(truths, truths) == 1.0
    assert metrics.ap50([(5, 5, 6, 6), (0, 0, 1, 1)], truths) == 0.0
    # (0,0,4,4) vs (0,0,4,2): overlap 8, union 16
    assert metrics.iou((0, 0, 4, 2), (0, 0, 4, 4)) == 0.5
    assert metrics.ap50([(0, 0, 4, 2)], [(0, 0, 4, 4)]) == 0.0


def test_miou_is_mean_of_pairs():
    assert metrics.miou([(0, 0, 2, 2), (0, 0, 4, 2)], [(0, 0, 2, 2), (0, 0, 4, 4)]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        metrics.miou([(0, 0, 2, 2)], [])


def test_localization_table_skips_kinds_without_truth():
    rows = metrics.localization_table(
        {"Region1": [(0, 0, 2, 2)], "Region2": [(0, 0, 2, 2)]},
        {"Region1": [(0, 0, 2, 2)]},
        {"Region1": 50.0},
    )
    assert [row.kind for row in rows] == ["Region1"]
    assert rows[0].ap50 == 1.0
    assert rows[0].tau == 50.0


def test_diagnostics_of_gaussian_targets_have_zero_kl():
    truths = [10, 120, 230]
    targets = gaussian_target_matrix(15.0, 240)[np.array(truths) - 1]
    result = metrics.distribution_diagnostics(targets, truths, 15.0)
    assert result.mean_kl == pytest.approx(0.0, abs=1e-12)


def test_diagnostics_of_one_hot_and_uniform():
    one_hot = np.zeros((2, 240))
    one_hot[0, 49] = 1.0
    one_hot[1, 99] = 1.0
    result = metrics.distribution_diagnostics(one_hot, [50, 100], 15.0)
    assert result.mean_entropy == pytest.approx(0.0)
    assert result.mean_gap == pytest.approx(0.0)

    uniform = np.full((1, 240), 1 / 240)
    result = metrics.distribution_diagnostics(uniform, [100], 15.0)
    assert result.mean_entropy == pytest.approx(math.log(240))
    assert result.summary()["mean_entropy"] == pytest.approx(5.4806, abs=1e-4)


def test_sweep_ties_go_to_smallest_parameter():
    table = metrics.sweep("lambda", [0.5, 0.0, 1.0], [3.0, 3.0, 3.0])
    assert table.best == (0.0, 3.0)


def test_sweep_finds_vertex_of_convex_metric():
    grid = [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0]
    table = metrics.sweep("lambda", grid, [(math.log10(g + 1e-4) + 1) ** 2 for g in grid])
    assert table.best[0] == 0.1


def test_sweep_maximizes_localization_metrics():
    table = metrics.sweep("tau", [10, 20, 30], [0.5, 0.9, 0.9], metric="ap50")
    assert table.maximize
    assert table.best == (20, 0.9)


def test_sweep_averages_seeds_and_writes_csv(tmp_path):
    table = metrics.sweep("head", ["expectation", "l1"], [[4.0, 6.0], [7.0, 7.0]])
    assert table.values == [5.0, 7.0]
    path = table.write_csv(tmp_path / "head.csv")
    with open(path, encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["head", "mae", "std", "seeds", "best"]
    assert rows[1] == ["expectation", "5.000000", "1.000000", "2", "1"]
    assert rows[2][-1] == "0"


def test_sweep_rejects_mismatched_values():
    with pytest.raises(ValueError):
        metrics.sweep("lambda", [0.0, 1.0], [1.0])


def test_report_mae_matches_per_sample_csv(tmp_path):
    samples = [
        metrics.SamplePrediction("a", 10, 12.5),
        metrics.SamplePrediction("b", 40, 31.0),
        metrics.SamplePrediction("c", 100, 100.25),
    ]
    report = metrics.EvalReport(split="test", samples=samples, distributions=np.full((3, 4), 0.25))
    paths = report.write(tmp_path)
    reread = metrics.read_per_sample(paths["per_sample"])
    assert metrics.mae([s.pred for s in reread], [s.age for s in reread]) == pytest.approx(report.mae)
    assert report.to_dict()["count"] == 3
    assert paths["distributions"].read_text().count("\n") == 1 + 3 * 4
