"""Randomised property suites for losses, distributions, CAMs and metrics.

Each test draws its cases from a fixed seed, so failures are reproducible.
"""

from __future__ import annotations

import math
from pathlib import Path
import sys

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

from attention_age.nn.gradcheck import numeric_gradient, relative_error  # noqa: E402
from attention_age.nn.layers import GlobalAvgPool, LayerSpec  # noqa: E402
from attention_age.nn.network import Network, classifier_spec  # noqa: E402
from attention_age.processors import attention, ldl, metrics  # noqa: E402


# ---------------------------------------------------------------------------
# Brute-force references
# ---------------------------------------------------------------------------

def _pixel_counts(a, b):
    inter = union = 0
    for y in range(0, 24):
        for x in range(0, 24):
            in_a = a[0] <= x < a[2] and a[1] <= y < a[3]
            in_b = b[0] <= x < b[2] and b[1] <= y < b[3]
            inter += in_a and in_b
            union += in_a or in_b
    return inter, union


def _random_box(rng):
    x0, x1 = sorted(rng.choice(24, 2, replace=False).tolist())
    y0, y1 = sorted(rng.choice(24, 2, replace=False).tolist())
    return (x0, y0, x1, y1)


def _soft_label_reference(t, width, num_ages):
    return [max(0.0, 1.0 - abs(i - t) / width) for i in range(1, num_ages + 1)]


def _gaussian_reference(y, sigma, num_ages):
    raw = [math.exp(-((k - y) ** 2) / (2 * sigma * sigma)) / (math.sqrt(2 * math.pi) * sigma) for k in range(1, num_ages + 1)]
    total = math.fsum(raw)
    return [value / total for value in raw]


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.0, 0.05, 0.5, 5.0])
def test_joint_loss_gradients_on_random_cases(lam):
    rng = np.random.default_rng(int(lam * 1000) + 1)
    cfg = ldl.LossConfig(lam=lam, sigma=15.0, num_ages=240)
    for _ in range(25):
        z = rng.normal(scale=rng.uniform(0.1, 3.0), size=240)
        y = int(rng.integers(1, 241))
        _, analytic = ldl.joint_loss(z, y, cfg)
        numeric = numeric_gradient(lambda v: ldl.joint_loss(v, y, cfg)[0], z, 1e-5)
        assert relative_error(analytic, numeric, 1e-4).max() < 1e-4, (lam, y)


def test_phase1_loss_gradients_on_random_cases():
    rng = np.random.default_rng(21)
    for _ in range(25):
        z = rng.normal(scale=rng.uniform(0.1, 3.0), size=240)
        label = ldl.soft_label(int(rng.integers(1, 241)), int(rng.integers(1, 80)), 240)
        _, analytic = ldl.phase1_loss(z, label)
        numeric = numeric_gradient(lambda v: ldl.phase1_loss(v, label)[0], z, 1e-5)
        assert relative_error(analytic, numeric, 1e-4).max() < 1e-4


# ---------------------------------------------------------------------------
# Distribution laws
# ---------------------------------------------------------------------------

def test_distribution_laws_on_random_logits():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        num_ages = int(rng.integers(2, 241))
        p = ldl.softmax(rng.normal(scale=rng.uniform(0.1, 20.0), size=num_ages))
        assert abs(p.sum() - 1.0) <= 1e-6
        assert 1.0 - 1e-9 <= ldl.expectation(p) <= num_ages + 1e-9
        q = ldl.softmax(rng.normal(size=num_ages))
        assert ldl.kl_regularizer(q, p) >= 0.0
        assert ldl.kl_regularizer(p, p) == pytest.approx(0.0, abs=1e-9)


def test_softmax_ignores_a_constant_shift():
    rng = np.random.default_rng(6)
    for _ in range(500):
        z = rng.normal(scale=rng.uniform(0.1, 20.0), size=int(rng.integers(2, 241)))
        shift = rng.uniform(-50.0, 50.0)
        np.testing.assert_allclose(ldl.softmax(z + shift), ldl.softmax(z), atol=1e-12)


def test_global_average_pool_is_linear():
    rng = np.random.default_rng(7)
    pool = LayerSpec("global_avg_pool")

    def gap(x):
        return GlobalAvgPool.forward(pool, x, {})[0]

    for _ in range(200):
        shape = (1, *(int(v) for v in rng.integers(1, 9, size=3)))
        F, G = rng.normal(size=shape), rng.normal(size=shape)
        a, b = rng.normal(size=2)
        np.testing.assert_allclose(gap(a * F + b * G), a * gap(F) + b * gap(G), atol=1e-6)


# ---------------------------------------------------------------------------
# CAM identity
# ---------------------------------------------------------------------------

def test_cam_mean_matches_logit_for_random_average_pooled_nets():
    rng = np.random.default_rng(17)
    for trial in range(50):
        size = int(rng.integers(8, 17))
        num_ages = int(rng.integers(2, 13))
        channels = tuple(int(c) for c in rng.integers(1, 7, size=int(rng.integers(1, 4))))
        net = Network(classifier_spec(size, num_ages, channels=channels, pool="avg", seed=trial)).astype(np.float64)
        features, logits, _ = net.features(rng.uniform(size=(size, size)))
        weights, bias = net.head_weights()
        for t in range(1, num_ages + 1):
            heat = attention.cam(features, weights, t).values
            assert abs(heat.mean() + bias[t - 1] - logits[t - 1]) < 1e-5


# ---------------------------------------------------------------------------
# Metric and target oracles
# ---------------------------------------------------------------------------

def test_iou_matches_pixel_recount():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b = _random_box(rng), _random_box(rng)
        inter, union = _pixel_counts(a, b)
        assert abs(metrics.iou(a, b) - inter / union) <= 1e-9
        assert metrics.iou(a, b) == metrics.iou(b, a)


def test_ap50_matches_pair_recount():
    rng = np.random.default_rng(2)
    for _ in range(50):
        preds = [_random_box(rng) for _ in range(20)]
        truths = [_random_box(rng) for _ in range(20)]
        hits = 0
        for a, b in zip(preds, truths):
            inter, union = _pixel_counts(a, b)
            hits += 2 * inter > union
        assert abs(metrics.ap50(preds, truths) - hits / 20) <= 1e-9


def test_mae_matches_loop():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        pred = rng.uniform(1, 240, size=n)
        truth = rng.integers(1, 241, size=n)
        expected = math.fsum(abs(float(p) - int(t)) for p, t in zip(pred, truth)) / n
        assert abs(metrics.mae(pred, truth) - expected) <= 1e-9


def test_soft_labels_match_their_definition():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        num_ages = int(rng.integers(2, 241))
        t = int(rng.integers(1, num_ages + 1))
        width = int(rng.integers(1, 100))
        values = ldl.soft_label(t, width, num_ages).values
        assert np.max(np.abs(values - _soft_label_reference(t, width, num_ages))) <= 1e-9


def test_gaussian_targets_match_their_definition():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        num_ages = int(rng.integers(2, 241))
        y = int(rng.integers(1, num_ages + 1))
        sigma = float(rng.uniform(0.5, 40.0))
        probs = ldl.gaussian_target(y, sigma, num_ages).probs
        assert np.max(np.abs(probs - _gaussian_reference(y, sigma, num_ages))) <= 1e-9
