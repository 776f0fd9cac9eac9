"""Tests for tensors, layers, networks, the optimizer and checkpoints."""

from __future__ import annotations

from pathlib import Path
import sys
import zipfile

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

from attention_age.core.errors import (  # noqa: E402
    CheckpointMismatchError,
    MissingCacheError,
    NonFiniteError,
    ShapeMismatchError,
)
from attention_age.nn import gradcheck  # noqa: E402
from attention_age.nn.layers import LayerSpec  # noqa: E402
from attention_age.nn.network import Network, NetworkSpec, classifier_spec, regressor_spec  # noqa: E402
from attention_age.nn.optim import OptimizerState, adam_step, lr_at  # noqa: E402
from attention_age.nn.serialization import load_checkpoint, read_header, save_checkpoint  # noqa: E402
from attention_age.nn.tensor import Tensor  # noqa: E402
from attention_age.processors import ldl  # noqa: E402


def _dense(units: int, inputs: int) -> NetworkSpec:
    return NetworkSpec((LayerSpec("dense", units=units),), (inputs,))


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

def test_tensor_from_flat_is_row_major():
    tensor = Tensor.from_flat((2, 3), [1, 2, 3, 4, 5, 6])
    assert tensor.shape == (2, 3)
    assert tensor.size == 6
    assert tensor.numpy()[1, 0] == 4
    np.testing.assert_array_equal(tensor.flat(), [1, 2, 3, 4, 5, 6])


def test_tensor_rejects_wrong_value_count():
    with pytest.raises(ShapeMismatchError):
        Tensor.from_flat((2, 2), [1, 2, 3])


def test_tensor_rejects_nan():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.nan]))


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def test_identity_dense_layer():
    net = Network(_dense(2, 2), {"0.weight": np.eye(2), "0.bias": np.zeros(2)})
    out = net.forward(np.array([1.0, 2.0]))
    np.testing.assert_allclose(out.numpy(), [1.0, 2.0])


def test_softmax_of_equal_logits_is_uniform():
    net = Network(NetworkSpec((LayerSpec("softmax"),), (4,)))
    np.testing.assert_allclose(net.forward(np.zeros(4)).numpy(), [0.25] * 4)


def test_single_kernel_conv_then_average_pool():
    spec = NetworkSpec(
        (LayerSpec("conv2d", kernel=1, stride=1, units=1), LayerSpec("global_avg_pool")),
        (5, 5, 1),
    )
    net = Network(spec, {"0.weight": np.full((1, 1, 1, 1), 2.0), "0.bias": np.zeros(1)})
    out = net.forward(np.full((5, 5), 3.0))
    np.testing.assert_allclose(out.numpy(), [6.0])


def test_forward_accepts_batches():
    net = Network(classifier_spec(8, 6, channels=(2, 3), seed=4))
    out = net.forward(np.zeros((3, 8, 8, 1)))
    assert out.shape == (3, 6)
    np.testing.assert_allclose(out.numpy().sum(axis=1), 1.0, rtol=1e-5)


def test_shape_mismatch_names_the_layer():
    with pytest.raises(ShapeMismatchError) as excinfo:
        NetworkSpec((LayerSpec("dense", units=3),), (4, 4, 1))
    assert excinfo.value.layer_index == 0
    assert excinfo.value.layer_kind == "dense"


def test_softmax_must_be_last():
    with pytest.raises(ValueError):
        NetworkSpec((LayerSpec("softmax"), LayerSpec("dense", units=2)), (2,))


def test_wrong_input_shape_is_rejected():
    net = Network(classifier_spec(8, 6, channels=(2,), seed=0))
    with pytest.raises(ShapeMismatchError):
        net.forward(np.zeros((9, 9)))


def test_covariate_is_required_and_must_be_signed_unit():
    net = Network(regressor_spec(8, 1, 6, channels=(2,), hidden_units=4, gender_units=2, seed=0))
    with pytest.raises(ShapeMismatchError):
        net.forward(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        net.forward(np.zeros((8, 8)), covariate=0.5)
    assert net.forward(np.zeros((8, 8)), covariate=-1).shape == (6,)


def test_spec_round_trips_through_dict():
    spec = regressor_spec(8, 2, 10, channels=(2, 3), hidden_units=5, gender_units=3, head="l1", seed=9)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec
    assert spec.output_width == 1
    assert spec.has_covariate
    assert not spec.has_softmax


def test_downsample_sets_the_feature_stride():
    assert classifier_spec(32, 6, channels=(2, 3, 4)).feature_stride() == 4
    spec = classifier_spec(32, 6, channels=(2, 3, 4), downsample=1)
    assert spec.feature_stride() == 2
    assert [layer.stride for layer in spec.layers if layer.kind == "conv2d"] == [1, 2, 1]
    features, _, _ = Network(spec).features(np.zeros((32, 32)))
    assert features.shape == (16, 16, 4)
    assert classifier_spec(32, 6, channels=(2, 3), downsample=0).feature_stride() == 1
    assert regressor_spec(8, 2, 10, channels=(2, 3), downsample=0).feature_stride() == 1
    with pytest.raises(ValueError):
        classifier_spec(32, 6, channels=(2, 3), downsample=2)


def test_same_seed_gives_same_parameters():
    a = Network(classifier_spec(8, 6, channels=(2, 3), seed=5))
    b = Network(classifier_spec(8, 6, channels=(2, 3), seed=5))
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def test_backward_without_forward_raises():
    net = Network(_dense(1, 3))
    with pytest.raises(MissingCacheError):
        net.backward(np.ones(1), at="output")


def test_zero_loss_gradient_gives_zero_parameter_gradients():
    net = Network(classifier_spec(8, 6, channels=(2, 3), seed=1))
    net.forward(np.random.default_rng(0).normal(size=(8, 8)))
    grads = net.backward(np.zeros(6), at="logits")
    assert all(not np.any(value) for value in grads.values())


def test_squared_error_gradient_of_single_dense_layer():
    net = Network(_dense(1, 3), {"0.weight": np.array([[0.5], [-1.0], [2.0]]), "0.bias": np.array([0.1])}, dtype=np.float64)
    x = np.array([1.0, 2.0, 3.0])
    target = 1.0
    pred = float(net.forward(x).numpy()[0])
    grads = net.backward(np.array([2.0 * (pred - target)]), at="output")
    np.testing.assert_allclose(grads["0.weight"].reshape(-1), 2.0 * (pred - target) * x)
    np.testing.assert_allclose(grads["0.bias"], [2.0 * (pred - target)])


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------

def test_grad_check_linear_net_with_mae():
    net = Network(_dense(1, 4), {"0.weight": np.array([[0.3], [0.1], [-0.2], [0.4]]), "0.bias": np.array([0.0])})

    def mae(output):
        diff = output - 5.0
        return float(np.abs(diff).sum()), np.sign(diff)

    report = gradcheck.grad_check(net, mae, np.array([1.0, -2.0, 0.5, 3.0]))
    assert report.passed
    assert report.max_rel_error < 1e-4
    assert report.checked == 5


def test_grad_check_constant_loss_has_zero_gradients():
    net = Network(_dense(2, 3))
    report = gradcheck.grad_check(net, lambda out: (0.0, np.zeros_like(out)), np.ones(3))
    assert report.max_rel_error == 0.0


def test_grad_check_classifier_with_soft_label_loss():
    net = Network(classifier_spec(8, 12, channels=(2, 3), pool="avg", seed=2))
    label = ldl.soft_label(5, 3, 12)
    sample = np.random.default_rng(1).normal(size=(8, 8, 1))
    report = gradcheck.grad_check(
        net, lambda z: ldl.phase1_loss(z, label.values[None, :]), sample, at="logits"
    )
    assert report.passed, report.summary()
    assert report.checked > 0


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.5, 5.0])
def test_grad_check_regressor_with_joint_loss(lam):
    spec = regressor_spec(8, 2, 12, channels=(2,), hidden_units=4, gender_units=2, seed=3)
    net = Network(spec)
    cfg = ldl.LossConfig(lam=lam, sigma=2.0, num_ages=12)
    sample = np.random.default_rng(4).normal(size=(8, 8, 2))
    report = gradcheck.grad_check(
        net, lambda z: ldl.joint_loss(z, [4], cfg), sample, covariate=1, at="logits"
    )
    assert report.passed, report.summary()


def test_grad_check_refuses_large_networks(caplog):
    net = Network(_dense(250, 400))
    with caplog.at_level("WARNING", logger="attention_age.nn.gradcheck"):
        report = gradcheck.grad_check(net, lambda out: (0.0, np.zeros_like(out)), np.zeros(400))
    assert not report.passed
    assert report.refused is not None and "too many" in report.refused
    assert report.checked == 0
    assert report.summary().startswith("gradient check refused")
    assert "refused" in caplog.text


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

def test_learning_rate_schedule_lookup():
    schedule = [(0, 3e-4), (60, 1e-4), (90, 1e-5)]
    assert lr_at(schedule, 0) == 3e-4
    assert lr_at(schedule, 75) == 1e-4
    assert lr_at(schedule, 120) == 1e-5


def test_adam_zero_gradients_leave_parameters_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    state = OptimizerState.for_params(params, [(0, 0.1)])
    adam_step(state, params, {"w": np.zeros(2)})
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_moves_by_learning_rate_against_gradient_sign():
    params = {"w": np.array([1.0, 1.0, 1.0])}
    state = OptimizerState.for_params(params, [(0, 0.01)])
    adam_step(state, params, {"w": np.array([0.5, -3.0, 1e-3])})
    np.testing.assert_allclose(params["w"], [0.99, 1.01, 0.99], atol=1e-6)


def test_adam_rejects_bad_gradients():
    params = {"w": np.zeros(2)}
    state = OptimizerState.for_params(params, [(0, 0.01)])
    with pytest.raises(KeyError):
        adam_step(state, params, {"other": np.zeros(2)})
    with pytest.raises(ValueError):
        adam_step(state, params, {"w": np.zeros(3)})
    with pytest.raises(NonFiniteError):
        adam_step(state, params, {"w": np.array([np.inf, 0.0])}, epoch=2)
    assert state.step == 0


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_and_determinism(tmp_path):
    net = Network(regressor_spec(8, 1, 6, channels=(2,), hidden_units=4, gender_units=2, seed=3))
    state = OptimizerState.for_params(net.params, [(0, 3e-4), (5, 1e-4)])
    grads = {name: np.ones_like(value) for name, value in net.params.items()}
    adam_step(state, net.params, grads)

    first = save_checkpoint(tmp_path / "a.ckpt", net, state, {"phase": "phase2"})
    second = save_checkpoint(tmp_path / "b.ckpt", net, state, {"phase": "phase2"})
    assert first.read_bytes() == second.read_bytes()

    loaded, loaded_state, metadata = load_checkpoint(first)
    assert metadata == {"phase": "phase2"}
    assert loaded.spec == net.spec
    for name, value in net.params.items():
        np.testing.assert_array_equal(loaded.params[name], value)
    assert loaded_state.step == 1
    assert loaded_state.schedule == [(0, 3e-4), (5, 1e-4)]
    np.testing.assert_array_equal(loaded_state.m[next(iter(net.params))], state.m[next(iter(net.params))])


def test_checkpoint_header_rejects_foreign_archives(tmp_path):
    path = tmp_path / "other.ckpt"
    with zipfile.ZipFile(path, "w") as archive:
        archive.writestr("header.json", '{"format": "something-else", "version": 1}')
    with pytest.raises(CheckpointMismatchError):
        read_header(path)
