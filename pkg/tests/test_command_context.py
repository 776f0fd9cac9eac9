"""Tests for the experiment context: config loading, locking and stage markers."""

from __future__ import annotations

import os
from pathlib import Path
import sys

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

from attention_age.core.command_context import ExperimentContext  # noqa: E402
from attention_age.core.errors import ConfigError, ExperimentLockedError  # noqa: E402


def test_marker_makes_stage_idempotent(tmp_path):
    with ExperimentContext(None, str(tmp_path)) as ctx:
        assert not ctx.stage_done("gen-data")
        ctx.mark_done("gen-data", {"count": 3})
        assert ctx.stage_done("gen-data")
        assert ctx.read_marker("gen-data")["summary"] == {"count": 3}

    with ExperimentContext(None, str(tmp_path), force=True) as forced:
        assert not forced.stage_done("gen-data")


def test_marker_goes_stale_when_its_sections_change(tmp_path):
    with ExperimentContext(None, str(tmp_path)) as ctx:
        ctx.mark_done("gen-data")
        ctx.mark_done("phase2")
    with ExperimentContext(None, str(tmp_path), overrides={"labels": {"lambda": 2.0}}) as ctx:
        assert ctx.stage_done("gen-data")
        assert not ctx.stage_done("phase2")
    with ExperimentContext(None, str(tmp_path), seed=5) as ctx:
        assert not ctx.stage_done("gen-data")


def test_live_lock_is_refused(tmp_path):
    (tmp_path / ".lock").write_text(str(os.getpid()), encoding="utf-8")
    with pytest.raises(ExperimentLockedError):
        with ExperimentContext(None, str(tmp_path)):
            pass
    assert (tmp_path / ".lock").exists()


def test_stale_lock_is_replaced(tmp_path):
    # pid far above any default pid_max
    (tmp_path / ".lock").write_text("999999999", encoding="utf-8")
    with ExperimentContext(None, str(tmp_path)):
        assert (tmp_path / ".lock").read_text(encoding="utf-8") == str(os.getpid())
    assert not (tmp_path / ".lock").exists()


def test_lock_is_released_on_error(tmp_path):
    with pytest.raises(RuntimeError):
        with ExperimentContext(None, str(tmp_path)):
            raise RuntimeError("boom")
    assert not (tmp_path / ".lock").exists()


def test_saved_configuration_is_reused(tmp_path):
    config = tmp_path / "custom.yaml"
    config.write_text("seed: 17\nlabels:\n  lambda: 0.05\n", encoding="utf-8")
    root = tmp_path / "run"
    with ExperimentContext(str(config), str(root)):
        pass
    assert (root / "experiment.yaml").exists()
    ctx = ExperimentContext(None, str(root))
    assert ctx.config_manager.seed == 17
    assert ctx.config_manager.loss_config().lam == 0.05


def test_invalid_config_fails_before_touching_the_directory(tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("labels:\n  sigma: -1\n", encoding="utf-8")
    root = tmp_path / "run"
    with pytest.raises(ConfigError):
        ExperimentContext(str(config), str(root))
    assert not root.exists()


def test_dataset_dir_follows_data_path(tmp_path):
    ctx = ExperimentContext(None, str(tmp_path / "run"))
    assert ctx.generates_data
    assert ctx.dataset_dir == (tmp_path / "run").resolve() / "data"
    external = ExperimentContext(None, str(tmp_path / "run"), overrides={"data": {"path": str(tmp_path / "ext")}})
    assert not external.generates_data
    assert external.dataset_dir == tmp_path / "ext"
