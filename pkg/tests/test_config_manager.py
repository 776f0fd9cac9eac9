"""Tests for configuration loading, merging, validation and hashing."""

from __future__ import annotations

from pathlib import Path
import sys
import textwrap

import pytest

# Ensure the repository's src/ directory is importable without installation.
REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

from attention_age.core.config import ConfigManager, stage_sections  # noqa: E402
from attention_age.core.errors import ConfigError  # noqa: E402


def _write(tmp_path: Path, body: str) -> str:
    path = tmp_path / "experiment.yaml"
    path.write_text(textwrap.dedent(body).strip() + "\n", encoding="utf-8")
    return str(path)


def test_defaults_are_valid():
    cfg = ConfigManager()
    assert cfg.validate_config(), cfg.problems
    assert cfg.source == "default"
    assert cfg.num_ages == 240
    assert cfg.get("labels.soft_label_width") == 50
    assert cfg.get("labels.sigma") == 15.0
    assert cfg.get("data.split.n_val") == 500


def test_user_file_is_deep_merged(tmp_path):
    cfg = ConfigManager(_write(tmp_path, """
        labels:
          lambda: 0.05
        phase2:
          regions: [O]
    """))
    assert cfg.get("labels.lambda") == 0.05
    assert cfg.get("labels.sigma") == 15.0
    assert cfg.phase2_settings().regions == ("O",)
    assert cfg.phase2_settings().head == "expectation"


def test_overrides_win_and_none_is_ignored(tmp_path):
    cfg = ConfigManager(_write(tmp_path, "seed: 4"), {"seed": 9, "threads": None})
    assert cfg.seed == 9
    assert cfg.threads == 1
    variant = cfg.with_overrides({"labels": {"lambda": 5.0}})
    assert variant.seed == 9
    assert variant.loss_config().lam == 5.0
    assert cfg.loss_config().lam == 0.5


@pytest.mark.parametrize(
    "body,fragment",
    [
        ("labels:\n  lambda: -1", "labels.lambda"),
        ("labels:\n  sigma: 0", "labels.sigma"),
        ("phase2:\n  regions: [R1, X]", "phase2.regions"),
        ("phase2:\n  regions: []", "phase2.regions"),
        ("phase2:\n  head: median", "phase2.head"),
        ("phase1:\n  region1:\n    input_scale: 2.0", "input_scale"),
        ("phase1:\n  schedule: [[0, -1]]", "phase1.schedule"),
        ("phase2:\n  network:\n    kernel: 4", "kernel"),
        ("data:\n  split:\n    n_val: 2000\n    n_test: 1000", "nothing left to train on"),
        ("data:\n  generate:\n    region1_size: 40", "data.generate"),
        ("phase1:\n  normalize_maps: zscore", "phase1.normalize_maps"),
        ("phase1:\n  erased:\n    fill: blur", "phase1.erased.fill"),
        ("phase1:\n  erased:\n    margin: -2", "phase1.erased.margin"),
        ("phase1:\n  network:\n    downsample: 3", "phase1.network.downsample"),
        ("phase2:\n  network:\n    downsample: 1.5", "phase2.network.downsample"),
    ],
)
def test_invalid_values_are_reported(tmp_path, body, fragment):
    cfg = ConfigManager(_write(tmp_path, body))
    assert not cfg.validate_config()
    assert any(fragment in problem for problem in cfg.problems), cfg.problems
    with pytest.raises(ConfigError):
        cfg.require_valid()


def test_unknown_keys_are_warnings_only(tmp_path):
    cfg = ConfigManager(_write(tmp_path, """
        not_a_key: 1
        phase1:
          region1:
            colour: red
    """))
    assert cfg.validate_config()
    assert set(cfg.check_unknown_keys()) == {"Unknown key 'not_a_key'", "Unknown key 'phase1.region1.colour'"}


def test_missing_or_malformed_files_raise_config_error(tmp_path):
    with pytest.raises(ConfigError):
        ConfigManager(str(tmp_path / "absent.yaml")).load_config()
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(str(bad)).load_config()


def test_gen_spec_takes_seed_and_age_range(tmp_path):
    cfg = ConfigManager(_write(tmp_path, """
        seed: 12
        labels:
          num_ages: 120
    """))
    spec = cfg.gen_spec()
    assert spec.seed == 12
    assert spec.num_ages == 120
    assert spec.image_size == 64


def test_phase1_settings_follow_mode():
    cfg = ConfigManager()
    hand = cfg.phase1_settings("hand")
    assert hand.pool == "avg"
    assert hand.input_size == 32
    assert cfg.phase1_settings("region1").input_size == 64
    with pytest.raises(ValueError):
        cfg.phase1_settings("region3")


def test_stage_hash_ignores_unrelated_sections(tmp_path):
    base = ConfigManager()
    changed = ConfigManager(_write(tmp_path, "labels:\n  lambda: 1.0"))
    for stage in ("gen-data", "phase1_region1", "phase1_erased", "localize"):
        assert base.config_hash(*stage_sections(stage)) == changed.config_hash(*stage_sections(stage))
    assert base.config_hash(*stage_sections("phase2")) != changed.config_hash(*stage_sections("phase2"))


def test_erased_classifier_depends_on_region1_localization(tmp_path):
    base = ConfigManager()
    changed = ConfigManager(_write(tmp_path, "phase1:\n  region1:\n    tau: 40"))
    assert base.config_hash(*stage_sections("phase1_hand")) == changed.config_hash(*stage_sections("phase1_hand"))
    assert base.config_hash(*stage_sections("phase1_erased")) != changed.config_hash(*stage_sections("phase1_erased"))


def test_dump_writes_merged_yaml(tmp_path):
    cfg = ConfigManager(_write(tmp_path, "seed: 21"))
    text = cfg.dump(tmp_path / "saved.yaml")
    assert "seed: 21" in text
    assert ConfigManager(str(tmp_path / "saved.yaml")).seed == 21


def test_localization_defaults_use_deviation_maps_and_local_erase():
    cfg = ConfigManager()
    region1 = cfg.phase1_settings("region1")
    assert region1.normalize_maps == "deviation"
    assert region1.downsample == 1
    assert len(cfg.get("phase1.schedule")) == 3
    policy = cfg.erase_policy()
    assert (policy.fill, policy.margin) == ("local", 2)


def test_erase_settings_change_the_erased_stage_only(tmp_path):
    base = ConfigManager()
    changed = ConfigManager(_write(tmp_path, """
        phase1:
          erased:
            fill: range
    """))
    erased = stage_sections("phase1_erased")
    region1 = stage_sections("phase1_region1")
    assert base.config_hash(*erased) != changed.config_hash(*erased)
    assert base.config_hash(*region1) == changed.config_hash(*region1)
