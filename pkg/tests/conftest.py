"""Shared fixtures: a tiny experiment configuration that trains in seconds."""

from __future__ import annotations

from pathlib import Path
import sys
import textwrap

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

SMOKE_CONFIG = textwrap.dedent("""
    seed: 3
    threads: 1
    data:
      generate:
        image_size: 32
        n: 40
        object_extent: 0.8
        region1_size: 6
        region2_size: 5
        max_shift: 2
      split:
        n_val: 8
        n_test: 8
    labels:
      num_ages: 60
      soft_label_width: 10
      sigma: 5.0
      lambda: 0.5
    phase1:
      batch_size: 8
      epochs: 2
      schedule: [[0, 0.003]]
      network:
        channels: [4, 8]
    phase2:
      crop_size: 8
      gender_units: 4
      hidden_units: 8
      batch_size: 8
      epochs: 2
      schedule: [[0, 0.003]]
      network:
        channels: [4]
""").strip() + "\n"


@pytest.fixture
def smoke_config(tmp_path, monkeypatch) -> str:
    """Path to the tiny experiment YAML; the data dir is isolated under tmp_path."""
    monkeypatch.setenv("ATTENTION_AGE_DATA_DIR", str(tmp_path / "data-root"))
    path = tmp_path / "smoke.yaml"
    path.write_text(SMOKE_CONFIG, encoding="utf-8")
    return str(path)
