"""Tests for experiment root resolution helpers."""

from __future__ import annotations

import os
import sys
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import mock

# Ensure the repository's src/ directory is importable without installation.
REPO_ROOT = Path(__file__).resolve().parents[1]
SRC_PATH = REPO_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))

from attention_age.core.paths import (  # noqa: E402
    experiment_path,
    get_data_dir,
    get_system_path,
    resolve_experiment_dir,
)


class DataDirEnvironmentOverrideTests(unittest.TestCase):
    """Verify that ATTENTION_AGE_DATA_DIR overrides the output root."""

    def test_get_data_dir_honors_environment_override(self) -> None:
        with TemporaryDirectory() as tmp:
            override = Path(tmp) / "custom-location"
            with mock.patch.dict(os.environ, {"ATTENTION_AGE_DATA_DIR": str(override)}, clear=False):
                data_dir = get_data_dir()
        self.assertEqual(data_dir, override.resolve())

    def test_default_experiment_lives_under_data_dir(self) -> None:
        with TemporaryDirectory() as tmp:
            with mock.patch.dict(os.environ, {"ATTENTION_AGE_DATA_DIR": tmp}, clear=False):
                root = resolve_experiment_dir(ensure_exists=True)
                self.assertTrue(root.is_dir(), "experiment root was not created")
        self.assertEqual(root, Path(tmp).resolve() / "experiments" / "default")

    def test_explicit_out_wins_over_environment(self) -> None:
        with TemporaryDirectory() as tmp:
            with mock.patch.dict(os.environ, {"ATTENTION_AGE_DATA_DIR": str(Path(tmp) / "env")}, clear=False):
                root = resolve_experiment_dir(str(Path(tmp) / "run"))
        self.assertEqual(root, (Path(tmp) / "run").resolve())


class ExperimentPathTests(unittest.TestCase):
    def test_experiment_path_creates_parent_on_request(self) -> None:
        with TemporaryDirectory() as tmp:
            target = experiment_path(Path(tmp), "crops", "R1", "s00001.pgm", ensure_parent=True)
            self.assertTrue(target.parent.is_dir())
            self.assertFalse(target.exists())

    def test_bundled_default_config_exists(self) -> None:
        self.assertTrue(get_system_path("config", "default.yaml").is_file())


if __name__ == "__main__":
    unittest.main()
