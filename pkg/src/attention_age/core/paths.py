"""Utilities for locating experiment roots and built-in system assets."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

_ENV_VAR = "ATTENTION_AGE_DATA_DIR"
_DEFAULT_DIRNAME = ".attention_age"
_PACKAGE_ROOT = Path(__file__).resolve().parents[1]
_SYSTEM_DIR = _PACKAGE_ROOT / "system"

# Sub-directories of an experiment root.
CHECKPOINTS_DIR = "checkpoints"
CROPS_DIR = "crops"
DATA_DIR = "data"
HEATMAPS_DIR = "heatmaps"
REPORTS_DIR = "reports"
STAGES_DIR = "stages"
SWEEPS_DIR = "sweeps"

LOCALIZATION_CSV = "localization.csv"
SKIP_LIST_CSV = "skip_list.csv"
EXPERIMENT_CONFIG = "experiment.yaml"
LOCK_FILE = ".lock"


def get_data_dir() -> Path:
    """Return the default output root.

    Honors the ATTENTION_AGE_DATA_DIR environment variable; otherwise defaults
    to ~/.attention_age on the current platform.
    """
    override = os.getenv(_ENV_VAR)
    if override is not None and override.strip():
        return Path(override.strip()).expanduser().resolve()
    return (Path.home() / _DEFAULT_DIRNAME).resolve()


def resolve_experiment_dir(out: Optional[str] = None, *, ensure_exists: bool = False) -> Path:
    """Resolve the experiment root for a command.

    Absolute ``--out`` values are used as-is, relative ones are taken relative
    to the working directory, and a missing value falls back to
    ``<data dir>/experiments/default``.
    """
    if out:
        root = Path(out).expanduser().resolve()
    else:
        root = get_data_dir() / "experiments" / "default"
    if ensure_exists:
        root.mkdir(parents=True, exist_ok=True)
    return root


def experiment_path(root: Path, *relative: str, ensure_parent: bool = False) -> Path:
    """Return a path inside an experiment root."""
    full_path = Path(root).joinpath(*relative)
    if ensure_parent:
        full_path.parent.mkdir(parents=True, exist_ok=True)
    return full_path


def get_system_dir() -> Path:
    """Return the package's bundled system directory."""
    return _SYSTEM_DIR


def get_system_path(*relative: str) -> Path:
    """Return a path inside the package's system directory."""
    return _SYSTEM_DIR.joinpath(*relative)


__all__ = [
    "get_data_dir",
    "resolve_experiment_dir",
    "experiment_path",
    "get_system_dir",
    "get_system_path",
]
