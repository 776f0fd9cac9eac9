"""attention-age: attention-guided region localization and age-distribution regression.

The functions below mirror the CLI commands one to one::

    import attention_age as aa

    aa.gen_data(out="runs/demo")
    aa.train_phase1(out="runs/demo")
    aa.localize(out="runs/demo")
    aa.train_phase2(out="runs/demo")
    report = aa.evaluate(out="runs/demo", split="test")
"""

from __future__ import annotations

import os

# Single-threaded BLAS keeps float results identical from run to run; must
# be set before numpy is first imported.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import logging
from importlib.metadata import PackageNotFoundError, version as _get_version
from typing import Any, Dict, Optional

# Version from package metadata (defined in pyproject.toml)
try:
    __version__ = _get_version("attention_age")
except PackageNotFoundError:
    __version__ = "0.0.0.dev"  # Fallback for editable installs without metadata

from .commands import evaluate as _evaluate_cmd
from .commands import gen_data as _gen_data_cmd
from .commands import localize as _localize_cmd
from .commands import report as _report_cmd
from .commands import sweep as _sweep_cmd
from .commands import train_phase1 as _phase1_cmd
from .commands import train_phase2 as _phase2_cmd

logger = logging.getLogger(__name__)


def gen_data(config_path: Optional[str] = None, out: Optional[str] = None, **kwargs: Any) -> Dict[str, Any]:
    """Generate the synthetic dataset; see :func:`attention_age.commands.gen_data.run`."""
    return _gen_data_cmd.run(config_path, out, **kwargs)


def train_phase1(config_path: Optional[str] = None, out: Optional[str] = None, *, mode: str = "all", **kwargs: Any) -> Dict[str, Any]:
    """Train Phase I classifiers (``region1``, ``hand``, ``erased`` or ``all``)."""
    return _phase1_cmd.run(config_path, out, mode=mode, **kwargs)


def localize(config_path: Optional[str] = None, out: Optional[str] = None, **kwargs: Any) -> Dict[str, Any]:
    """Localize regions and write crops for every image."""
    return _localize_cmd.run(config_path, out, **kwargs)


def train_phase2(config_path: Optional[str] = None, out: Optional[str] = None, **kwargs: Any) -> Dict[str, Any]:
    """Train the Phase II regressor on the cached crops."""
    return _phase2_cmd.run(config_path, out, **kwargs)


def evaluate(config_path: Optional[str] = None, out: Optional[str] = None, *, split: str = "test", **kwargs: Any) -> Dict[str, Any]:
    """Evaluate the Phase II checkpoint on ``split`` and write its report."""
    return _evaluate_cmd.run(config_path, out, split=split, **kwargs)


def sweep(
    config_path: Optional[str] = None,
    out: Optional[str] = None,
    *,
    param: str,
    grid: str,
    **kwargs: Any,
) -> Dict[str, Any]:
    """Sweep ``lambda``, ``tau``, ``regions`` or ``head`` over ``grid``."""
    return _sweep_cmd.run(config_path, out, param=param, grid=grid, **kwargs)


def report(path: Optional[str] = None) -> Dict[str, Any]:
    """Summarize a dataset directory or experiment root."""
    return _report_cmd.run(path)


__all__ = [
    "__version__",
    "gen_data",
    "train_phase1",
    "localize",
    "train_phase2",
    "evaluate",
    "sweep",
    "report",
]
