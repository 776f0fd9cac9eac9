"""Report command: summarize a dataset or an experiment directory.

Read-only; no lock is taken and nothing is written.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from ..core.paths import DATA_DIR, EXPERIMENT_CONFIG, REPORTS_DIR, STAGES_DIR, SWEEPS_DIR, resolve_experiment_dir
from ..processors.dataset_io import MANIFEST_JSON, read_manifest

logger = logging.getLogger(__name__)


def _read_json(path: Path) -> Optional[Dict[str, Any]]:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        logger.warning("Ignoring unreadable %s (%s)", path, exc)
        return None


def _dataset_summary(directory: Path) -> Dict[str, Any]:
    manifest = read_manifest(directory)
    return {
        "path": str(directory),
        "count": manifest.get("count"),
        "gen_spec": manifest.get("gen_spec"),
        "oracle_mae": manifest.get("oracle_mae") or {},
    }


def _dataset_dir(root: Path) -> Path:
    config_file = root / EXPERIMENT_CONFIG
    if config_file.exists():
        try:
            data = yaml.safe_load(config_file.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError:
            data = {}
        configured = (data.get("data") or {}).get("path")
        if configured:
            return Path(configured).expanduser()
    return root / DATA_DIR


def run(path: Optional[str] = None) -> Dict[str, Any]:
    """Collect manifest, stage markers, evaluation reports and sweep tables.

    ``path`` may be an experiment root or a dataset directory; it defaults
    to the experiment root under ``ATTENTION_AGE_DATA_DIR``.
    """
    root = Path(path).expanduser() if path else resolve_experiment_dir()
    if not root.exists():
        raise FileNotFoundError(f"{root} does not exist")

    if (root / MANIFEST_JSON).exists():
        return {"kind": "dataset", "dataset": _dataset_summary(root)}

    result: Dict[str, Any] = {"kind": "experiment", "root": str(root)}
    dataset = _dataset_dir(root)
    if (dataset / MANIFEST_JSON).exists():
        result["dataset"] = _dataset_summary(dataset)

    stages: List[Dict[str, Any]] = []
    for marker in sorted((root / STAGES_DIR).glob("*.json")):
        body = _read_json(marker)
        if body:
            stages.append({"stage": body.get("stage", marker.stem), "config_hash": str(body.get("config_hash", ""))[:12]})
    result["stages"] = stages

    reports: Dict[str, Any] = {}
    for report_file in sorted((root / REPORTS_DIR).glob("*/report.json")):
        body = _read_json(report_file)
        if body:
            reports[report_file.parent.name] = body
    result["reports"] = reports

    sweeps: Dict[str, Any] = {}
    for sweep_file in sorted((root / SWEEPS_DIR).glob("*.json")):
        body = _read_json(sweep_file)
        if body:
            sweeps[sweep_file.stem] = body
    result["sweeps"] = sweeps
    if not (stages or reports or sweeps or "dataset" in result):
        raise FileNotFoundError(f"{root} holds neither a dataset nor experiment results")
    return result
