"""
Experiment context shared by the CLI commands.

Resolves the experiment directory, loads and validates the configuration
before anything touches the filesystem, owns the directory lock and keeps
the per-stage idempotence markers.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from .config import ConfigManager, deep_merge, stage_sections
from .errors import ExperimentLockedError
from .paths import (
    DATA_DIR,
    EXPERIMENT_CONFIG,
    LOCK_FILE,
    STAGES_DIR,
    experiment_path,
    resolve_experiment_dir,
)

logger = logging.getLogger(__name__)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    except OSError:
        return False
    return True


class ExperimentContext:
    """Config, experiment root, lock and stage markers for one command run.

    Example:
        ```python
        with ExperimentContext(config_path, out, force=force) as ctx:
            if ctx.stage_done("gen-data"):
                return
            ...
            ctx.mark_done("gen-data", {"count": n})
        ```
    """

    def __init__(
        self,
        config_path: Optional[str] = None,
        out: Optional[str] = None,
        *,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        overrides: Optional[Dict[str, Any]] = None,
        force: bool = False,
    ):
        self.root = resolve_experiment_dir(out)
        saved = self.root / EXPERIMENT_CONFIG
        if config_path is None and saved.exists():
            config_path = str(saved)
            logger.debug("Using saved experiment configuration %s", saved)
        flags = {key: value for key, value in (("seed", seed), ("threads", threads)) if value is not None}
        merged = deep_merge(overrides or {}, flags)
        self.config_manager = ConfigManager(config_path, merged)
        self.config = self.config_manager.require_valid()
        self.force = force
        self._lock_path = self.root / LOCK_FILE
        self._locked = False
        logger.debug("ExperimentContext for %s with config %s", self.root, self.config_manager.source)

    # -- locking ------------------------------------------------------------

    def acquire(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
            except FileExistsError:
                try:
                    owner = int(self._lock_path.read_text(encoding="utf-8").strip() or 0)
                except (OSError, ValueError):
                    owner = 0
                if owner and _pid_alive(owner):
                    raise ExperimentLockedError(
                        f"{self.root} is locked by process {owner}; remove {self._lock_path} if it is stale"
                    ) from None
                logger.warning("Removing stale lock %s", self._lock_path)
                self._lock_path.unlink(missing_ok=True)
                continue
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(str(os.getpid()))
            self._locked = True
            return
        raise ExperimentLockedError(f"could not lock {self.root}")

    def release(self) -> None:
        if self._locked:
            self._lock_path.unlink(missing_ok=True)
            self._locked = False

    def __enter__(self) -> "ExperimentContext":
        self.acquire()
        self.config_manager.dump(self.root / EXPERIMENT_CONFIG)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.release()

    # -- paths --------------------------------------------------------------

    def path(self, *relative: str, ensure_parent: bool = False) -> Path:
        return experiment_path(self.root, *relative, ensure_parent=ensure_parent)

    @property
    def dataset_dir(self) -> Path:
        configured = self.config_manager.get("data.path")
        if configured:
            return Path(configured).expanduser()
        return self.root / DATA_DIR

    @property
    def generates_data(self) -> bool:
        return not self.config_manager.get("data.path")

    # -- stage markers ------------------------------------------------------

    def stage_hash(self, stage: str) -> str:
        return self.config_manager.config_hash(*stage_sections(stage))

    def _marker(self, stage: str) -> Path:
        return self.root / STAGES_DIR / f"{stage}.json"

    def read_marker(self, stage: str) -> Optional[Dict[str, Any]]:
        marker = self._marker(stage)
        if not marker.exists():
            return None
        try:
            return json.loads(marker.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            logger.warning("Ignoring unreadable stage marker %s", marker)
            return None

    def stage_done(self, stage: str) -> bool:
        """True when ``stage`` already ran with the current config (and no --force)."""
        if self.force:
            return False
        record = self.read_marker(stage)
        return bool(record) and record.get("config_hash") == self.stage_hash(stage)

    def mark_done(self, stage: str, summary: Optional[Dict[str, Any]] = None) -> Path:
        marker = self._marker(stage)
        marker.parent.mkdir(parents=True, exist_ok=True)
        body = {"stage": stage, "config_hash": self.stage_hash(stage), "summary": summary or {}}
        marker.write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return marker


__all__ = ["ExperimentContext"]
