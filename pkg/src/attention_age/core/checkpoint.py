"""Phase-tagged checkpoints on top of the raw network container."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..nn.network import Network
from ..nn.optim import OptimizerState
from ..nn.serialization import load_checkpoint, read_header, save_checkpoint
from .errors import CheckpointMismatchError

logger = logging.getLogger(__name__)

PHASES = ("phase1_region1", "phase1_hand", "phase1_erased", "phase2")


@dataclass
class Checkpoint:
    """A trained network plus where it came from.

    ``config_hash`` identifies the configuration sections that produced it;
    ``history`` holds one dict per epoch (loss, validation MAE, lr).
    """

    phase: str
    network: Network
    config_hash: str
    epoch: int = 0
    optimizer: Optional[OptimizerState] = None
    history: List[Dict[str, float]] = field(default_factory=list)
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase '{self.phase}'; expected one of {', '.join(PHASES)}")

    def metadata(self) -> Dict[str, Any]:
        return {
            "phase": self.phase,
            "config_hash": self.config_hash,
            "epoch": self.epoch,
            "history": self.history,
            "extra": self.extra,
        }

    def save(self, path: Path) -> Path:
        path = save_checkpoint(Path(path), self.network, self.optimizer, self.metadata())
        logger.info("Saved %s checkpoint (epoch %d) to %s", self.phase, self.epoch, path)
        return path

    @classmethod
    def load(
        cls,
        path: Path,
        *,
        phase: Optional[str] = None,
        config_hash: Optional[str] = None,
    ) -> "Checkpoint":
        """Load ``path``, refusing it if the phase tag or config hash differs."""
        path = Path(path)
        if not path.exists():
            raise CheckpointMismatchError(f"checkpoint not found: {path}")
        check_compatible(read_header(path).get("metadata") or {}, path, phase, config_hash)
        network, optimizer, metadata = load_checkpoint(path)
        return cls(
            phase=str(metadata["phase"]),
            network=network,
            config_hash=str(metadata.get("config_hash", "")),
            epoch=int(metadata.get("epoch", 0)),
            optimizer=optimizer,
            history=list(metadata.get("history") or []),
            extra=dict(metadata.get("extra") or {}),
        )


def check_compatible(
    metadata: Dict[str, Any],
    path: Path,
    phase: Optional[str] = None,
    config_hash: Optional[str] = None,
) -> None:
    found_phase = metadata.get("phase")
    if phase is not None and found_phase != phase:
        raise CheckpointMismatchError(f"{path} is a {found_phase} checkpoint, expected {phase}")
    if config_hash is not None and metadata.get("config_hash") != config_hash:
        raise CheckpointMismatchError(
            f"{path} was trained with a different configuration; rerun the stage with --force"
        )


__all__ = ["Checkpoint", "PHASES", "check_compatible"]
