"""Checkpoint container.

A checkpoint is a zip archive with fixed timestamps so identical contents
produce identical bytes:

``header.json``
    ``{"format": "attention-age-checkpoint", "version": 1, "network": <NetworkSpec>,
    "optimizer": <scalars or null>, "metadata": {...}, "blobs": [{"name", "shape", "file"}]}``
``blobs/<n>.f32``
    raw little-endian float32 values in row-major order, one file per
    parameter (``param/<name>``) and per Adam moment (``adam_m/<name>``,
    ``adam_v/<name>``).
"""

from __future__ import annotations

import json
import logging
import zipfile
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..core.errors import CheckpointMismatchError
from .network import Network, NetworkSpec
from .optim import OptimizerState

logger = logging.getLogger(__name__)

FORMAT_TAG = "attention-age-checkpoint"
FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
_BLOB_DTYPE = np.dtype("<f4")


def _write_member(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def save_checkpoint(
    path: Path,
    network: Network,
    optimizer: Optional[OptimizerState] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``network`` (and optionally the optimizer state) to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blobs = []
    arrays = []
    groups = [("param", network.params)]
    if optimizer is not None:
        groups += [("adam_m", optimizer.m), ("adam_v", optimizer.v)]
    for group, values in groups:
        for name, value in values.items():
            file_name = f"blobs/{len(blobs):04d}.f32"
            blobs.append({"name": f"{group}/{name}", "shape": list(value.shape), "file": file_name})
            arrays.append(np.ascontiguousarray(value, dtype=_BLOB_DTYPE))

    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "network": network.spec.to_dict(),
        "optimizer": optimizer.scalars() if optimizer is not None else None,
        "metadata": metadata or {},
        "blobs": blobs,
    }
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp_path, "w") as archive:
        _write_member(archive, "header.json", json.dumps(header, indent=2, sort_keys=True).encode("utf-8"))
        for blob, array in zip(blobs, arrays):
            _write_member(archive, blob["file"], array.tobytes(order="C"))
    tmp_path.replace(path)
    logger.debug("Wrote checkpoint %s (%d blobs)", path, len(blobs))
    return path


def read_header(path: Path) -> Dict[str, Any]:
    """Return the parsed header of a checkpoint without loading blobs."""
    with zipfile.ZipFile(path, "r") as archive:
        header = json.loads(archive.read("header.json").decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise CheckpointMismatchError(f"{path} is not an attention-age checkpoint")
    if int(header.get("version", 0)) != FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"{path} has checkpoint version {header.get('version')}, expected {FORMAT_VERSION}"
        )
    return header


def load_checkpoint(path: Path) -> Tuple[Network, Optional[OptimizerState], Dict[str, Any]]:
    """Load ``(network, optimizer state or None, metadata)`` from ``path``."""
    path = Path(path)
    header = read_header(path)
    groups: Dict[str, "OrderedDict[str, np.ndarray]"] = {
        "param": OrderedDict(),
        "adam_m": OrderedDict(),
        "adam_v": OrderedDict(),
    }
    with zipfile.ZipFile(path, "r") as archive:
        for blob in header["blobs"]:
            raw = archive.read(blob["file"])
            array = np.frombuffer(raw, dtype=_BLOB_DTYPE).reshape(blob["shape"]).astype(np.float32)
            group, name = blob["name"].split("/", 1)
            groups[group][name] = array

    spec = NetworkSpec.from_dict(header["network"])
    network = Network(spec, groups["param"])
    optimizer = None
    if header.get("optimizer") is not None:
        scalars = header["optimizer"]
        optimizer = OptimizerState(
            schedule=[tuple(item) for item in scalars["schedule"]],
            lr=float(scalars["lr"]),
            step=int(scalars["step"]),
            beta1=float(scalars["beta1"]),
            beta2=float(scalars["beta2"]),
            eps=float(scalars["eps"]),
            m=dict(groups["adam_m"]),
            v=dict(groups["adam_v"]),
        )
    return network, optimizer, dict(header.get("metadata") or {})


__all__ = ["save_checkpoint", "load_checkpoint", "read_header", "FORMAT_TAG", "FORMAT_VERSION"]
