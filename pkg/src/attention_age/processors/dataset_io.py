"""
Dataset directory reader and writer.

Layout::

    <dir>/images/<id>.pgm    8-bit binary PGM (P5)
    <dir>/metadata.csv       id,age,gender
    <dir>/boxes.csv          id,kind,x0,y0,x1,y1   (optional)
    <dir>/manifest.json      generation settings, oracle MAEs, counts
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from ..core.errors import DatasetFormatError
from .attention import RegionBox, RegionKind
from .synth import SampleRecord, from_levels

logger = logging.getLogger(__name__)

IMAGES_DIR = "images"
METADATA_CSV = "metadata.csv"
BOXES_CSV = "boxes.csv"
MANIFEST_JSON = "manifest.json"

DATASET_FORMAT = "attention-age-dataset"
METADATA_FIELDS = ["id", "age", "gender"]
BOX_FIELDS = ["id", "kind", "x0", "y0", "x1", "y1"]


def write_pgm(path: Path, image: np.ndarray) -> Path:
    """Save a float image in ``[0, 1]`` (or uint8 levels) as binary PGM."""
    levels = image if image.dtype == np.uint8 else np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(levels).save(path, format="PPM")
    return path


def read_pgm(path: Path) -> np.ndarray:
    """Load a greyscale image as floats in ``[0, 1]``."""
    with Image.open(path) as img:
        return from_levels(np.asarray(img.convert("L"), dtype=np.uint8))


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def store(
    records: Sequence[SampleRecord],
    directory: Path,
    manifest: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``records`` (and an optional manifest body) under ``directory``."""
    directory = Path(directory)
    (directory / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    for record in records:
        write_pgm(directory / IMAGES_DIR / f"{record.id}.pgm", record.pixels())

    _write_csv(
        directory / METADATA_CSV,
        METADATA_FIELDS,
        [(record.id, record.age, record.gender) for record in records],
    )
    box_rows = [
        (record.id, box.kind.value, box.x0, box.y0, box.x1, box.y1)
        for record in records
        for box in record.truth_boxes
    ]
    if box_rows:
        _write_csv(directory / BOXES_CSV, BOX_FIELDS, box_rows)

    body = {"format": DATASET_FORMAT, "version": 1, "count": len(records)}
    body.update(manifest or {})
    (directory / MANIFEST_JSON).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Stored %d records in %s", len(records), directory)
    return directory


def read_manifest(directory: Path) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST_JSON
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON: {exc}", path=str(path)) from exc


def _read_rows(path: Path, expected: Sequence[str]):
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(expected):
            raise DatasetFormatError(f"expected header {','.join(expected)}", path=str(path), line=1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise DatasetFormatError(
                    f"expected {len(expected)} fields, got {len(row)}", path=str(path), line=line
                )
            yield line, [value.strip() for value in row]


def _parse_int(value: str, name: str, path: Path, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise DatasetFormatError(f"{name} '{value}' is not an integer", path=str(path), line=line) from None


def load(directory: Path, num_ages: Optional[int] = None) -> List[SampleRecord]:
    """Read a dataset directory; ``num_ages`` defaults to the manifest's value or 240."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    limit = int(num_ages or manifest.get("gen_spec", {}).get("num_ages", 240))

    meta_path = directory / METADATA_CSV
    if not meta_path.exists():
        raise DatasetFormatError("metadata file not found", path=str(meta_path))

    entries = []
    seen = set()
    for line, (sample_id, age_text, gender_text) in _read_rows(meta_path, METADATA_FIELDS):
        if not sample_id:
            raise DatasetFormatError("empty id", path=str(meta_path), line=line)
        if sample_id in seen:
            raise DatasetFormatError(f"duplicate id '{sample_id}'", path=str(meta_path), line=line)
        age = _parse_int(age_text, "age", meta_path, line)
        if not 1 <= age <= limit:
            raise DatasetFormatError(f"age {age} outside 1..{limit}", path=str(meta_path), line=line)
        gender = _parse_int(gender_text, "gender", meta_path, line)
        if gender not in (-1, 1):
            raise DatasetFormatError(f"gender {gender} must be -1 or 1", path=str(meta_path), line=line)
        seen.add(sample_id)
        entries.append((sample_id, age, gender))

    boxes: Dict[str, List[RegionBox]] = {}
    box_path = directory / BOXES_CSV
    if box_path.exists():
        for line, (sample_id, kind, *coords) in _read_rows(box_path, BOX_FIELDS):
            if sample_id not in seen:
                raise DatasetFormatError(f"box for unknown id '{sample_id}'", path=str(box_path), line=line)
            values = [_parse_int(value, "coordinate", box_path, line) for value in coords]
            try:
                box = RegionBox(RegionKind.parse(kind), *values)
            except ValueError as exc:
                raise DatasetFormatError(str(exc), path=str(box_path), line=line) from None
            boxes.setdefault(sample_id, []).append(box)

    records = []
    for sample_id, age, gender in entries:
        image_path = directory / IMAGES_DIR / f"{sample_id}.pgm"
        if not image_path.exists():
            raise DatasetFormatError(f"missing image for id '{sample_id}'", path=str(image_path))
        image = read_pgm(image_path)
        height, width = image.shape
        for box in boxes.get(sample_id, []):
            if not box.fits(width, height):
                raise DatasetFormatError(
                    f"box {box.as_tuple()} of '{sample_id}' exceeds image {width}x{height}", path=str(box_path)
                )
        records.append(SampleRecord(sample_id, image, age, gender, boxes.get(sample_id, [])))
    logger.info("Loaded %d records from %s", len(records), directory)
    return records


__all__ = ["store", "load", "read_manifest", "write_pgm", "read_pgm"]
