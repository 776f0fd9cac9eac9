"""
Region extraction with the trained Phase I classifiers.

For every image the Region1 classifier yields the primary box, the Hand
classifier (downscaled input, GAP) the object box, and the erased classifier
run on the image with Region1 replaced by noise yields the Region2 box.
Crops of every kind are written under ``crops/<code>/<id>.pgm``:

* ``O``  the whole image
* ``H``, ``R1``, ``R2``  the localized boxes
* ``E``  the whole image with Region1 erased

Images where a threshold mask comes out empty are recorded in the skip list
and fall back to the full-image box.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DatasetFormatError, NoRegionFound
from ..core.paths import CROPS_DIR, HEATMAPS_DIR, LOCALIZATION_CSV, SKIP_LIST_CSV
from ..nn.network import Network
from .attention import (
    ErasePolicy,
    LocalizationPolicy,
    RegionBox,
    RegionKind,
    attention_for,
    crop,
    localize,
    mask_to_box,
    resize_image,
    threshold_mask,
    write_heatmap,
)
from .dataset_io import read_pgm, write_pgm
from .metrics import ap50, miou
from .synth import SampleRecord

logger = logging.getLogger(__name__)

LOCALIZATION_FIELDS = ["image_id", "kind", "x0", "y0", "x1", "y1", "tau", "score", "fallback"]
SKIP_FIELDS = ["image_id", "kind", "tau", "reason"]

# Phase I mode that localizes each region kind.
MODE_FOR_KIND = {
    RegionKind.REGION1: "region1",
    RegionKind.HAND: "hand",
    RegionKind.REGION2: "erased",
}


@dataclass(frozen=True)
class LocalizationRecord:
    image_id: str
    box: RegionBox
    tau: float
    score: float
    fallback: bool = False

    @property
    def kind(self) -> RegionKind:
        return self.box.kind


@dataclass(frozen=True)
class SkipEntry:
    image_id: str
    kind: RegionKind
    tau: float
    reason: str


@dataclass
class ImageRegions:
    """Everything extracted from one image."""

    image_id: str
    records: List[LocalizationRecord] = field(default_factory=list)
    skipped: List[SkipEntry] = field(default_factory=list)
    crops: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    heatmaps: Dict[RegionKind, object] = field(default_factory=dict, repr=False)


@dataclass
class ExtractionResult:
    records: List[LocalizationRecord]
    skipped: List[SkipEntry]

    def boxes(self, kind: RegionKind) -> Dict[str, RegionBox]:
        return {r.image_id: r.box for r in self.records if r.kind == kind}

    def counts(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for r in self.records:
            out[r.kind.code] = out.get(r.kind.code, 0) + 1
        return out


# ---------------------------------------------------------------------------
# Single localizations
# ---------------------------------------------------------------------------

def localize_or_fallback(
    net: Network,
    image: np.ndarray,
    kind: RegionKind,
    policy: LocalizationPolicy,
    image_id: str,
) -> Tuple[LocalizationRecord, Optional[SkipEntry], object]:
    """Localize ``kind``; an empty mask gives the full-image box plus a skip entry."""
    try:
        found = localize(net, image, kind, policy, image_id=image_id)
    except NoRegionFound as exc:
        height, width = np.asarray(image).shape
        logger.warning("Skipping %s for %s: %s", kind.value, image_id, exc)
        record = LocalizationRecord(image_id, RegionBox.full(kind, width, height), policy.tau, 0.0, fallback=True)
        return record, SkipEntry(image_id, kind, policy.tau, str(exc)), None
    return LocalizationRecord(image_id, found.box, policy.tau, found.score), None, found.attention


def localize_boxes(
    net: Network,
    records: Sequence[SampleRecord],
    kind: RegionKind,
    policy: LocalizationPolicy,
    *,
    workers: int = 1,
) -> Tuple[Dict[str, RegionBox], List[SkipEntry]]:
    """Boxes of one kind for many images, keyed by image id."""

    def one(record: SampleRecord):
        found, skip, _ = localize_or_fallback(net, record.image, kind, policy, record.id)
        return found, skip

    results = _map(one, records, workers)
    boxes = {found.image_id: found.box for found, _ in results}
    skipped = [skip for _, skip in results if skip is not None]
    return boxes, skipped


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

class RegionExtractor:
    """Run the Phase I classifiers over a dataset and write crops.

    Args:
        networks: Phase I networks keyed by mode (``region1``, ``hand``,
            ``erased``); missing modes simply produce no boxes of that kind.
        policies: Localization policy per mode.
        crop_size: Side of the square crops.
        seed: Base seed for the per-image erase noise.
        erase: How Region1 is filled before the erased classifier runs.
    """

    def __init__(
        self,
        networks: Mapping[str, Network],
        policies: Mapping[str, LocalizationPolicy],
        crop_size: int,
        seed: int,
        erase: ErasePolicy = ErasePolicy(),
    ) -> None:
        if "region1" not in networks:
            raise ValueError("region extraction needs the region1 classifier")
        self.networks = dict(networks)
        self.policies = dict(policies)
        self.crop_size = int(crop_size)
        self.seed = int(seed)
        self.erase = erase

    def available_codes(self) -> List[str]:
        codes = ["O", "R1", "E"]
        if "hand" in self.networks:
            codes.insert(1, "H")
        if "erased" in self.networks:
            codes.append("R2")
        return codes

    def extract_one(self, record: SampleRecord, keep_maps: bool = False) -> ImageRegions:
        image = record.image
        out = ImageRegions(record.id)

        def run(mode: str, source: np.ndarray, kind: RegionKind) -> LocalizationRecord:
            found, skip, heat = localize_or_fallback(
                self.networks[mode], source, kind, self.policies[mode], record.id
            )
            out.records.append(found)
            if skip is not None:
                out.skipped.append(skip)
            if keep_maps and heat is not None:
                out.heatmaps[kind] = heat
            return found

        out.crops["O"] = resize_image(image, self.crop_size)
        if "hand" in self.networks:
            hand = run("hand", image, RegionKind.HAND)
            out.crops["H"] = crop(image, hand.box, self.crop_size)

        primary = run("region1", image, RegionKind.REGION1)
        out.crops["R1"] = crop(image, primary.box, self.crop_size)
        if primary.fallback:
            erased = image
        else:
            erased = self.erase.apply(image, primary.box, self.seed, record.id)
        out.crops["E"] = resize_image(erased, self.crop_size)

        if "erased" in self.networks:
            if primary.fallback:
                tau = self.policies["erased"].tau
                height, width = image.shape
                out.records.append(
                    LocalizationRecord(record.id, RegionBox.full(RegionKind.REGION2, width, height), tau, 0.0, True)
                )
                out.skipped.append(SkipEntry(record.id, RegionKind.REGION2, tau, "no Region1 box to erase"))
                secondary_box = out.records[-1].box
            else:
                secondary_box = run("erased", erased, RegionKind.REGION2).box
            out.crops["R2"] = crop(image, secondary_box, self.crop_size)
        return out

    def extract(
        self,
        records: Sequence[SampleRecord],
        root: Path,
        *,
        dump_maps: bool = False,
        workers: int = 1,
    ) -> ExtractionResult:
        """Extract every image and write crops, ``localization.csv`` and ``skip_list.csv`` under ``root``."""
        root = Path(root)
        logger.info(
            "Extracting regions %s for %d images (crop %dpx, %d worker(s))",
            "+".join(self.available_codes()), len(records), self.crop_size, workers,
        )
        results = _map(lambda record: self.extract_one(record, keep_maps=dump_maps), records, workers)

        all_records: List[LocalizationRecord] = []
        skipped: List[SkipEntry] = []
        for item in results:
            for code, grid in item.crops.items():
                write_pgm(root / CROPS_DIR / code / f"{item.image_id}.pgm", grid)
            for kind, heat in item.heatmaps.items():
                write_heatmap(root / HEATMAPS_DIR / kind.code / f"{item.image_id}.pfm", heat)
            all_records.extend(item.records)
            skipped.extend(item.skipped)

        write_localization(root / LOCALIZATION_CSV, all_records)
        write_skip_list(root / SKIP_LIST_CSV, skipped)
        if skipped:
            logger.warning("%d localization(s) fell back to the full image; see %s", len(skipped), SKIP_LIST_CSV)
        return ExtractionResult(all_records, skipped)


def extract_regions(
    networks: Mapping[str, Network],
    records: Sequence[SampleRecord],
    policies: Mapping[str, LocalizationPolicy],
    root: Path,
    *,
    crop_size: int,
    seed: int,
    erase: ErasePolicy = ErasePolicy(),
    dump_maps: bool = False,
    workers: int = 1,
) -> ExtractionResult:
    extractor = RegionExtractor(networks, policies, crop_size, seed, erase)
    return extractor.extract(records, root, dump_maps=dump_maps, workers=workers)


# ---------------------------------------------------------------------------
# Threshold sweeps
# ---------------------------------------------------------------------------

def localization_at_taus(
    net: Network,
    records: Sequence[SampleRecord],
    kind: RegionKind,
    policy: LocalizationPolicy,
    taus: Sequence[float],
    *,
    erase_boxes: Optional[Mapping[str, RegionBox]] = None,
    seed: int = 0,
    erase: ErasePolicy = ErasePolicy(),
    workers: int = 1,
) -> Dict[str, List[float]]:
    """mIoU and AP50 against the truth boxes at each threshold.

    Heat maps are computed once per image; only thresholding repeats. An
    empty mask counts as the full-image box, as during extraction.
    """
    usable = [r for r in records if r.box(kind) is not None]
    if not usable:
        raise ValueError(f"no truth boxes of kind {kind.value}")

    def maps(record: SampleRecord):
        image = record.image
        if erase_boxes is not None:
            image = erase.apply(image, erase_boxes[record.id], seed, record.id)
        heat, _ = attention_for(net, image, policy)
        return heat

    heats = _map(maps, usable, workers)
    truths = [r.box(kind) for r in usable]
    result: Dict[str, List[float]] = {"miou": [], "ap50": []}
    for tau in taus:
        preds = []
        for record, heat in zip(usable, heats):
            try:
                preds.append(mask_to_box(threshold_mask(heat, tau), kind, record.id))
            except NoRegionFound:
                height, width = record.image.shape
                preds.append(RegionBox.full(kind, width, height))
        result["miou"].append(miou(preds, truths))
        result["ap50"].append(ap50(preds, truths))
        logger.debug("%s tau=%g: mIoU %.3f AP50 %.3f", kind.value, tau, result["miou"][-1], result["ap50"][-1])
    return result


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def write_localization(path: Path, records: Sequence[LocalizationRecord]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(LOCALIZATION_FIELDS)
        for r in records:
            writer.writerow([r.image_id, r.kind.code, *r.box.as_tuple(), f"{r.tau:g}", f"{r.score:.6f}", int(r.fallback)])
    return path


def read_localization(path: Path) -> List[LocalizationRecord]:
    if not Path(path).exists():
        raise FileNotFoundError(f"{path} not found; run localize first")
    out = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != LOCALIZATION_FIELDS:
            raise DatasetFormatError(f"unexpected header {reader.fieldnames}", path=str(path), line=1)
        for line, row in enumerate(reader, start=2):
            try:
                kind = RegionKind.parse(row["kind"])
                box = RegionBox(kind, *(int(row[k]) for k in ("x0", "y0", "x1", "y1")))
                out.append(
                    LocalizationRecord(
                        row["image_id"], box, float(row["tau"]), float(row["score"]), bool(int(row["fallback"]))
                    )
                )
            except (TypeError, ValueError) as exc:
                raise DatasetFormatError(str(exc), path=str(path), line=line) from exc
    return out


def write_skip_list(path: Path, skipped: Sequence[SkipEntry]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(SKIP_FIELDS)
        for s in skipped:
            writer.writerow([s.image_id, s.kind.code, f"{s.tau:g}", s.reason])
    return path


def load_crops(root: Path, codes: Sequence[str], ids: Sequence[str]) -> Dict[str, Dict[str, np.ndarray]]:
    """Read ``crops/<code>/<id>.pgm`` for each code; absent files are left out."""
    crops: Dict[str, Dict[str, np.ndarray]] = {}
    for code in codes:
        directory = Path(root) / CROPS_DIR / code
        found: Dict[str, np.ndarray] = {}
        for image_id in ids:
            path = directory / f"{image_id}.pgm"
            if path.exists():
                found[image_id] = read_pgm(path)
        crops[code] = found
    return crops


__all__ = [
    "LocalizationRecord",
    "SkipEntry",
    "ImageRegions",
    "ExtractionResult",
    "RegionExtractor",
    "MODE_FOR_KIND",
    "localize_or_fallback",
    "localize_boxes",
    "extract_regions",
    "localization_at_taus",
    "write_localization",
    "read_localization",
    "write_skip_list",
    "load_crops",
]
