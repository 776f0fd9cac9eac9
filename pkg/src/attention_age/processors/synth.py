"""
Synthetic radiograph-like dataset with known discriminative regions.

Each image shows a rotated ellipse (the "hand") on a dark background. Two
textured square patches sit inside it, always brighter than the ellipse:

- Region1, below the centre, whose 8-bit pixel sum encodes the apparent
  maturity ``m = age + gender * gender_effect + noise``;
- Region2, above the centre, carrying a noisier copy with a compressed slope.

The ellipse body itself brightens weakly with a much noisier maturity, so
the whole hand is informative at low resolution. The patch sum is forced
exactly after quantisation, so a closed-form decoder (:func:`oracle_decode`)
can invert it. The background carries no age information.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.seeding import rng as seeded_rng
from .attention import RegionBox, RegionKind

logger = logging.getLogger(__name__)

INTENSITY_BASE = 0.45
INTENSITY_SLOPE = 0.35
TEXTURE_BASE = 0.04
TEXTURE_SLOPE = 0.04
TEXTURE_PERIOD = 4.0
BACKGROUND_LEVEL = 0.05
OBJECT_LEVEL = 0.18
HAND_SLOPE = 0.1
HAND_NOISE_MONTHS = 40.0
REGION1_NOISE_MONTHS = 8.0
BODY_THRESHOLD = (BACKGROUND_LEVEL + OBJECT_LEVEL) / 2.0
PIXEL_NOISE = 0.03
PATCH_OFFSET = 0.45
OBJECT_ASPECT = 0.7


@dataclass(frozen=True)
class GenSpec:
    """Generation parameters; ``validate`` raises ``ValueError`` on infeasible geometry."""

    image_size: int = 64
    n: int = 3000
    object_extent: float = 0.75
    region1_size: int = 12
    region2_size: int = 10
    num_ages: int = 240
    region1_share: float = 0.7
    gender_effect: float = 12.0
    noise_level: float = 0.5
    max_rotation: float = 15.0
    max_shift: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    # -- derived geometry ---------------------------------------------------

    @property
    def semi_major(self) -> float:
        return self.object_extent * self.image_size / 2.0

    @property
    def semi_minor(self) -> float:
        return self.semi_major * OBJECT_ASPECT

    @property
    def patch_offset(self) -> float:
        return PATCH_OFFSET * self.semi_major

    @property
    def region2_slope(self) -> float:
        return INTENSITY_SLOPE * (1.0 - self.region1_share) / self.region1_share

    @property
    def region1_noise(self) -> float:
        return self.noise_level * REGION1_NOISE_MONTHS

    @property
    def region2_noise(self) -> float:
        return self.region1_noise * self.region1_share / (1.0 - self.region1_share)

    @property
    def hand_noise(self) -> float:
        return self.noise_level * HAND_NOISE_MONTHS

    def validate(self) -> None:
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 < self.object_extent <= 1:
            raise ValueError(f"object_extent must be in (0, 1], got {self.object_extent}")
        if not 0 < self.region1_share < 1:
            raise ValueError(f"region1_share must be in (0, 1), got {self.region1_share}")
        if self.num_ages < 2:
            raise ValueError(f"num_ages must be >= 2, got {self.num_ages}")
        if self.noise_level < 0 or self.gender_effect < 0:
            raise ValueError("noise_level and gender_effect must be >= 0")
        if self.region1_size < 2 or self.region2_size < 2:
            raise ValueError("patch sizes must be >= 2")
        if self.max_shift < 0 or not 0 <= self.max_rotation <= 90:
            raise ValueError("max_shift must be >= 0 and max_rotation in [0, 90]")

        half = self.image_size / 2.0
        if self.semi_major + self.max_shift + 1 > half:
            raise ValueError("object plus max_shift does not fit inside the image")
        for size, sign in ((self.region1_size, 1.0), (self.region2_size, -1.0)):
            if not _patch_inside_object(size, sign * self.patch_offset, self.semi_minor, self.semi_major):
                raise ValueError(f"a {size}x{size} patch does not fit inside the object at any rotation")
        reach = (self.region1_size + self.region2_size) / 2.0 * math.sqrt(2.0) + 1.0
        if 2.0 * self.patch_offset < reach:
            raise ValueError("Region1 and Region2 patches would overlap")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenSpec":
        known = {f.name for f in fields(cls)}
        values = {}
        for name, value in data.items():
            if name in known:
                values[name] = int(value) if name in _INT_FIELDS else float(value)
        return cls(**values)


_INT_FIELDS = {"image_size", "n", "region1_size", "region2_size", "num_ages", "max_shift", "seed"}


def _patch_inside_object(size: int, offset: float, semi_x: float, semi_y: float) -> bool:
    """True if a square patch stays inside the ellipse at any rotation.

    The patch is bounded by a circle of radius ``size / sqrt(2) + 1`` around
    its centre, which keeps the check independent of the rotation angle.
    """
    radius = size / math.sqrt(2.0) + 1.0
    angles = np.linspace(0.0, 2.0 * math.pi, 72, endpoint=False)
    xs = radius * np.cos(angles)
    ys = offset + radius * np.sin(angles)
    return bool(np.all((xs / semi_x) ** 2 + (ys / semi_y) ** 2 <= 1.0))


@dataclass
class SampleRecord:
    """One image with its labels and, for synthetic data, its truth boxes."""

    id: str
    image: np.ndarray
    age: int
    gender: int
    truth_boxes: List[RegionBox] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.gender not in (-1, 1):
            raise ValueError(f"gender must be -1 or +1, got {self.gender}")

    def box(self, kind: RegionKind) -> Optional[RegionBox]:
        for box in self.truth_boxes:
            if box.kind == kind:
                return box
        return None

    def pixels(self) -> np.ndarray:
        """The image as 8-bit levels, exactly as stored on disk."""
        return to_levels(self.image)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.age == other.age
            and self.gender == other.gender
            and self.truth_boxes == other.truth_boxes
            and np.array_equal(self.pixels(), other.pixels())
        )


def to_levels(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def from_levels(levels: np.ndarray) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _maturity_level(maturity: float, slope: float, num_ages: int) -> float:
    clamped = min(max(maturity, -0.1 * num_ages), 1.1 * num_ages)
    return INTENSITY_BASE + slope * clamped / num_ages


def _body_level(maturity: float, num_ages: int) -> float:
    clamped = min(max(maturity, 0.0), float(num_ages))
    return OBJECT_LEVEL + HAND_SLOPE * clamped / num_ages


def _texture(size: int, maturity: float, num_ages: int, vertical: bool) -> np.ndarray:
    clamped = min(max(maturity, 0.0), float(num_ages))
    amplitude = TEXTURE_BASE + TEXTURE_SLOPE * clamped / num_ages
    phase = np.sin(2.0 * math.pi * np.arange(size) / TEXTURE_PERIOD)
    wave = np.tile(phase, (size, 1)) if vertical else np.tile(phase[:, None], (1, size))
    return amplitude * wave


def _force_sum(values: np.ndarray, target: int) -> np.ndarray:
    """Quantise ``values`` (0..1) to 8-bit levels whose sum is exactly ``target``.

    Levels are floored and the remaining units go to the pixels with the
    largest fractional parts.
    """
    scaled = np.clip(values, 0.0, 1.0) * 255.0
    levels = np.floor(scaled).astype(np.int64)
    remainder = (scaled - levels).ravel()
    count = levels.size
    deficit = int(target) - int(levels.sum())
    if deficit:
        levels += deficit // count
        deficit %= count
    if deficit:
        order = np.argsort(-remainder, kind="stable")[:deficit]
        flat = levels.ravel()
        flat[order] += 1
    if levels.min() < 0 or levels.max() > 255:
        raise ValueError("patch intensity left the 8-bit range")
    return levels.astype(np.uint8)


def patch_target_sum(maturity: float, slope: float, size: int, num_ages: int) -> int:
    return int(round(size * size * 255.0 * _maturity_level(maturity, slope, num_ages)))


def _patch_box(kind: RegionKind, size: int, centre: np.ndarray, image_size: int) -> RegionBox:
    x0 = int(round(centre[0] - size / 2.0))
    y0 = int(round(centre[1] - size / 2.0))
    x0 = min(max(x0, 0), image_size - size)
    y0 = min(max(y0, 0), image_size - size)
    return RegionBox(kind, x0, y0, x0 + size, y0 + size)


def render_sample(spec: GenSpec, index: int) -> SampleRecord:
    """Render sample ``index``; depends only on ``(spec.seed, index)``."""
    gen = seeded_rng(spec.seed, "sample", index)
    size = spec.image_size
    age = int(gen.integers(1, spec.num_ages + 1))
    gender = int(gen.choice((-1, 1)))
    theta = math.radians(float(gen.uniform(-spec.max_rotation, spec.max_rotation)))
    shift = gen.integers(-spec.max_shift, spec.max_shift + 1, size=2)
    noise1 = float(gen.normal(0.0, spec.region1_noise)) if spec.region1_noise > 0 else 0.0
    noise2 = float(gen.normal(0.0, spec.region2_noise)) if spec.region2_noise > 0 else 0.0
    noise_hand = float(gen.normal(0.0, spec.hand_noise)) if spec.hand_noise > 0 else 0.0
    pixel_noise = gen.normal(0.0, spec.noise_level * PIXEL_NOISE, size=(size, size))

    centre = np.array([size / 2.0, size / 2.0]) + shift
    ys, xs = np.mgrid[0:size, 0:size]
    dx = xs + 0.5 - centre[0]
    dy = ys + 0.5 - centre[1]
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    u = cos_t * dx + sin_t * dy
    v = -sin_t * dx + cos_t * dy
    inside = (u / spec.semi_minor) ** 2 + (v / spec.semi_major) ** 2 <= 1.0

    rows = np.flatnonzero(inside.any(axis=1))
    cols = np.flatnonzero(inside.any(axis=0))
    hand = RegionBox(RegionKind.HAND, cols[0], rows[0], cols[-1] + 1, rows[-1] + 1)

    # Object frame y points down; rotate the patch offsets with the ellipse.
    def patch_centre(offset: float) -> np.ndarray:
        return centre + np.array([-sin_t * offset, cos_t * offset])

    base_maturity = age + gender * spec.gender_effect
    body = _body_level(base_maturity + noise_hand, spec.num_ages)
    image = np.where(inside, body, BACKGROUND_LEVEL) + pixel_noise
    levels = to_levels(image)
    boxes = [hand]
    for kind, patch, offset, slope, noise, vertical in (
        (RegionKind.REGION1, spec.region1_size, spec.patch_offset, INTENSITY_SLOPE, noise1, True),
        (RegionKind.REGION2, spec.region2_size, -spec.patch_offset, spec.region2_slope, noise2, False),
    ):
        box = _patch_box(kind, patch, patch_centre(offset), size)
        maturity = base_maturity + noise
        rows_sl, cols_sl = box.slices()
        values = (
            _maturity_level(maturity, slope, spec.num_ages)
            + _texture(patch, maturity, spec.num_ages, vertical)
            + pixel_noise[rows_sl, cols_sl]
        )
        levels[rows_sl, cols_sl] = _force_sum(values, patch_target_sum(maturity, slope, patch, spec.num_ages))
        boxes.append(box)

    return SampleRecord(id=f"s{index:05d}", image=from_levels(levels), age=age, gender=gender, truth_boxes=boxes)


def generate(spec: GenSpec, n: Optional[int] = None, *, workers: int = 1) -> List[SampleRecord]:
    """Render ``n`` samples (``spec.n`` by default), optionally on a thread pool."""
    count = spec.n if n is None else int(n)
    if count < 1:
        raise ValueError(f"n must be >= 1, got {count}")
    spec.validate()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda i: render_sample(spec, i), range(count)))
    else:
        records = [render_sample(spec, i) for i in range(count)]
    logger.info("Generated %d synthetic samples (%dx%d)", count, spec.image_size, spec.image_size)
    return records


# ---------------------------------------------------------------------------
# Splits and controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def indices(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split '{name}'")
        return getattr(self, name)


def split(n_samples: int, seed: int, n_val: int, n_test: int) -> Split:
    """Random disjoint train/val/test indices, each sorted ascending."""
    if n_val < 0 or n_test < 0:
        raise ValueError("split sizes must be >= 0")
    if n_val + n_test >= n_samples:
        raise ValueError(
            f"n_val + n_test = {n_val + n_test} leaves no training samples out of {n_samples}"
        )
    order = seeded_rng(seed, "split").permutation(n_samples)
    val = np.sort(order[:n_val])
    test = np.sort(order[n_val:n_val + n_test])
    train = np.sort(order[n_val + n_test:])
    return Split(train=train, val=val, test=test)


def permute_ages(records: Sequence[SampleRecord], seed: int) -> List[SampleRecord]:
    """Copies of ``records`` with ages shuffled across images."""
    ages = np.array([record.age for record in records])
    shuffled = seeded_rng(seed, "permute-ages").permutation(ages)
    return [replace(record, age=int(age)) for record, age in zip(records, shuffled)]


# ---------------------------------------------------------------------------
# Oracle decoders
# ---------------------------------------------------------------------------

def oracle_decode(record: SampleRecord, spec: GenSpec, kind: RegionKind = RegionKind.REGION1, use_gender: bool = True) -> int:
    """Invert the patch sum of ``kind`` back to an age using the truth box."""
    box = record.box(kind)
    if box is None or kind == RegionKind.HAND:
        raise ValueError(f"record {record.id} has no decodable {RegionKind.parse(kind).value} patch")
    slope = INTENSITY_SLOPE if kind == RegionKind.REGION1 else spec.region2_slope
    rows, cols = box.slices()
    total = int(record.pixels()[rows, cols].astype(np.int64).sum())
    mean_level = total / (box.area * 255.0)
    maturity = (mean_level - INTENSITY_BASE) / slope * spec.num_ages
    age = maturity - (record.gender * spec.gender_effect if use_gender else 0.0)
    return int(min(max(round(age), 1), spec.num_ages))


def oracle_decode_hand(record: SampleRecord, spec: GenSpec, use_gender: bool = True) -> int:
    """Decode age from the mean level of the ellipse body (patches excluded)."""
    hand = record.box(RegionKind.HAND)
    if hand is None:
        raise ValueError(f"record {record.id} has no hand box")
    image = record.image
    body = np.zeros(image.shape, dtype=bool)
    body[hand.slices()] = True
    body &= image > BODY_THRESHOLD
    for kind in (RegionKind.REGION1, RegionKind.REGION2):
        box = record.box(kind)
        if box is not None:
            body[box.slices()] = False
    maturity = (float(image[body].mean()) - OBJECT_LEVEL) / HAND_SLOPE * spec.num_ages
    age = maturity - (record.gender * spec.gender_effect if use_gender else 0.0)
    return int(min(max(round(age), 1), spec.num_ages))


def oracle_maes(records: Sequence[SampleRecord], spec: GenSpec) -> Dict[str, float]:
    """Decoder MAEs quantifying how much age information each region carries."""
    truth = np.array([record.age for record in records], dtype=np.float64)

    def decoded(kind: RegionKind, use_gender: bool) -> float:
        preds = np.array([oracle_decode(r, spec, kind, use_gender) for r in records], dtype=np.float64)
        return float(np.mean(np.abs(preds - truth)))

    return {
        "region1": decoded(RegionKind.REGION1, True),
        "region1_without_gender": decoded(RegionKind.REGION1, False),
        "region2": decoded(RegionKind.REGION2, True),
        "hand": float(np.mean(np.abs([oracle_decode_hand(r, spec) - r.age for r in records]))),
        "background": float(np.mean(np.abs(truth.mean() - truth))),
    }


__all__ = [
    "GenSpec",
    "SampleRecord",
    "Split",
    "generate",
    "render_sample",
    "split",
    "permute_ages",
    "oracle_decode",
    "oracle_decode_hand",
    "oracle_maes",
    "to_levels",
    "from_levels",
]
