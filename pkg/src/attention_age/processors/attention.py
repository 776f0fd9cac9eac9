"""
Attention-based region localization.

A Phase I classifier's last conv feature map ``F`` (``H x W x C``) and the
weights ``W`` (``C x T``) of the dense layer after global pooling give the
class activation map ``A_t(i, j) = sum_k W[k, t] F[i, j, k]``. The map is
projected back onto the original image, thresholded (``A >= tau``) and the
largest 4-connected component of the mask becomes the region box.

Softmax weights are only defined up to a shared shift, so for classes at
either end of the age range the informative region can show up as strongly
negative evidence. The ``deviation`` normalization scores each pixel by its
distance from the map's median and therefore finds such regions as well.

Image arrays are 2-D float grids in ``[0, 1]`` (row = y, column = x).
Boxes are ``(x0, y0, x1, y1)`` in original-image pixels, inclusive-exclusive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from ..core.config import ERASE_FILLS, NORMALIZE_MODES
from ..core.errors import NoRegionFound, ShapeMismatchError
from ..core.seeding import rng as seeded_rng
from ..nn.network import Network

logger = logging.getLogger(__name__)

Size = Union[int, Tuple[int, int]]

NORMALIZED_MAX = 100.0
# Width of the band around an erased box whose statistics drive ``local`` fills.
LOCAL_RING = 3


class RegionKind(str, Enum):
    HAND = "Hand"
    REGION1 = "Region1"
    REGION2 = "Region2"

    @property
    def code(self) -> str:
        """Short tag used for crop directories (``H``, ``R1``, ``R2``)."""
        return {"Hand": "H", "Region1": "R1", "Region2": "R2"}[self.value]

    @classmethod
    def parse(cls, value: Union[str, "RegionKind"]) -> "RegionKind":
        if isinstance(value, cls):
            return value
        text = str(value).strip()
        for kind in cls:
            if text.lower() in (kind.value.lower(), kind.code.lower(), kind.name.lower()):
                return kind
        raise ValueError(f"unknown region kind '{value}'")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionBox:
    kind: RegionKind
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RegionKind.parse(self.kind))
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"box origin must be non-negative, got ({self.x0}, {self.y0})")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ValueError(f"degenerate box ({self.x0}, {self.y0}, {self.x1}, {self.y1})")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def fits(self, width: int, height: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def slices(self) -> Tuple[slice, slice]:
        """Row and column slices selecting the box from an image array."""
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def with_kind(self, kind: RegionKind) -> "RegionBox":
        return RegionBox(kind, self.x0, self.y0, self.x1, self.y1)

    @classmethod
    def full(cls, kind: RegionKind, width: int, height: int) -> "RegionBox":
        return cls(kind, 0, 0, width, height)


@dataclass(frozen=True)
class AttentionMap:
    """Heat map ``A_t`` for class ``t`` (1-based) of an image of ``source_size``."""

    values: np.ndarray
    class_index: int
    source_size: Tuple[int, int]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError(f"attention map must be a non-empty 2-D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("attention map contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "source_size", (int(self.source_size[0]), int(self.source_size[1])))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray
    tau: float

    @property
    def area(self) -> int:
        return int(self.bits.sum())


def _normalize_mode(value: Union[bool, str]) -> str:
    if value is True:
        return "range"
    if value is False or value is None:
        return "none"
    mode = str(value).lower()
    if mode not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {', '.join(NORMALIZE_MODES)}, got '{value}'")
    return mode


@dataclass(frozen=True)
class LocalizationPolicy:
    """How one region kind is localized.

    ``pool`` is the global pooling of the classifier (``max`` or ``avg``),
    ``input_scale`` the factor the image is resized by before entering the
    network and ``tau`` the mask threshold. ``normalize`` rescales maps to
    ``[0, 100]`` before thresholding: ``range`` maps min..max, ``deviation``
    maps the distance from the median, ``none`` (or ``False``) keeps raw
    values. ``True`` means ``range``.
    """

    pool: str = "max"
    input_scale: float = 1.0
    tau: float = 50.0
    normalize: Union[bool, str] = "range"

    def __post_init__(self) -> None:
        if self.pool not in ("max", "avg"):
            raise ValueError(f"pool must be 'max' or 'avg', got '{self.pool}'")
        if not 0 < self.input_scale <= 1:
            raise ValueError(f"input_scale must be in (0, 1], got {self.input_scale}")
        object.__setattr__(self, "normalize", _normalize_mode(self.normalize))

    def input_size(self, image_size: int) -> int:
        return max(1, int(round(image_size * self.input_scale)))

    def with_tau(self, tau: float) -> "LocalizationPolicy":
        return LocalizationPolicy(self.pool, self.input_scale, float(tau), self.normalize)

    @classmethod
    def from_settings(cls, settings: Mapping[str, Any], normalize: Union[bool, str] = "range") -> "LocalizationPolicy":
        return cls(
            pool=str(settings.get("pool", "max")),
            input_scale=float(settings.get("input_scale", 1.0)),
            tau=float(settings.get("tau", 50.0)),
            normalize=settings.get("normalize", normalize),
        )


@dataclass(frozen=True)
class ErasePolicy:
    """How Region1 is destroyed before relocalizing.

    ``fill`` is ``range`` (uniform over the whole image's intensity range) or
    ``local`` (uniform with the median and spread of a band around the box).
    ``margin`` grows the box by that many pixels on every side, clipped to
    the image.
    """

    fill: str = "range"
    margin: int = 0

    def __post_init__(self) -> None:
        if self.fill not in ERASE_FILLS:
            raise ValueError(f"fill must be one of {', '.join(ERASE_FILLS)}, got '{self.fill}'")
        if int(self.margin) < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        object.__setattr__(self, "margin", int(self.margin))

    def region(self, box: RegionBox, width: int, height: int) -> RegionBox:
        m = self.margin
        return RegionBox(
            box.kind, max(box.x0 - m, 0), max(box.y0 - m, 0), min(box.x1 + m, width), min(box.y1 + m, height)
        )

    def apply(self, image: np.ndarray, box: RegionBox, seed: int, *keys) -> np.ndarray:
        grid = np.asarray(image, dtype=np.float64)
        height, width = grid.shape
        return erase_region(grid, self.region(box, width, height), seed, *keys, fill=self.fill)


@dataclass(frozen=True)
class Localization:
    box: RegionBox
    attention: AttentionMap
    score: float
    probs: np.ndarray


# ---------------------------------------------------------------------------
# Heat maps
# ---------------------------------------------------------------------------

def cam(
    features: np.ndarray,
    weights: np.ndarray,
    t: int,
    source_size: Optional[Tuple[int, int]] = None,
) -> AttentionMap:
    """Class activation map for class ``t`` (1-based)."""
    F = np.asarray(features, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    if F.ndim != 3 or W.ndim != 2:
        raise ShapeMismatchError(f"cam expects F (H, W, C) and W (C, T), got {F.shape} and {W.shape}")
    if F.shape[2] != W.shape[0]:
        raise ShapeMismatchError(f"feature channels {F.shape[2]} do not match head weights {W.shape}")
    if not 1 <= t <= W.shape[1]:
        raise ValueError(f"class index must be in [1, {W.shape[1]}], got {t}")
    values = F @ W[:, t - 1]
    size = source_size if source_size is not None else F.shape[:2]
    return AttentionMap(values=values, class_index=int(t), source_size=size)


def threshold_mask(A: AttentionMap, tau: float) -> BinaryMask:
    return BinaryMask(bits=A.values >= tau, tau=float(tau))


def normalize_map(A: AttentionMap) -> AttentionMap:
    """Rescale to ``[0, 100]``; a constant map becomes all zeros."""
    low = A.values.min()
    span = A.values.max() - low
    if span <= 0:
        values = np.zeros_like(A.values)
    else:
        values = (A.values - low) / span * NORMALIZED_MAX
    return AttentionMap(values=values, class_index=A.class_index, source_size=A.source_size)


def deviation_map(A: AttentionMap) -> AttentionMap:
    """``|A - median(A)|`` rescaled so the largest deviation is 100; a constant map becomes all zeros."""
    distance = np.abs(A.values - np.median(A.values))
    peak = distance.max()
    values = np.zeros_like(distance) if peak <= 0 else distance / peak * NORMALIZED_MAX
    return AttentionMap(values=values, class_index=A.class_index, source_size=A.source_size)


def apply_normalization(A: AttentionMap, mode: Union[bool, str]) -> AttentionMap:
    mode = _normalize_mode(mode)
    if mode == "range":
        return normalize_map(A)
    if mode == "deviation":
        return deviation_map(A)
    return A


def _as_hw(size: Size) -> Tuple[int, int]:
    if isinstance(size, (int, np.integer)):
        return int(size), int(size)
    height, width = size
    return int(height), int(width)


def _resample(grid: np.ndarray, size: Size, box: Optional[Tuple[int, int, int, int]] = None) -> np.ndarray:
    """Bilinear resampling of a float grid through a Pillow ``F`` image.

    The result is clipped to the source range, which bilinear weights
    guarantee up to float32 rounding.
    """
    height, width = _as_hw(size)
    if height < 1 or width < 1:
        raise ValueError(f"target size must be at least 1x1, got {height}x{width}")
    source = np.asarray(grid, dtype=np.float64)
    if box is not None:
        x0, y0, x1, y1 = box
        region = source[y0:y1, x0:x1]
    else:
        region = source
    if region.shape == (height, width):
        return region.copy()
    low, high = float(region.min()), float(region.max())
    if low == high:
        return np.full((height, width), low)
    image = Image.fromarray(source.astype(np.float32))
    resized = image.resize((width, height), resample=Image.BILINEAR, box=box)
    return np.clip(np.asarray(resized, dtype=np.float64), low, high)


def resize_map(A: AttentionMap, size: Size) -> AttentionMap:
    """Bilinear resize to ``size`` (``int`` or ``(height, width)``)."""
    values = _resample(A.values, size)
    return AttentionMap(values=values, class_index=A.class_index, source_size=A.source_size)


def project_map(A: AttentionMap, size: Size, *, stride: int = 1, input_size: Optional[Size] = None) -> AttentionMap:
    """Bilinear projection of a feature-grid map onto the original image grid.

    Cell ``i`` of a same-padded conv stack with total ``stride`` is centred
    on network-input pixel ``stride * i``; the network input is the original
    image resized to ``input_size`` (the original size by default). Samples
    outside the outermost cell centres take the edge value, so the result
    stays within the source range.
    """
    height, width = _as_hw(size)
    if height < 1 or width < 1:
        raise ValueError(f"target size must be at least 1x1, got {height}x{width}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    in_h, in_w = _as_hw(input_size) if input_size is not None else (height, width)
    rows = ((np.arange(height) + 0.5) * (in_h / height) - 0.5) / stride
    cols = ((np.arange(width) + 0.5) * (in_w / width) - 0.5) / stride
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    values = ndimage.map_coordinates(A.values, [grid_r, grid_c], order=1, mode="nearest")
    low, high = float(A.values.min()), float(A.values.max())
    values = np.clip(values, low, high)
    return AttentionMap(values=values, class_index=A.class_index, source_size=A.source_size)


# ---------------------------------------------------------------------------
# Boxes, crops and erasing
# ---------------------------------------------------------------------------

def mask_to_box(M: BinaryMask, kind: RegionKind = RegionKind.REGION1, image_id: Optional[str] = None) -> RegionBox:
    """Tight box around the largest 4-connected component of ``M``.

    Equal areas go to the component whose bounding box starts topmost, then
    leftmost.
    """
    labels, count = ndimage.label(M.bits)
    if count == 0:
        raise NoRegionFound(M.tau, image_id)
    areas = np.bincount(labels.ravel())[1:]
    objects = ndimage.find_objects(labels)
    largest = np.flatnonzero(areas == areas.max())
    best = min(largest, key=lambda i: (objects[i][0].start, objects[i][1].start))
    rows, cols = objects[best]
    return RegionBox(kind, cols.start, rows.start, cols.stop, rows.stop)


def _check_box(image: np.ndarray, box: RegionBox) -> None:
    height, width = image.shape[:2]
    if not box.fits(width, height):
        raise ValueError(f"box {box.as_tuple()} exceeds image of size {width}x{height}")


def crop(image: np.ndarray, box: RegionBox, size: Size) -> np.ndarray:
    """Cut ``box`` out of ``image`` and resample it bilinearly to ``size``."""
    grid = np.asarray(image, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"crop expects a 2-D image, got shape {grid.shape}")
    _check_box(grid, box)
    return _resample(grid, size, box=box.as_tuple())


def _local_range(grid: np.ndarray, box: RegionBox) -> Tuple[float, float]:
    """Uniform bounds matching the median and robust spread of the band around ``box``."""
    height, width = grid.shape
    y0, y1 = max(box.y0 - LOCAL_RING, 0), min(box.y1 + LOCAL_RING, height)
    x0, x1 = max(box.x0 - LOCAL_RING, 0), min(box.x1 + LOCAL_RING, width)
    window = grid[y0:y1, x0:x1]
    band = np.ones(window.shape, dtype=bool)
    band[box.y0 - y0:box.y1 - y0, box.x0 - x0:box.x1 - x0] = False
    values = window[band]
    low, high = float(grid.min()), float(grid.max())
    if values.size == 0:
        return low, high
    centre = float(np.median(values))
    # MAD scaled to a normal sigma; a uniform with that sigma spans sqrt(3) sigma each way
    half = math.sqrt(3.0) * 1.4826 * float(np.median(np.abs(values - centre)))
    return max(centre - half, low), min(centre + half, high)


def erase_region(image: np.ndarray, box: RegionBox, seed: int, *keys, fill: str = "range") -> np.ndarray:
    """Replace pixels inside ``box`` with i.i.d. uniform noise.

    With ``fill="range"`` the noise spans the whole image's intensity range;
    with ``fill="local"`` it matches the band of pixels around the box. The
    generator is derived from ``seed`` (and optional ``keys`` such as the
    image id); pixels outside the box are left untouched.
    """
    grid = np.asarray(image, dtype=np.float64)
    _check_box(grid, box)
    if fill not in ERASE_FILLS:
        raise ValueError(f"fill must be one of {', '.join(ERASE_FILLS)}, got '{fill}'")
    out = grid.copy()
    if fill == "local":
        low, high = _local_range(grid, box)
    else:
        low, high = float(grid.min()), float(grid.max())
    generator = seeded_rng(seed, "erase", *keys)
    rows, cols = box.slices()
    out[rows, cols] = generator.uniform(low, high, size=(box.height, box.width))
    return out


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    grid = np.asarray(image, dtype=np.float64)
    if grid.shape == (size, size):
        return grid
    return _resample(grid, size)


# ---------------------------------------------------------------------------
# End-to-end
# ---------------------------------------------------------------------------

def attention_for(
    net: Network,
    image: np.ndarray,
    policy: LocalizationPolicy,
    covariate=None,
) -> Tuple[AttentionMap, np.ndarray]:
    """Original-resolution CAM for the predicted class plus the prediction.

    The feature-grid map is projected through the conv stack's stride and
    the input resize, so cell centres land on the image pixels they see.
    """
    grid = np.asarray(image, dtype=np.float64)
    height, width = grid.shape
    input_size = net.spec.input_shape[0]
    features, _, output = net.features(resize_image(grid, input_size), covariate)
    weights, _ = net.head_weights()
    t = int(np.argmax(output)) + 1
    heat = cam(features, weights, t, source_size=(height, width))
    heat = project_map(heat, (height, width), stride=net.spec.feature_stride(), input_size=input_size)
    heat = apply_normalization(heat, policy.normalize)
    return heat, np.asarray(output, dtype=np.float64)


def localize(
    net: Network,
    image: np.ndarray,
    kind: RegionKind,
    policy: LocalizationPolicy,
    *,
    covariate=None,
    image_id: Optional[str] = None,
) -> Localization:
    """cam -> project_map -> threshold_mask -> mask_to_box for one image.

    The CAM class is the argmax of the predicted distribution. ``score`` is
    the mean attention inside the returned box.
    """
    heat, probs = attention_for(net, image, policy, covariate)
    mask = threshold_mask(heat, policy.tau)
    box = mask_to_box(mask, RegionKind.parse(kind), image_id=image_id)
    rows, cols = box.slices()
    score = float(heat.values[rows, cols].mean())
    return Localization(box=box, attention=heat, score=score, probs=probs)


# ---------------------------------------------------------------------------
# Heat-map files (PFM)
# ---------------------------------------------------------------------------

def write_heatmap(path: Path, A: AttentionMap) -> Path:
    """Write ``A`` as a greyscale PFM: ``Pf``, ``<W> <H>``, ``-1.0``, float32 rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = A.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    rows = np.ascontiguousarray(A.values[::-1], dtype="<f4")
    path.write_bytes(header + rows.tobytes())
    return path


def read_heatmap(path: Path, class_index: int = 1, source_size: Optional[Tuple[int, int]] = None) -> AttentionMap:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise ValueError(f"{path} is not a greyscale PFM file")
    width, height = (int(value) for value in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(parts[3], dtype=dtype, count=width * height).reshape(height, width)[::-1]
    size = source_size if source_size is not None else (height, width)
    return AttentionMap(values=values.astype(np.float64), class_index=class_index, source_size=size)


__all__ = [
    "RegionKind",
    "RegionBox",
    "AttentionMap",
    "BinaryMask",
    "LocalizationPolicy",
    "ErasePolicy",
    "Localization",
    "cam",
    "threshold_mask",
    "normalize_map",
    "deviation_map",
    "apply_normalization",
    "resize_map",
    "project_map",
    "mask_to_box",
    "crop",
    "erase_region",
    "resize_image",
    "attention_for",
    "localize",
    "write_heatmap",
    "read_heatmap",
]
