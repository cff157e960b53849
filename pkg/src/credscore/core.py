"""Shared domain types: rasters, boxes, detections and corruption specs."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

# KITTI label tokens for the eight evaluated classes. Tokens (not display
# names) are used so class names never contain whitespace.
DEFAULT_CLASSES: Tuple[str, ...] = (
    "Pedestrian",
    "Cyclist",
    "Car",
    "Van",
    "Misc",
    "Truck",
    "Person_sitting",
    "Tram",
)

U64_MAX = 2**64 - 1


class CorruptionError(ValueError):
    """Raised for an inconsistent corruption kind/level pairing."""


class RasterError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    """A metric has no defined value for the given input (e.g. empty denominator)."""


class Kind(str, enum.Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    GAUSSIAN_BLUR = "gaussian_blur"
    FOG = "fog"
    SUNFLARE = "sunflare"
    SNOW = "snow"

    @property
    def is_weather(self) -> bool:
        return self in WEATHER_KINDS


WEATHER_KINDS = frozenset({Kind.FOG, Kind.SUNFLARE, Kind.SNOW})


class Intensity(str, enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


INTENSITIES: Tuple[Intensity, ...] = (Intensity.LOW, Intensity.MEDIUM, Intensity.HIGH)
MAX_DEGREE = 5

Level = Union[Intensity, int]


def validate_raster(width, height, pixels) -> Optional[str]:
    """Check raster invariants, returning the first violation or ``None``.

    ``pixels`` may be a flat row-major sequence of ``(r, g, b)`` triples or an
    array of shape ``(height, width, 3)``.
    """
    if not isinstance(width, (int, np.integer)) or width <= 0:
        return f"width must be a positive integer, got {width!r}"
    if not isinstance(height, (int, np.integer)) or height <= 0:
        return f"height must be a positive integer, got {height!r}"
    try:
        arr = np.asarray(pixels)
    except (ValueError, TypeError) as exc:
        return f"pixels are not a rectangular array: {exc}"
    if arr.ndim == 3:
        if arr.shape[:2] != (height, width):
            return f"pixel count: array shape {arr.shape[:2]} != ({height}, {width})"
        arr = arr.reshape(-1, arr.shape[2])
    if arr.ndim != 2 or (arr.size and arr.shape[1] != 3):
        return f"pixels must be (r, g, b) triples, got shape {arr.shape}"
    if arr.shape[0] != width * height:
        return f"pixel count: {arr.shape[0]} != {width} x {height}"
    if not (np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool):
        if not np.issubdtype(arr.dtype, np.floating) or not np.all(arr == np.round(arr)):
            return "channel values must be integers"
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        return f"channel value out of range [0, 255]: min {arr.min()}, max {arr.max()}"
    return None


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable 8-bit RGB image stored as a ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = self.pixels
        if not isinstance(arr, np.ndarray) or arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
            raise RasterError("Raster.pixels must be a uint8 array of shape (H, W, 3)")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise RasterError("Raster dimensions must be positive")
        arr = np.array(arr, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_pixels(cls, width: int, height: int, pixels: Iterable) -> "Raster":
        pixels = list(pixels) if not isinstance(pixels, np.ndarray) else pixels
        problem = validate_raster(width, height, pixels)
        if problem:
            raise RasterError(problem)
        return cls(np.asarray(pixels).astype(np.uint8).reshape(height, width, 3))

    @classmethod
    def filled(cls, width: int, height: int, rgb=(0, 0, 0)) -> "Raster":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[...] = rgb
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class BBox:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        coords = (self.left, self.top, self.right, self.bottom)
        if not all(np.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinate in {coords}")
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(f"degenerate box {coords}: need left < right and top < bottom")

    @property
    def area(self) -> float:
        return (self.right - self.left) * (self.bottom - self.top)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return min(1.0, inter / union)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``. Agrees with :func:`iou` elementwise."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    ba = np.array([x.as_tuple() for x in a], dtype=float)
    bb = np.array([x.as_tuple() for x in b], dtype=float)
    iw = np.minimum(ba[:, None, 2], bb[None, :, 2]) - np.maximum(ba[:, None, 0], bb[None, :, 0])
    ih = np.minimum(ba[:, None, 3], bb[None, :, 3]) - np.maximum(ba[:, None, 1], bb[None, :, 1])
    overlap = (iw > 0) & (ih > 0)
    inter = np.where(overlap, iw * ih, 0.0)
    area_a = (ba[:, 2] - ba[:, 0]) * (ba[:, 3] - ba[:, 1])
    area_b = (bb[:, 2] - bb[:, 0]) * (bb[:, 3] - bb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.minimum(1.0, np.where(overlap, inter / union, 0.0))


@dataclass(frozen=True)
class ClassRegistry:
    """Ordered set of class names declared for one run."""

    names: Tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise ValueError("class registry is empty")
        if len(set(names)) != len(names):
            raise ValueError("class registry contains duplicates")
        for n in names:
            if not n or any(ch.isspace() for ch in n):
                raise ValueError(f"invalid class name {n!r}: must be non-empty without whitespace")
        object.__setattr__(self, "names", names)

    def __contains__(self, name) -> bool:
        return name in self.names

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def check(self, name: str) -> str:
        if name not in self.names:
            raise KeyError(name)
        return name


@dataclass(frozen=True)
class GroundTruthBox:
    label: str
    bbox: BBox


@dataclass(frozen=True)
class Detection:
    label: str
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence!r} outside [0, 1]")


def parse_level(kind: Union[Kind, str], level) -> Level:
    """Coerce ``level`` to the type required by ``kind`` or raise CorruptionError."""
    kind = Kind(kind)
    if kind.is_weather:
        if isinstance(level, Intensity):
            return level
        if isinstance(level, str):
            try:
                return Intensity(level)
            except ValueError:
                pass
        if isinstance(level, (int, np.integer)) and not isinstance(level, bool):
            raise CorruptionError(f"degree not valid for weather corruption {kind.value!r}")
        raise CorruptionError(
            f"invalid intensity {level!r} for {kind.value!r}; expected one of "
            f"{[i.value for i in INTENSITIES]}"
        )
    if isinstance(level, Intensity) or (isinstance(level, str) and level in {i.value for i in INTENSITIES}):
        raise CorruptionError(f"intensity not valid for Gaussian corruption {kind.value!r}")
    if isinstance(level, str) and level.strip().isdigit():
        level = int(level)
    if isinstance(level, bool) or not isinstance(level, (int, np.integer)):
        raise CorruptionError(f"degree for {kind.value!r} must be an integer 0-{MAX_DEGREE}, got {level!r}")
    if not 0 <= level <= MAX_DEGREE:
        raise CorruptionError(f"degree {level} out of range 0-{MAX_DEGREE}")
    return int(level)


@dataclass(frozen=True)
class CorruptionSpec:
    """Which corruption, at what level, with which seed."""

    kind: Kind
    level: Level
    seed: int = 0

    def __post_init__(self):
        try:
            kind = Kind(self.kind)
        except ValueError:
            raise CorruptionError(
                f"unknown corruption kind {self.kind!r}; expected one of {[k.value for k in Kind]}"
            ) from None
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "level", parse_level(kind, self.level))
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed <= U64_MAX:
            raise CorruptionError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def level_key(self) -> str:
        return self.level.value if isinstance(self.level, Intensity) else str(self.level)

    def to_dict(self) -> dict:
        level = self.level.value if isinstance(self.level, Intensity) else self.level
        return {"kind": self.kind.value, "level": level, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(d["kind"], d["level"], d.get("seed", 0))
