"""Readers and writers for KITTI labels, prediction files, images and run manifests.

Prediction file grammar (UTF-8, one detection per line)::

    line       := blank | comment | detection
    comment    := ws* "#" any*
    detection  := ws* CLASS ws+ CONF ws+ LEFT ws+ TOP ws+ RIGHT ws+ BOTTOM ws* ["#" any*]

``CLASS`` is a registry token without whitespace, ``CONF`` a decimal in
[0, 1] and the four coordinates finite decimals with LEFT < RIGHT and
TOP < BOTTOM. Writers emit ``repr`` floats so a parse/format round-trip is
lossless.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import jsonschema
import numpy as np

from .core import (
    DEFAULT_CLASSES,
    BBox,
    ClassRegistry,
    CorruptionError,
    CorruptionSpec,
    Detection,
    GroundTruthBox,
    Intensity,
    Kind,
    Raster,
    parse_level,
)
from .metrics import FlipSequence

KITTI_MIN_FIELDS = 15
MAX_IMAGE_PIXELS = 1 << 28
LABEL_SUFFIX = ".txt"


class ParseError(ValueError):
    """Malformed input, located by source and 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.message = message
        self.line = line
        self.source = source
        where = ":".join(str(p) for p in (source, line) if p is not None)
        super().__init__(f"{where}: {message}" if where else message)


class ImageFormatError(ValueError):
    pass


class ManifestError(ValueError):
    """Manifest validation failure; ``pointer`` is a JSON pointer to the offending value."""

    def __init__(self, message: str, pointer: str = ""):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


def _text(data: Union[str, bytes], source) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8 at byte {exc.start}", source=source) from None
    return data


def _number(token: str, what: str, lineno: int, source) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{what} is not a number: {token!r}", lineno, source) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} is not finite: {token!r}", lineno, source)
    return value


def _box(coords, lineno: int, source) -> BBox:
    left, top, right, bottom = coords
    if not (left < right and top < bottom):
        raise ParseError(f"invalid box {tuple(coords)}: need left < right and top < bottom", lineno, source)
    return BBox(left, top, right, bottom)


def parse_kitti_labels(text: Union[str, bytes], registry: Optional[ClassRegistry] = None,
                       source: Optional[str] = None) -> List[GroundTruthBox]:
    """Read a KITTI object label file.

    Field 1 is the class and fields 5-8 the 2D box (left, top, right, bottom).
    ``DontCare`` rows and blank lines are skipped.
    """
    registry = registry or ClassRegistry()
    boxes = []
    for lineno, line in enumerate(_text(text, source).splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < KITTI_MIN_FIELDS:
            raise ParseError(f"expected at least {KITTI_MIN_FIELDS} fields, got {len(fields)}", lineno, source)
        label = fields[0]
        if label == "DontCare":
            continue
        if label not in registry:
            raise ParseError(f"unknown class {label!r}", lineno, source)
        coords = [_number(t, "bbox coordinate", lineno, source) for t in fields[4:8]]
        boxes.append(GroundTruthBox(label, _box(coords, lineno, source)))
    return boxes


def format_kitti_labels(boxes: Sequence[GroundTruthBox]) -> str:
    """Write boxes as KITTI rows; 3D fields are filled with KITTI's "unknown" values."""
    rows = []
    for b in boxes:
        l, t, r, btm = b.bbox.as_tuple()
        rows.append(f"{b.label} 0.00 0 -10 {l!r} {t!r} {r!r} {btm!r} -1 -1 -1 -1000 -1000 -1000 -10\n")
    return "".join(rows)


def parse_predictions(text: Union[str, bytes], registry: Optional[ClassRegistry] = None,
                      source: Optional[str] = None) -> List[Detection]:
    registry = registry or ClassRegistry()
    detections = []
    for lineno, line in enumerate(_text(text, source).splitlines(), start=1):
        line = line.split("#", 1)[0]
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 6:
            raise ParseError(f"expected 6 fields (class confidence left top right bottom), got {len(fields)}",
                             lineno, source)
        label = fields[0]
        if label not in registry:
            raise ParseError(f"unknown class {label!r}", lineno, source)
        conf = _number(fields[1], "confidence", lineno, source)
        if not 0.0 <= conf <= 1.0:
            raise ParseError(f"confidence {fields[1]} outside [0, 1]", lineno, source)
        coords = [_number(t, "bbox coordinate", lineno, source) for t in fields[2:6]]
        detections.append(Detection(label, _box(coords, lineno, source), conf))
    return detections


def format_predictions(detections: Sequence[Detection]) -> str:
    lines = []
    for d in detections:
        l, t, r, b = d.bbox.as_tuple()
        lines.append(f"{d.label} {float(d.confidence)!r} {float(l)!r} {float(t)!r} {float(r)!r} {float(b)!r}\n")
    return "".join(lines)


@dataclass(frozen=True)
class LabeledImageRecord:
    image_id: str
    image_path: Optional[Path]
    ground_truth: Tuple[GroundTruthBox, ...]


@dataclass(frozen=True)
class PredictionRecord:
    """Detections for one image; ``provenance`` is None for clean input."""

    image_id: str
    detections: Tuple[Detection, ...]
    provenance: Optional[CorruptionSpec] = None


# --- images -----------------------------------------------------------------


def _ppm_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, honouring ``#`` comments."""
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos:pos + 1].isspace():
        raise ImageFormatError("truncated PPM header")
    return tokens, pos + 1


def decode_ppm(data: bytes) -> Raster:
    if len(data) == 0:
        raise ImageFormatError("truncated file: 0 bytes")
    if not data.startswith(b"P6"):
        raise ImageFormatError("not a binary PPM (P6) file")
    tokens, offset = _ppm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("non-integer PPM header field") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"invalid PPM dimensions {width}x{height}")
    if width * height > MAX_IMAGE_PIXELS:
        raise ImageFormatError(f"dimension overflow: {width}x{height} exceeds {MAX_IMAGE_PIXELS} pixels")
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}; only 255 is supported")
    expected = width * height * 3
    body = data[offset:offset + expected]
    if len(body) < expected:
        raise ImageFormatError(f"truncated file: expected {expected} pixel bytes, got {len(body)}")
    return Raster(np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3))


def encode_ppm(r: Raster) -> bytes:
    return f"P6\n{r.width} {r.height}\n255\n".encode("ascii") + r.tobytes()


def read_image(path) -> Raster:
    path = Path(path)
    data = path.read_bytes()
    if len(data) == 0:
        raise ImageFormatError(f"{path}: truncated file: 0 bytes")
    if data.startswith(b"P6"):
        return decode_ppm(data)
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        from PIL import Image, UnidentifiedImageError

        Image.MAX_IMAGE_PIXELS = MAX_IMAGE_PIXELS
        try:
            with Image.open(io.BytesIO(data)) as im:
                if im.width * im.height > MAX_IMAGE_PIXELS:
                    raise ImageFormatError(f"{path}: dimension overflow")
                if im.mode not in ("RGB", "RGBA", "L", "P"):
                    raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (OSError, SyntaxError, ValueError, UnidentifiedImageError, Image.DecompressionBombError) as exc:
            if isinstance(exc, ImageFormatError):
                raise
            raise ImageFormatError(f"{path}: unreadable PNG: {exc}") from None
        return Raster(arr)
    raise ImageFormatError(f"{path}: unsupported image format (expected PNG or binary PPM)")


def write_image(r: Raster, path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm"):
        path.write_bytes(encode_ppm(r))
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(np.asarray(r.pixels), mode="RGB").save(path, format="PNG")
    else:
        raise ImageFormatError(f"{path}: unsupported output format {suffix!r}")


IMAGE_SUFFIXES = (".png", ".ppm", ".pnm")


# --- manifest ---------------------------------------------------------------

CELL_KINDS = ["clean"] + [k.value for k in Kind]

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["cells"],
    "additionalProperties": False,
    "properties": {
        "class_registry": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"type": "string", "pattern": r"^\S+$"},
        },
        "iou_threshold": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "mock_profile": {"type": "object"},
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "predictions", "ground_truth"],
                "additionalProperties": False,
                "properties": {
                    "kind": {"enum": CELL_KINDS},
                    "level": {"type": ["string", "integer", "null"]},
                    "predictions": {"type": "string"},
                    "ground_truth": {"type": "string"},
                    "images": {"type": "string"},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class Cell:
    """One (corruption kind, level) evaluation cell; ``kind == "clean"`` has no level."""

    kind: str
    level: Optional[Union[Intensity, int]]
    predictions: Path
    ground_truth: Path
    images: Optional[Path] = None

    @property
    def key(self) -> str:
        if self.kind == "clean":
            return "clean"
        level = self.level.value if isinstance(self.level, Intensity) else self.level
        return f"{self.kind}/{level}"

    def to_dict(self, base: Optional[Path] = None) -> dict:
        def rel(p):
            if p is None:
                return None
            return os.path.relpath(p, base) if base is not None else str(p)

        d = {
            "kind": self.kind,
            "level": self.level.value if isinstance(self.level, Intensity) else self.level,
            "predictions": rel(self.predictions),
            "ground_truth": rel(self.ground_truth),
        }
        if self.images is not None:
            d["images"] = rel(self.images)
        return d


@dataclass(frozen=True)
class RunManifest:
    class_registry: ClassRegistry = field(default_factory=ClassRegistry)
    cells: Tuple[Cell, ...] = ()
    iou_threshold: float = 0.5
    seed: int = 0
    mock_profile: Optional[dict] = None

    def to_dict(self, base: Optional[Path] = None) -> dict:
        d = {
            "class_registry": list(self.class_registry.names),
            "iou_threshold": self.iou_threshold,
            "seed": self.seed,
            "cells": [c.to_dict(base) for c in self.cells],
        }
        if self.mock_profile is not None:
            d["mock_profile"] = self.mock_profile
        return d


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def manifest_from_dict(doc, base: Path = Path("."), check_paths: bool = True) -> RunManifest:
    """Validate a parsed manifest document; relative paths resolve against ``base``."""
    validator = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ManifestError(err.message, _pointer(err.absolute_path))

    cells = []
    seen = set()
    for i, c in enumerate(doc["cells"]):
        kind = c["kind"]
        if kind == "clean":
            if c.get("level") is not None:
                raise ManifestError("clean cells take no level", f"/cells/{i}/level")
            level = None
        else:
            try:
                level = parse_level(kind, c.get("level"))
            except CorruptionError as exc:
                raise ManifestError(str(exc), f"/cells/{i}/level") from None
        paths = {}
        for key in ("predictions", "ground_truth", "images"):
            if key not in c:
                continue
            p = Path(c[key])
            p = p if p.is_absolute() else base / p
            if check_paths and not p.exists():
                raise ManifestError(f"missing file reference {c[key]!r}", f"/cells/{i}/{key}")
            paths[key] = p
        cell = Cell(kind, level, paths["predictions"], paths["ground_truth"], paths.get("images"))
        if cell.key in seen:
            raise ManifestError(f"duplicate cell {cell.key}", f"/cells/{i}")
        seen.add(cell.key)
        cells.append(cell)

    return RunManifest(
        class_registry=ClassRegistry(tuple(doc.get("class_registry", DEFAULT_CLASSES))),
        cells=tuple(cells),
        iou_threshold=float(doc.get("iou_threshold", 0.5)),
        seed=int(doc.get("seed", 0)),
        mock_profile=doc.get("mock_profile"),
    )


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return manifest_from_dict(doc, base=path.parent)


# --- labelled datasets --------------------------------------------------------


def list_stems(directory, suffixes=(LABEL_SUFFIX,)) -> List[str]:
    return sorted(p.stem for p in Path(directory).iterdir() if p.is_file() and p.suffix.lower() in suffixes)


def load_ground_truth(directory, registry: ClassRegistry) -> Dict[str, List[GroundTruthBox]]:
    """Map image id (file stem) to its ground-truth boxes for every ``*.txt`` in ``directory``."""
    directory = Path(directory)
    out = {}
    for stem in list_stems(directory):
        p = directory / f"{stem}{LABEL_SUFFIX}"
        out[stem] = parse_kitti_labels(p.read_bytes(), registry, source=str(p))
    return out


def load_predictions(directory, image_ids: Sequence[str], registry: ClassRegistry) -> Dict[str, List[Detection]]:
    """Read ``<id>.txt`` prediction files; a missing file is an error, not an empty list."""
    directory = Path(directory)
    out = {}
    for image_id in image_ids:
        p = directory / f"{image_id}{LABEL_SUFFIX}"
        if not p.is_file():
            raise ParseError(f"missing prediction file for image {image_id!r}", source=str(p))
        out[image_id] = parse_predictions(p.read_bytes(), registry, source=str(p))
    return out


# --- flip sequence manifest ---------------------------------------------------

FLIP_MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["cells"],
    "additionalProperties": False,
    "properties": {
        "class_registry": MANIFEST_SCHEMA["properties"]["class_registry"],
        "iou_threshold": MANIFEST_SCHEMA["properties"]["iou_threshold"],
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "ground_truth", "frames"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "ground_truth": {"type": "string"},
                    "frames": {"type": "array", "minItems": 2, "items": {"type": "string"}},
                },
            },
        },
    },
}


class RaggedSequenceError(ValueError):
    def __init__(self, message: str, image_ids: Sequence[str]):
        self.image_ids = list(image_ids)
        super().__init__(f"{message}: {', '.join(self.image_ids)}")


@dataclass(frozen=True)
class FlipCell:
    """Ground truth plus one prediction directory per perturbed copy, in severity order."""

    name: str
    ground_truth: Path
    frames: Tuple[Path, ...]


@dataclass(frozen=True)
class FlipManifest:
    class_registry: ClassRegistry
    cells: Tuple[FlipCell, ...]
    iou_threshold: float = 0.5


def load_flip_manifest(path) -> FlipManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    errors = sorted(jsonschema.Draft202012Validator(FLIP_MANIFEST_SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        raise ManifestError(errors[0].message, _pointer(errors[0].absolute_path))

    def resolve(p, pointer):
        q = Path(p) if Path(p).is_absolute() else path.parent / p
        if not q.exists():
            raise ManifestError(f"missing file reference {p!r}", pointer)
        return q

    cells = []
    for i, c in enumerate(doc["cells"]):
        frames = tuple(resolve(f, f"/cells/{i}/frames/{j}") for j, f in enumerate(c["frames"]))
        cells.append(FlipCell(c["name"], resolve(c["ground_truth"], f"/cells/{i}/ground_truth"), frames))
    names = [c.name for c in cells]
    if len(set(names)) != len(names):
        raise ManifestError("duplicate cell names", "/cells")
    return FlipManifest(
        ClassRegistry(tuple(doc.get("class_registry", DEFAULT_CLASSES))),
        tuple(cells),
        float(doc.get("iou_threshold", 0.5)),
    )


def load_flip_sequences(cell: FlipCell, registry: ClassRegistry):
    """Build one FlipSequence per ground-truth image; every frame must cover every image."""
    truth = load_ground_truth(cell.ground_truth, registry)
    ragged = [i for i in truth if any(not (f / f"{i}{LABEL_SUFFIX}").is_file() for f in cell.frames)]
    if ragged:
        raise RaggedSequenceError(f"cell {cell.name!r}: images missing from some frames", ragged)
    frames = [load_predictions(f, list(truth), registry) for f in cell.frames]
    return [FlipSequence(i, [fr[i] for fr in frames], truth[i]) for i in truth]
