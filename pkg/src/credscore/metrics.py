"""Credibility metrics: confidence, AP/mAP, corruption mAP, misclassification error, flip probability."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import INTENSITIES, ClassRegistry, Detection, GroundTruthBox, Intensity, UndefinedMetricError
from .matching import ZERO_COUNTS, Counts, confusion_counts, match

# Corruption set aggregated into CmAP / MCmAP, in report order.
CORRUPTIONS: Tuple[str, ...] = ("fog", "sunflare", "snow")
NONE_LABEL = "none"


class IncompleteError(ValueError):
    def __init__(self, message: str, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__(f"{message}: missing {', '.join(self.missing)}")


def average_confidence(records) -> float:
    """Pooled mean confidence over every detection of every record.

    Accepts PredictionRecords or plain sequences of Detections.
    """
    confs = []
    for r in records:
        dets = getattr(r, "detections", r)
        confs.extend(d.confidence for d in dets)
    if not confs:
        raise UndefinedMetricError("average confidence is undefined without detections")
    # exact rational mean, rounded once: n identical confidences give that value back
    return float(sum(map(Fraction, confs)) / len(confs))


def _precision_envelope_area(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def ranked_hits(label: str, images: Sequence[Tuple[Sequence[Detection], Sequence[GroundTruthBox]]],
                iou_threshold: float) -> Tuple[List[bool], int]:
    """TP flags of one class's detections in global confidence order, plus the positive count.

    Order is descending confidence, then image position, then file order.
    """
    scored = []
    n_pos = 0
    for img_idx, (preds, truth) in enumerate(images):
        cls_preds = [p for p in preds if p.label == label]
        cls_truth = [t for t in truth if t.label == label]
        n_pos += len(cls_truth)
        matched = {p for p, _, _ in match(cls_preds, cls_truth, iou_threshold).pairs}
        for k, p in enumerate(cls_preds):
            scored.append((-p.confidence, img_idx, k, k in matched))
    scored.sort(key=lambda s: s[:3])
    return [s[3] for s in scored], n_pos


def average_precision(label: str, images: Sequence[Tuple[Sequence[Detection], Sequence[GroundTruthBox]]],
                      iou_threshold: float = 0.5) -> float:
    """Every-point interpolated AP for ``label`` pooled over ``(predictions, truth)`` pairs."""
    hits, n_pos = ranked_hits(label, images, iou_threshold)
    if n_pos == 0:
        raise UndefinedMetricError(f"class {label!r} has no ground-truth instances")
    if not hits:
        return 0.0
    tp = np.cumsum(hits, dtype=np.float64)
    fp = np.cumsum(np.logical_not(hits), dtype=np.float64)
    return _precision_envelope_area(tp / n_pos, tp / (tp + fp))


def mean_ap(per_class_ap) -> float:
    values = list(per_class_ap.values()) if isinstance(per_class_ap, Mapping) else list(per_class_ap)
    if not values:
        raise UndefinedMetricError("mAP needs at least one class with ground truth")
    return math.fsum(values) / len(values)


def cmap(per_intensity: Mapping) -> float:
    """Sum of one corruption's mAP over the low, medium and high intensities."""
    by_level = {Intensity(k): v for k, v in per_intensity.items()}
    missing = [i.value for i in INTENSITIES if i not in by_level]
    if missing:
        raise IncompleteError("incomplete intensity cells", missing)
    return math.fsum(by_level[i] for i in INTENSITIES)


def mcmap(cmaps: Mapping[str, float]) -> float:
    """Mean of CmAP over the fog, sunflare and snow corruptions."""
    missing = [c for c in CORRUPTIONS if c not in cmaps]
    if missing:
        raise IncompleteError("incomplete corruption run", missing)
    return math.fsum(cmaps[c] for c in CORRUPTIONS) / len(CORRUPTIONS)


def misclassification_error(counts) -> float:
    tp, tn, fp, fn = counts
    total = tp + tn + fp + fn
    if total == 0:
        raise UndefinedMetricError("misclassification error is undefined for all-zero counts")
    return (fp + fn) / total


@dataclass(frozen=True)
class FlipSequence:
    """Prediction sets for successive perturbed copies of one image, sharing one ground truth."""

    image_id: str
    frames: Tuple[Tuple[Detection, ...], ...]
    ground_truth: Tuple[GroundTruthBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(tuple(f) for f in self.frames))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        if len(self.frames) < 2:
            raise ValueError(f"{self.image_id}: a flip sequence needs at least 2 frames")


def object_labels(seq: FlipSequence, iou_threshold: float) -> List[List[str]]:
    """Per ground-truth object, the matched predicted label in each frame (``"none"`` if unmatched)."""
    tracks = [[] for _ in seq.ground_truth]
    for frame in seq.frames:
        assigned = match(frame, seq.ground_truth, iou_threshold).assignment()
        for g, track in enumerate(tracks):
            track.append(frame[assigned[g]].label if g in assigned else NONE_LABEL)
    return tracks


def count_flips(labels: Sequence[str]) -> int:
    return sum(a != b for a, b in zip(labels, labels[1:]))


def flip_counts(sequences: Sequence[FlipSequence], iou_threshold: float = 0.5) -> Tuple[int, int]:
    """(total flips, total object transitions) over ``sequences``."""
    lengths = {len(s.frames) for s in sequences}
    if len(lengths) > 1:
        ragged = sorted(s.image_id for s in sequences if len(s.frames) != len(sequences[0].frames))
        raise ValueError(f"flip sequences have mixed lengths {sorted(lengths)}; offending images: {ragged}")
    flips = transitions = 0
    for seq in sequences:
        for track in object_labels(seq, iou_threshold):
            flips += count_flips(track)
            transitions += len(track) - 1
    return flips, transitions


def flip_probability(sequences: Sequence[FlipSequence], iou_threshold: float = 0.5) -> float:
    """Share of consecutive-frame transitions in which an object's matched label changes."""
    flips, transitions = flip_counts(sequences, iou_threshold)
    if transitions == 0:
        raise UndefinedMetricError("flip probability is undefined without ground-truth objects")
    return flips / transitions


@dataclass
class EvaluationReport:
    kind: str
    level: Optional[object]
    per_class_ap: Dict[str, float]
    map: Optional[float]
    avg_confidence: Optional[float]
    counts: Counts
    misclassification_error: Optional[float]
    n_images: int = 0

    @property
    def key(self) -> str:
        return "clean" if self.kind == "clean" else f"{self.kind}/{self.level}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "level": self.level,
            "n_images": self.n_images,
            "per_class_ap": dict(self.per_class_ap),
            "map": self.map,
            "avg_confidence": self.avg_confidence,
            "counts": dict(self.counts._asdict()),
            "misclassification_error": self.misclassification_error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        c = d["counts"]
        return cls(
            kind=d["kind"],
            level=d["level"],
            per_class_ap=dict(d["per_class_ap"]),
            map=d["map"],
            avg_confidence=d["avg_confidence"],
            counts=Counts(c["tp"], c["tn"], c["fp"], c["fn"]),
            misclassification_error=d["misclassification_error"],
            n_images=d.get("n_images", 0),
        )


def evaluate_cell(kind: str, level, images: Mapping[str, Tuple[Sequence[Detection], Sequence[GroundTruthBox]]],
                  registry: ClassRegistry, iou_threshold: float = 0.5) -> EvaluationReport:
    """Score one corruption cell. ``images`` maps image id to ``(predictions, truth)``.

    Images are reduced in sorted-id order so float sums do not depend on input order.
    """
    ordered = [images[k] for k in sorted(images)]
    per_class = {}
    for label in registry:
        try:
            per_class[label] = average_precision(label, ordered, iou_threshold)
        except UndefinedMetricError:
            continue
    counts = ZERO_COUNTS
    for preds, truth in ordered:
        counts = counts + confusion_counts(match(preds, truth, iou_threshold))
    try:
        avg_conf = average_confidence(p for p, _ in ordered)
    except UndefinedMetricError:
        avg_conf = None
    try:
        err = misclassification_error(counts)
    except UndefinedMetricError:
        err = None
    if isinstance(level, Intensity):
        level = level.value
    return EvaluationReport(
        kind=kind,
        level=level,
        per_class_ap=per_class,
        map=mean_ap(per_class) if per_class else None,
        avg_confidence=avg_conf,
        counts=counts,
        misclassification_error=err,
        n_images=len(ordered),
    )


@dataclass
class AggregateReport:
    cmap: Dict[str, float] = field(default_factory=dict)
    mcmap: Optional[float] = None
    flip_probability: Optional[float] = None
    incomplete: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cmap": dict(self.cmap),
            "mcmap": self.mcmap,
            "flip_probability": self.flip_probability,
            "incomplete": list(self.incomplete),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateReport":
        return cls(dict(d.get("cmap", {})), d.get("mcmap"), d.get("flip_probability"), list(d.get("incomplete", [])))


def aggregate(reports: Iterable[EvaluationReport]) -> AggregateReport:
    """CmAP per weather corruption and MCmAP; missing or mAP-less cells are listed in ``incomplete``."""
    grid = {}
    for r in reports:
        if r.kind in CORRUPTIONS and r.map is not None:
            grid[(r.kind, str(r.level))] = r.map
    out = AggregateReport()
    for c in CORRUPTIONS:
        missing = [f"{c}/{i.value}" for i in INTENSITIES if (c, i.value) not in grid]
        if missing:
            out.incomplete.extend(missing)
            continue
        out.cmap[c] = cmap({i.value: grid[(c, i.value)] for i in INTENSITIES})
    if not out.incomplete:
        out.mcmap = mcmap(out.cmap)
    return out

