"""Greedy prediction-to-ground-truth assignment and confusion counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .core import Detection, GroundTruthBox, iou_matrix


class Counts(NamedTuple):
    tp: int
    tn: int
    fp: int
    fn: int

    def __add__(self, other):
        return Counts(*(a + b for a, b in zip(self, other)))


ZERO_COUNTS = Counts(0, 0, 0, 0)


@dataclass(frozen=True)
class MatchResult:
    pairs: Tuple[Tuple[int, int, float], ...]
    unmatched_predictions: Tuple[int, ...]
    unmatched_ground_truth: Tuple[int, ...]
    label_correct: Tuple[bool, ...]

    def assignment(self) -> dict:
        """Ground-truth index -> prediction index for matched pairs."""
        return {g: p for p, g, _ in self.pairs}


def confidence_order(predictions: Sequence[Detection]) -> List[int]:
    """Indices by descending confidence; equal confidences keep file order."""
    return sorted(range(len(predictions)), key=lambda i: -predictions[i].confidence)


def match(predictions: Sequence[Detection], truth: Sequence[GroundTruthBox], iou_threshold: float) -> MatchResult:
    """Greedily assign predictions to ground truth.

    Predictions are visited in descending confidence (ties in file order); each
    claims the unclaimed truth box with the highest IoU at or above
    ``iou_threshold`` (ties to the lowest truth index). Class agreement is
    recorded per pair but never prevents a match, so mislabelled detections stay
    visible as wrong-label pairs.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    ious = iou_matrix([p.bbox for p in predictions], [t.bbox for t in truth])
    claimed = np.zeros(len(truth), dtype=bool)
    pairs, unmatched = [], []
    for i in confidence_order(predictions):
        if len(truth) == 0:
            unmatched.append(i)
            continue
        row = np.where(claimed, -1.0, ious[i])
        j = int(np.argmax(row))
        if row[j] >= iou_threshold:
            claimed[j] = True
            pairs.append((i, j, float(ious[i, j])))
        else:
            unmatched.append(i)
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_predictions=tuple(sorted(unmatched)),
        unmatched_ground_truth=tuple(int(j) for j in np.flatnonzero(~claimed)),
        label_correct=tuple(predictions[i].label == truth[j].label for i, j, _ in pairs),
    )


def confusion_counts(m: MatchResult) -> Counts:
    """(TP, TN, FP, FN) with TN fixed at 0; a wrong-label pair counts as a false positive."""
    tp = sum(m.label_correct)
    wrong = len(m.pairs) - tp
    return Counts(tp, 0, len(m.unmatched_predictions) + wrong, len(m.unmatched_ground_truth))
