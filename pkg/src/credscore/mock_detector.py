"""Parametric stand-in detector whose outputs degrade predictably with corruption severity."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .core import BBox, ClassRegistry, CorruptionSpec, Detection, GroundTruthBox, Intensity
from .rng import Rng

DRAWS_PER_BOX = 8


def _default_intensity_severity() -> Dict[str, float]:
    return {"low": 0.33, "medium": 0.66, "high": 1.0}


@dataclass(frozen=True)
class DegradationProfile:
    """How detections degrade with severity ``s`` in [0, 1].

    Rates are per unit of severity: at severity ``s`` a box is dropped with
    probability ``drop_rate * s`` and relabelled with probability
    ``label_flip_rate * s``.
    """

    base_confidence: float = 0.95
    confidence_decay: float = 0.0
    label_flip_rate: float = 0.0
    drop_rate: float = 0.0
    bbox_jitter: float = 0.0
    confidence_jitter: float = 0.0
    intensity_severity: Dict[str, float] = field(default_factory=_default_intensity_severity)
    degree_scale: float = 5.0  # Gaussian degree d maps to d / degree_scale

    def __post_init__(self):
        if not 0.0 <= self.base_confidence <= 1.0:
            raise ValueError("base_confidence must lie in [0, 1]")
        for name in ("label_flip_rate", "drop_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("confidence_decay", "bbox_jitter", "confidence_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.degree_scale <= 0:
            raise ValueError("degree_scale must be positive")
        sev = dict(self.intensity_severity)
        if set(sev) != {i.value for i in Intensity}:
            raise ValueError("intensity_severity needs exactly low, medium and high")
        if not all(0.0 <= v <= 1.0 for v in sev.values()):
            raise ValueError("intensity severities must lie in [0, 1]")
        object.__setattr__(self, "intensity_severity", sev)

    def severity(self, spec: Optional[CorruptionSpec]) -> float:
        if spec is None:
            return 0.0
        if isinstance(spec.level, Intensity):
            return self.intensity_severity[spec.level.value]
        return min(1.0, spec.level / self.degree_scale)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationProfile":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown profile fields: {sorted(unknown)}")
        return cls(**d)


def load_profile(path) -> DegradationProfile:
    return DegradationProfile.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _jitter_axis(lo: float, hi: float, amp: float, u_lo: float, u_hi: float) -> Tuple[float, float]:
    new_lo, new_hi = lo + amp * (2.0 * u_lo - 1.0), hi + amp * (2.0 * u_hi - 1.0)
    # keep the original extent rather than emit a degenerate box
    return (new_lo, new_hi) if new_lo < new_hi else (lo, hi)


def detect(truth: Sequence[GroundTruthBox], profile: DegradationProfile, spec: Optional[CorruptionSpec],
           rng: Rng, registry: Optional[ClassRegistry] = None) -> List[Detection]:
    """Emit at most one detection per truth box, degraded according to ``profile``.

    Each box consumes a fixed block of draws whatever happens to it, so runs
    at different severities with the same seed share their random numbers.
    """
    registry = registry or ClassRegistry()
    s = profile.severity(spec)
    p_drop = min(1.0, profile.drop_rate * s)
    p_flip = min(1.0, profile.label_flip_rate * s)
    amp = profile.bbox_jitter * s
    out = []
    for box in truth:
        u = rng.uniform(DRAWS_PER_BOX)
        if u[0] < p_drop:
            continue
        label = box.label
        if u[1] < p_flip:
            others = [c for c in registry if c != box.label]
            if others:
                label = others[min(int(u[2] * len(others)), len(others) - 1)]
        conf = profile.base_confidence - profile.confidence_decay * s
        if profile.confidence_jitter:
            conf += profile.confidence_jitter * (2.0 * u[3] - 1.0)
        conf = min(1.0, max(0.0, conf))
        b = box.bbox
        if amp:
            left, right = _jitter_axis(b.left, b.right, amp, u[4], u[6])
            top, bottom = _jitter_axis(b.top, b.bottom, amp, u[5], u[7])
            b = BBox(float(left), float(top), float(right), float(bottom))
        out.append(Detection(label, b, float(conf)))
    return out
