"""Corruption benchmarks and credibility metrics for 2D object detectors."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BBox,
    ClassRegistry,
    CorruptionSpec,
    Detection,
    GroundTruthBox,
    Intensity,
    Kind,
    Raster,
    UndefinedMetricError,
    iou,
    validate_raster,
)
from .corruption import apply  # noqa: E402
from .matching import confusion_counts, match  # noqa: E402
from .metrics import (  # noqa: E402
    FlipSequence,
    average_confidence,
    average_precision,
    cmap,
    evaluate_cell,
    flip_probability,
    mcmap,
    mean_ap,
    misclassification_error,
)

__all__ = [
    "__version__",
    "BBox",
    "ClassRegistry",
    "CorruptionSpec",
    "Detection",
    "GroundTruthBox",
    "Intensity",
    "Kind",
    "Raster",
    "UndefinedMetricError",
    "iou",
    "validate_raster",
    "apply",
    "confusion_counts",
    "match",
    "FlipSequence",
    "average_confidence",
    "average_precision",
    "cmap",
    "evaluate_cell",
    "flip_probability",
    "mcmap",
    "mean_ap",
    "misclassification_error",
]
