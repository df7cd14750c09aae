"""herdpipe: surveillance-video auto-annotation, distillation orchestration,
and detection evaluation."""

from .core import (
    AnnotatedImage,
    BBox,
    ClassSet,
    Detection,
    GroundTruthBox,
    MaskAnnotation,
    MatchResult,
    clip_to_image,
    iou,
    match_detections,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedImage",
    "BBox",
    "ClassSet",
    "Detection",
    "GroundTruthBox",
    "MaskAnnotation",
    "MatchResult",
    "clip_to_image",
    "iou",
    "match_detections",
    "__version__",
]
