"""Geometric primitives, label types, and detection-to-ground-truth matching.

Conventions used everywhere downstream:

* boxes are absolute pixels, ``(x_min, y_min, x_max, y_max)``, top-left
  origin, x rightward, y downward; normalized forms exist only at format
  boundaries,
* matching is greedy by descending confidence, one-to-one, and restricted
  to a single class unless explicitly class-agnostic,
* confidence ties break by ascending detection index, IoU ties by
  ascending ground-truth index, so results are fully deterministic.

All types are immutable values and all operations are pure functions, so
everything here is safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, EmptyClipError, GeometryError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box. Coordinates must be finite with min <= max.

    Raw model output may stray outside the image (including negative
    coordinates); ``clip_to_image`` normalizes such boxes before they are
    stored, and ``AnnotatedImage`` enforces in-bounds (hence non-negative)
    coordinates for everything persisted.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise GeometryError(f"non-finite box coordinate: {self!r}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(f"box min exceeds max: {self!r}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when the union is empty."""
    ix_min = max(a.x_min, b.x_min)
    iy_min = max(a.y_min, b.y_min)
    ix_max = min(a.x_max, b.x_max)
    iy_max = min(a.y_max, b.y_max)
    inter = max(0.0, ix_max - ix_min) * max(0.0, iy_max - iy_min)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def clip_to_image(b: BBox, width: float, height: float) -> BBox:
    """Clamp a box to [0, width] x [0, height].

    Raises EmptyClipError when the box has no overlap with the image at
    all (touching the border still counts as overlap).
    """
    if width <= 0 or height <= 0:
        raise ConfigError(f"image dimensions must be positive, got {width}x{height}")
    if b.x_min > width or b.x_max < 0 or b.y_min > height or b.y_max < 0:
        raise EmptyClipError(f"box {b.as_xyxy()} lies entirely outside {width}x{height}")
    return BBox(
        min(max(b.x_min, 0.0), float(width)),
        min(max(b.y_min, 0.0), float(height)),
        min(max(b.x_max, 0.0), float(width)),
        min(max(b.y_max, 0.0), float(height)),
    )


@dataclass(frozen=True)
class ClassSet:
    """Ordered, unique, case-sensitive class names; list index is the class id."""

    names: tuple[str, ...]

    def __init__(self, names: Sequence[str]):
        names = tuple(names)
        if not names:
            raise ConfigError("class set must not be empty")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate class names: {names}")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise ConfigError(f"class id {class_id} out of range for {len(self.names)} classes")
        return self.names[class_id]

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown class {name!r}; known classes: {list(self.names)}") from None

    def ids(self) -> range:
        return range(len(self.names))


@dataclass(frozen=True)
class Detection:
    """A predicted box with class id and confidence in [0, 1]."""

    bbox: BBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if self.class_id < 0:
            raise GeometryError(f"negative class id: {self.class_id}")
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise GeometryError(f"confidence outside [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class GroundTruthBox:
    """A labeled box without confidence."""

    bbox: BBox
    class_id: int

    def __post_init__(self):
        if self.class_id < 0:
            raise GeometryError(f"negative class id: {self.class_id}")


@dataclass(frozen=True)
class MaskAnnotation:
    """Segmentation mask, stored either as run-length counts or a polygon.

    ``rle`` uses alternating run lengths over row-major pixels, starting
    with a background (off) run; the counts must sum to width * height.
    ``polygon`` is a closed vertex list of at least 3 points inside the
    image bounds. Exactly one of the two encodings is present.
    """

    class_id: int
    width: int
    height: int
    rle: Optional[tuple[int, ...]] = None
    polygon: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.class_id < 0:
            raise GeometryError(f"negative class id: {self.class_id}")
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"mask dimensions must be positive: {self.width}x{self.height}")
        if (self.rle is None) == (self.polygon is None):
            raise GeometryError("mask must carry exactly one of rle or polygon")
        if self.rle is not None:
            object.__setattr__(self, "rle", tuple(int(c) for c in self.rle))
            if any(c < 0 for c in self.rle):
                raise GeometryError("negative run length")
            if sum(self.rle) != self.width * self.height:
                raise GeometryError(
                    f"run lengths sum to {sum(self.rle)}, expected {self.width * self.height}"
                )
        if self.polygon is not None:
            poly = tuple((float(x), float(y)) for x, y in self.polygon)
            object.__setattr__(self, "polygon", poly)
            if len(poly) < 3:
                raise GeometryError("polygon needs at least 3 vertices")
            for x, y in poly:
                if not (0.0 <= x <= self.width and 0.0 <= y <= self.height):
                    raise GeometryError(f"polygon vertex ({x}, {y}) outside {self.width}x{self.height}")


def encode_rle(flat: Iterable[bool], width: int, height: int, class_id: int) -> MaskAnnotation:
    """Encode a row-major boolean mask as alternating off/on run lengths.

    The first run is always a background run (possibly zero-length when
    the mask starts on).
    """
    runs: list[int] = []
    current = False
    length = 0
    for v in flat:
        v = bool(v)
        if v == current:
            length += 1
        else:
            runs.append(length)
            current = v
            length = 1
    runs.append(length)
    return MaskAnnotation(class_id=class_id, width=width, height=height, rle=tuple(runs))


def decode_rle(mask: MaskAnnotation) -> list[bool]:
    """Inverse of encode_rle: row-major pixel values."""
    if mask.rle is None:
        raise GeometryError("mask has no run-length encoding")
    flat: list[bool] = []
    on = False
    for run in mask.rle:
        flat.extend([on] * run)
        on = not on
    return flat


def box_mask_rle(box: BBox, width: int, height: int, class_id: int) -> MaskAnnotation:
    """Run-length mask covering the integer-pixel interior of a box."""
    x0 = int(min(max(round(box.x_min), 0), width))
    x1 = int(min(max(round(box.x_max), 0), width))
    y0 = int(min(max(round(box.y_min), 0), height))
    y1 = int(min(max(round(box.y_max), 0), height))
    flat = [False] * (width * height)
    for row in range(y0, y1):
        for col in range(x0, x1):
            flat[row * width + col] = True
    return encode_rle(flat, width, height, class_id)


@dataclass(frozen=True)
class AnnotatedImage:
    """An image id with its label set; every box must lie inside the image."""

    image_id: str
    width: int
    height: int
    ground_truths: tuple[GroundTruthBox, ...] = ()
    masks: Optional[tuple[MaskAnnotation, ...]] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise GeometryError(f"image dimensions must be positive: {self.width}x{self.height}")
        object.__setattr__(self, "ground_truths", tuple(self.ground_truths))
        for gt in self.ground_truths:
            b = gt.bbox
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise GeometryError(
                    f"box {b.as_xyxy()} outside image {self.image_id!r} ({self.width}x{self.height})"
                )
        if self.masks is not None:
            object.__setattr__(self, "masks", tuple(self.masks))
            for m in self.masks:
                if (m.width, m.height) != (self.width, self.height):
                    raise GeometryError(
                        f"mask dimensions {m.width}x{m.height} do not match image "
                        f"{self.image_id!r} ({self.width}x{self.height})"
                    )

    def with_masks(self, masks: Sequence[MaskAnnotation]) -> "AnnotatedImage":
        return AnnotatedImage(self.image_id, self.width, self.height, self.ground_truths, tuple(masks))


@dataclass(frozen=True)
class MatchResult:
    """Outcome of one-to-one matching at a fixed IoU threshold.

    ``detection_matches[i]`` is the matched ground-truth index for the
    i-th considered detection or None for a false positive;
    ``gt_matches[j]`` is the matching detection index or None for a false
    negative. Indices refer to the filtered (considered) lists; the
    original positions are kept in ``detection_indices``/``gt_indices``.
    """

    iou_threshold: float
    detection_matches: tuple[Optional[int], ...]
    gt_matches: tuple[Optional[int], ...]
    detection_indices: tuple[int, ...] = field(default=())
    gt_indices: tuple[int, ...] = field(default=())

    @property
    def num_tp(self) -> int:
        return sum(1 for m in self.detection_matches if m is not None)

    @property
    def num_fp(self) -> int:
        return sum(1 for m in self.detection_matches if m is None)

    @property
    def num_fn(self) -> int:
        return sum(1 for m in self.gt_matches if m is None)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    iou_thr: float,
    class_id: Optional[int] = None,
) -> MatchResult:
    """Greedy one-to-one matching of detections against ground truths.

    Detections are visited in descending confidence (ties by input
    index); each claims the still-unmatched ground truth with the highest
    IoU >= ``iou_thr`` (IoU ties by ground-truth index). With ``class_id``
    set, only that class participates; ``None`` matches class-agnostically
    (used by the confusion matrix).
    """
    if not (0.0 < iou_thr <= 1.0):
        raise ConfigError(f"IoU threshold must be in (0, 1], got {iou_thr}")

    if class_id is None:
        det_idx = list(range(len(dets)))
        gt_idx = list(range(len(gts)))
    else:
        det_idx = [i for i, d in enumerate(dets) if d.class_id == class_id]
        gt_idx = [j for j, g in enumerate(gts) if g.class_id == class_id]

    order = sorted(range(len(det_idx)), key=lambda k: (-dets[det_idx[k]].confidence, k))
    det_matches: list[Optional[int]] = [None] * len(det_idx)
    gt_matches: list[Optional[int]] = [None] * len(gt_idx)

    for k in order:
        det = dets[det_idx[k]]
        best_j: Optional[int] = None
        best_iou = 0.0
        for j, gi in enumerate(gt_idx):
            if gt_matches[j] is not None:
                continue
            v = iou(det.bbox, gts[gi].bbox)
            if v >= iou_thr and v > best_iou:
                best_iou = v
                best_j = j
        if best_j is not None:
            det_matches[k] = best_j
            gt_matches[best_j] = k

    return MatchResult(
        iou_threshold=iou_thr,
        detection_matches=tuple(det_matches),
        gt_matches=tuple(gt_matches),
        detection_indices=tuple(det_idx),
        gt_indices=tuple(gt_idx),
    )
