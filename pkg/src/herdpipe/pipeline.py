"""Dataset pipeline stages: frame extraction, preprocessing, splitting,
and train-set augmentation. Everything is seeded and bit-reproducible.

Randomness discipline: one 64-bit root seed; every consumer derives its
own stream via ``derive_seed`` so results never depend on iteration or
thread order. Normalization (mean/std) is a trainer-side tensor transform
and is therefore recorded as metadata, never applied to pixel bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .core import AnnotatedImage, BBox, GroundTruthBox, clip_to_image
from .errors import ConfigError, DatasetError, EmptyClipError
from .raster import (
    RasterImage,
    adjust_brightness,
    adjust_contrast,
    box_blur,
    crop,
    save_image,
    to_grayscale,
)

MIN_KEPT_BOX_AREA_FRACTION = 0.10  # crop drops boxes clipped below this


@dataclass(frozen=True)
class PipelineConfig:
    frame_stride: int = 10
    brightness_factor: float = 1.2
    contrast_factor: float = 1.5
    normalize_mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    normalize_std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    noise_kernel: int = 3
    split_fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    crop_max_zoom: float = 0.35
    grayscale_fraction: float = 0.20
    outputs_per_train_image: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.frame_stride < 1:
            raise ConfigError(f"frame_stride must be >= 1, got {self.frame_stride}")
        if self.noise_kernel < 1 or self.noise_kernel % 2 == 0:
            raise ConfigError(f"noise_kernel must be odd and >= 1, got {self.noise_kernel}")
        fr = tuple(float(f) for f in self.split_fractions)
        object.__setattr__(self, "split_fractions", fr)
        if len(fr) != 3 or any(f < 0 or f > 1 for f in fr):
            raise ConfigError(f"split_fractions must be three values in [0, 1]: {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split_fractions must sum to 1, got {sum(fr)}")
        if not 0.0 <= self.crop_max_zoom < 1.0:
            raise ConfigError(f"crop_max_zoom must be in [0, 1), got {self.crop_max_zoom}")
        if not 0.0 <= self.grayscale_fraction <= 1.0:
            raise ConfigError(f"grayscale_fraction must be in [0, 1]: {self.grayscale_fraction}")
        if self.outputs_per_train_image < 1:
            raise ConfigError("outputs_per_train_image must be >= 1")
        mean = tuple(float(v) for v in self.normalize_mean)
        std = tuple(float(v) for v in self.normalize_std)
        object.__setattr__(self, "normalize_mean", mean)
        object.__setattr__(self, "normalize_std", std)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**doc)

    def normalization_metadata(self) -> dict:
        return {"normalize_mean": list(self.normalize_mean),
                "normalize_std": list(self.normalize_std)}


def derive_seed(root_seed: int, *tokens: str) -> int:
    """Stable 64-bit sub-seed for an independent random stream."""
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for t in tokens:
        h.update(b"\x00")
        h.update(str(t).encode())
    return int.from_bytes(h.digest()[:8], "big")


# -- frame extraction ---------------------------------------------------------


def stride_indices(frame_count: int, stride: int) -> list[int]:
    """Frame indices 0, stride, 2*stride, ... below frame_count."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if frame_count < 0:
        raise ConfigError(f"frame_count must be >= 0, got {frame_count}")
    return list(range(0, frame_count, stride))


def extract_video_frames(video_path: Path, stride: int, out_dir: Path) -> list[Path]:
    """Decode a video and write every stride-th frame as
    ``<video-id>_<frameindex>.png``. Needs the optional opencv dependency."""
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    try:
        import cv2
    except ImportError as e:
        raise ConfigError(
            "video decoding needs opencv-python-headless (install the 'video' extra)"
        ) from e
    video_path = Path(video_path)
    cap = cv2.VideoCapture(str(video_path))
    if not cap.isOpened():
        raise DatasetError(f"cannot open video source {video_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    video_id = video_path.stem
    written = []
    index = 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if index % stride == 0:
            rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
            img = RasterImage.from_array(rgb)
            path = out_dir / f"{video_id}_{index}.png"
            save_image(img, path)
            written.append(path)
        index += 1
    cap.release()
    return written


# -- preprocessing -------------------------------------------------------------


def preprocess(img: RasterImage, cfg: PipelineConfig) -> RasterImage:
    """Brightness, then pivot-128 contrast, then box-mean noise reduction.

    Normalization stays out of the pixel bytes by design; fetch it via
    cfg.normalization_metadata() and hand it to the trainer.
    """
    out = adjust_brightness(img, cfg.brightness_factor)
    out = adjust_contrast(out, cfg.contrast_factor)
    out = box_blur(out, cfg.noise_kernel)
    return out


# -- splitting -----------------------------------------------------------------

SPLIT_NAMES = ("train", "valid", "test")


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, str]  # image id -> split name
    seed: int

    def ids_for(self, split: str) -> list[str]:
        return [i for i, s in self.assignment.items() if s == split]

    def counts(self) -> tuple[int, int, int]:
        return tuple(sum(1 for s in self.assignment.values() if s == name) for name in SPLIT_NAMES)


def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, ...]:
    """Per-split counts: floor(n * f) for the leading splits, remainder to
    the last. Reproduces the reference 1502 -> (1051, 300, 151)."""
    if n < 0:
        raise ConfigError("cannot split a negative count")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    counts = [int(math.floor(n * f + 1e-9)) for f in fractions[:-1]]
    counts.append(n - sum(counts))
    if counts[-1] < 0:
        raise ConfigError(f"fractions {fractions} overflow n={n}")
    return tuple(counts)


def split(ids: Sequence[str], fractions: Sequence[float], seed: int) -> SplitAssignment:
    """Deterministic seeded shuffle, then contiguous assignment."""
    if not ids:
        raise ConfigError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate ids in split input")
    counts = split_counts(len(ids), fractions)
    order = list(ids)
    random.Random(derive_seed(seed, "split")).shuffle(order)
    assignment: dict[str, str] = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for i in order[start : start + count]:
            assignment[i] = name
        start += count
    # keep input order in the mapping for stable serialization
    return SplitAssignment({i: assignment[i] for i in ids}, seed)


# -- augmentation --------------------------------------------------------------


@dataclass(frozen=True)
class AugmentedOutput:
    annotations: AnnotatedImage
    pixels: RasterImage
    origin_id: str
    augmented: bool


def _crop_boxes(
    boxes: Sequence[GroundTruthBox], x0: int, y0: int, w: int, h: int
) -> tuple[GroundTruthBox, ...]:
    kept = []
    for gt in boxes:
        b = gt.bbox
        shifted = BBox(b.x_min - x0, b.y_min - y0, b.x_max - x0, b.y_max - y0)
        try:
            clipped = clip_to_image(shifted, w, h)
        except EmptyClipError:
            continue
        if b.area > 0 and clipped.area < MIN_KEPT_BOX_AREA_FRACTION * b.area:
            continue
        kept.append(GroundTruthBox(clipped, gt.class_id))
    return tuple(kept)


def augment_train(
    items: Sequence[tuple[AnnotatedImage, RasterImage]],
    cfg: PipelineConfig,
) -> list[AugmentedOutput]:
    """Emit outputs_per_train_image variants per train image.

    Variant 0 is the untouched original. Each further variant applies a
    random crop with zoom ~ U[0, crop_max_zoom]: the window side fraction
    is 1 - zoom, placed uniformly; boxes are clipped to the window and
    dropped when their clipped area falls below 10% of the original. A
    seeded selection of grayscale_fraction of the train images has all of
    its augmented variants converted to single-channel luma. Augmented
    variants carry box labels only (masks are not transformed).
    """
    for ann, px in items:
        if (ann.width, ann.height) != (px.width, px.height):
            raise DatasetError(
                f"image {ann.image_id!r}: annotation dims {ann.width}x{ann.height} "
                f"!= raster dims {px.width}x{px.height}"
            )
    n_gray = int(math.floor(len(items) * cfg.grayscale_fraction + 1e-9))
    gray_rng = random.Random(derive_seed(cfg.rng_seed, "grayscale"))
    gray_indices = set(gray_rng.sample(range(len(items)), n_gray)) if items else set()

    outputs: list[AugmentedOutput] = []
    for idx, (ann, px) in enumerate(items):
        outputs.append(AugmentedOutput(ann, px, ann.image_id, augmented=False))
        for k in range(1, cfg.outputs_per_train_image):
            rng = random.Random(derive_seed(cfg.rng_seed, "augment", ann.image_id, str(k)))
            zoom = rng.uniform(0.0, cfg.crop_max_zoom)
            side = 1.0 - zoom
            w = max(1, int(math.floor(px.width * side + 0.5)))
            h = max(1, int(math.floor(px.height * side + 0.5)))
            x0 = rng.randint(0, px.width - w)
            y0 = rng.randint(0, px.height - h)
            cropped = crop(px, x0, y0, w, h)
            if idx in gray_indices:
                cropped = to_grayscale(cropped)
            boxes = _crop_boxes(ann.ground_truths, x0, y0, w, h)
            out_ann = AnnotatedImage(f"{ann.image_id}_aug{k}", w, h, boxes)
            outputs.append(AugmentedOutput(out_ann, cropped, ann.image_id, augmented=True))
    return outputs


def save_preprocessing_metadata(root: Path, cfg: PipelineConfig) -> Path:
    """Record the trainer-side normalization parameters next to the manifest."""
    path = Path(root) / "preprocessing.json"
    path.write_text(json.dumps(cfg.normalization_metadata(), indent=2) + "\n")
    return path
