"""Dataset manifest: the index mapping image ids to files, dimensions,
splits, and annotation provenance.

On disk a dataset root holds ``manifest.json`` plus split subdirectories
``train/``, ``valid/``, ``test/``, each with ``images/`` and ``labels/``
(yolo-txt, one file per image).
"""

from __future__ import annotations

import json
import posixpath
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from ..core import AnnotatedImage, ClassSet
from ..errors import DatasetError, ParseError
from .yolo import parse_yolo_txt, write_yolo_txt

SPLITS = ("train", "valid", "test")
SOURCES = ("teacher-auto", "human", "fixture")


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    path: str  # relative to the dataset root, forward slashes
    width: int
    height: int
    split: str = "train"
    source: str = "fixture"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        if self.source not in SOURCES:
            raise DatasetError(f"unknown source {self.source!r}; expected one of {SOURCES}")
        if self.width <= 0 or self.height <= 0:
            raise DatasetError(f"record {self.image_id!r} has non-positive dimensions")
        norm = posixpath.normpath(self.path)
        if posixpath.isabs(self.path) or norm.startswith(".."):
            raise DatasetError(f"record path must be relative without escapes: {self.path!r}")


@dataclass(frozen=True)
class DatasetManifest:
    classes: ClassSet
    records: tuple[ManifestRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate image ids in manifest: {dupes}")

    def record_for(self, image_id: str) -> ManifestRecord:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise DatasetError(f"no manifest record for image id {image_id!r}")

    def ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def split_counts(self) -> dict[str, int]:
        return {s: sum(1 for r in self.records if r.split == s) for s in SPLITS}

    def to_json_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "records": [
                {
                    "image_id": r.image_id,
                    "path": r.path,
                    "width": r.width,
                    "height": r.height,
                    "split": r.split,
                    "source": r.source,
                }
                for r in self.records
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"manifest is not valid JSON: {e}") from e
        for key in ("classes", "records"):
            if key not in doc:
                raise ParseError(f"manifest missing required key {key!r}")
        records = []
        for i, rec in enumerate(doc["records"]):
            missing = {"image_id", "path", "width", "height", "split", "source"} - set(rec)
            if missing:
                raise ParseError(f"manifest record {i} missing keys {sorted(missing)}")
            records.append(
                ManifestRecord(
                    image_id=rec["image_id"],
                    path=rec["path"],
                    width=int(rec["width"]),
                    height=int(rec["height"]),
                    split=rec["split"],
                    source=rec["source"],
                )
            )
        return cls(ClassSet(doc["classes"]), tuple(records))


def save_dataset(
    root: Path,
    manifest: DatasetManifest,
    images: Iterable[AnnotatedImage],
) -> None:
    """Write manifest.json and per-split yolo-txt labels under root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(manifest.to_json())
    by_id = {img.image_id: img for img in images}
    for rec in manifest.records:
        img = by_id.get(rec.image_id)
        if img is None:
            raise DatasetError(f"manifest record {rec.image_id!r} has no annotated image")
        label_dir = root / rec.split / "labels"
        label_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(rec.path).stem or rec.image_id
        (label_dir / f"{stem}.txt").write_text(write_yolo_txt(img))


def load_dataset(path: Path) -> tuple[DatasetManifest, list[AnnotatedImage]]:
    """Load a dataset from its root directory or its manifest.json path."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise DatasetError(f"no manifest found at {manifest_path}")
    manifest = DatasetManifest.from_json(manifest_path.read_text())
    root = manifest_path.parent
    images = []
    for rec in manifest.records:
        stem = Path(rec.path).stem or rec.image_id
        label_path = root / rec.split / "labels" / f"{stem}.txt"
        if label_path.exists():
            img = parse_yolo_txt(label_path.read_text(), rec.width, rec.height, manifest.classes,
                                 image_id=rec.image_id)
        else:
            img = AnnotatedImage(rec.image_id, rec.width, rec.height, ())
        images.append(img)
    return manifest, images


def manifest_for_images(
    classes: ClassSet,
    images: Iterable[AnnotatedImage],
    split: str = "train",
    source: str = "fixture",
    paths: Optional[dict[str, str]] = None,
) -> DatasetManifest:
    """Synthesize a manifest for in-memory images (single split/source)."""
    records = []
    for img in images:
        path = (paths or {}).get(img.image_id, f"{split}/images/{img.image_id}.png")
        records.append(
            ManifestRecord(img.image_id, path, img.width, img.height, split=split, source=source)
        )
    return DatasetManifest(classes, tuple(records))
