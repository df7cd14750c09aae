"""Conversion between the supported annotation formats.

Every conversion goes through the in-memory model (manifest, images,
predictions); whatever the target format cannot carry is dropped and
reported in the summary, never silently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..core import AnnotatedImage, ClassSet
from ..errors import ConfigError, DatasetError
from .cocojson import parse_coco_json, write_coco_json
from .csvfmt import parse_csv, write_csv
from .manifest import DatasetManifest, ManifestRecord
from .voc import parse_voc_xml, write_voc_xml
from .yolo import parse_yolo_txt, write_yolo_txt

FORMATS = ("coco-json", "voc-xml", "yolo-txt", "csv")


@dataclass
class ConversionSummary:
    input_format: str
    output_format: str
    images: int = 0
    boxes: int = 0
    predictions: int = 0
    masks_dropped: int = 0
    scores_dropped: int = 0
    files_written: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"converted {self.images} images ({self.boxes} boxes"
            + (f", {self.predictions} predictions" if self.predictions else "")
            + f") from {self.input_format} to {self.output_format}",
        ]
        if self.masks_dropped:
            lines.append(f"masks dropped: {self.masks_dropped}")
        if self.scores_dropped:
            lines.append(f"scores dropped: {self.scores_dropped}")
        lines.append(f"files written: {len(self.files_written)}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "input_format": self.input_format,
            "output_format": self.output_format,
            "images": self.images,
            "boxes": self.boxes,
            "predictions": self.predictions,
            "masks_dropped": self.masks_dropped,
            "scores_dropped": self.scores_dropped,
            "files_written": self.files_written,
        }


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e


def _stem(rec: ManifestRecord) -> str:
    return Path(rec.path).stem or rec.image_id


def _read_manifest_nearby(path: Path) -> DatasetManifest | None:
    candidates = [path.with_suffix(".manifest.json"), path.parent / "manifest.json"]
    if path.is_dir():
        candidates = [path / "manifest.json"]
    for cand in candidates:
        if cand.exists():
            return DatasetManifest.from_json(_read_text(cand))
    return None


def read_dataset(path: Path, fmt: str):
    """Read any supported format into (manifest, images, predictions)."""
    path = Path(path)
    if fmt == "coco-json":
        return parse_coco_json(_read_text(path))
    if fmt == "yolo-txt":
        manifest = _read_manifest_nearby(path)
        if manifest is None:
            raise DatasetError(f"yolo-txt input needs a manifest.json next to {path}")
        root = path if path.is_dir() else path.parent
        images = []
        for rec in manifest.records:
            flat = root / f"{_stem(rec)}.txt"
            nested = root / rec.split / "labels" / f"{_stem(rec)}.txt"
            label = flat if flat.exists() else nested
            if label.exists():
                images.append(
                    parse_yolo_txt(_read_text(label), rec.width, rec.height,
                                   manifest.classes, image_id=rec.image_id)
                )
            else:
                images.append(AnnotatedImage(rec.image_id, rec.width, rec.height, ()))
        return manifest, images, {}
    if fmt == "voc-xml":
        if not path.is_dir():
            raise DatasetError(f"voc-xml input must be a directory of .xml files: {path}")
        manifest = _read_manifest_nearby(path)
        xml_files = sorted(path.glob("*.xml"))
        if manifest is None:
            # synthesize: class order is first-seen over sorted file names
            names: list[str] = []
            import xml.etree.ElementTree as ET

            for f in xml_files:
                for obj in ET.fromstring(_read_text(f)).findall("object"):
                    name = obj.findtext("name")
                    if name and name not in names:
                        names.append(name)
            if not names:
                raise DatasetError(f"no classes found in {path} and no manifest.json")
            classes = ClassSet(names)
            images = [parse_voc_xml(_read_text(f), classes, image_id=f.stem) for f in xml_files]
            records = tuple(
                ManifestRecord(img.image_id, f"train/images/{img.image_id}.png",
                               img.width, img.height, split="train", source="human")
                for img in images
            )
            return DatasetManifest(classes, records), images, {}
        images = []
        for rec in manifest.records:
            f = path / f"{_stem(rec)}.xml"
            if f.exists():
                images.append(parse_voc_xml(_read_text(f), manifest.classes, image_id=rec.image_id))
            else:
                images.append(AnnotatedImage(rec.image_id, rec.width, rec.height, ()))
        return manifest, images, {}
    if fmt == "csv":
        manifest = _read_manifest_nearby(path)
        if manifest is None:
            raise DatasetError(f"csv input needs a manifest.json next to {path}")
        dims = {r.image_id: (r.width, r.height) for r in manifest.records}
        images, predictions, _ = parse_csv(_read_text(path), manifest.classes, dims)
        by_id = {img.image_id: img for img in images}
        full = [
            by_id.get(r.image_id, AnnotatedImage(r.image_id, r.width, r.height, ()))
            for r in manifest.records
        ]
        return manifest, full, predictions
    raise ConfigError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def write_dataset(path: Path, fmt: str, manifest, images, predictions, summary: ConversionSummary):
    path = Path(path)
    mask_count = sum(len(img.masks or ()) for img in images)
    score_count = sum(len(v) for v in predictions.values()) if predictions else 0

    if fmt == "coco-json":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(write_coco_json(manifest, images, predictions or None))
        summary.files_written.append(str(path))
        return
    if manifest is None:
        raise DatasetError(f"cannot write an empty dataset as {fmt}")
    if fmt == "yolo-txt":
        path.mkdir(parents=True, exist_ok=True)
        by_id = {img.image_id: img for img in images}
        for rec in manifest.records:
            img = by_id[rec.image_id]
            stripped = AnnotatedImage(img.image_id, img.width, img.height, img.ground_truths)
            out = path / f"{_stem(rec)}.txt"
            out.write_text(write_yolo_txt(stripped))
            summary.files_written.append(str(out))
        (path / "manifest.json").write_text(manifest.to_json())
        summary.files_written.append(str(path / "manifest.json"))
        summary.masks_dropped += mask_count
        summary.scores_dropped += score_count
        return
    if fmt == "voc-xml":
        path.mkdir(parents=True, exist_ok=True)
        by_id = {img.image_id: img for img in images}
        for rec in manifest.records:
            img = by_id[rec.image_id]
            stripped = AnnotatedImage(img.image_id, img.width, img.height, img.ground_truths)
            out = path / f"{_stem(rec)}.xml"
            out.write_text(write_voc_xml(stripped, manifest.classes))
            summary.files_written.append(str(out))
        (path / "manifest.json").write_text(manifest.to_json())
        summary.files_written.append(str(path / "manifest.json"))
        summary.masks_dropped += mask_count
        summary.scores_dropped += score_count
        return
    if fmt == "csv":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(write_csv(manifest, images, predictions))
        summary.files_written.append(str(path))
        sidecar = path.with_suffix(".manifest.json")
        sidecar.write_text(manifest.to_json())
        summary.files_written.append(str(sidecar))
        summary.masks_dropped += mask_count
        return
    raise ConfigError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def convert(input_path: Path, input_format: str, output_path: Path, output_format: str) -> ConversionSummary:
    """Convert between formats, reporting whatever the target drops."""
    for fmt in (input_format, output_format):
        if fmt not in FORMATS:
            raise ConfigError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    manifest, images, predictions = read_dataset(Path(input_path), input_format)
    summary = ConversionSummary(input_format=input_format, output_format=output_format)
    summary.images = len(images)
    summary.boxes = sum(len(img.ground_truths) for img in images)
    summary.predictions = sum(len(v) for v in predictions.values())
    try:
        write_dataset(Path(output_path), output_format, manifest, images, predictions, summary)
    except OSError as e:
        raise DatasetError(f"cannot write {output_path}: {e}") from e
    return summary
