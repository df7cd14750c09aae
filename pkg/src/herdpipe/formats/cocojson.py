"""COCO-style JSON: one self-contained document with images, categories,
and annotations.

Image entries carry the extra keys ``image_id`` (the string id used
everywhere in this toolkit), ``split`` and ``source`` so a document round
trips the in-memory model; standard COCO readers ignore them. Scored
annotations are predictions, unscored ones ground truths. This is the
only format that carries masks.

Quantization: bbox geometry is stored as [x, y, w, h], so the round trip
recovers x_max as x + w, exact only to float addition (about 1e-9
relative). Everything else (ids, classes, masks, scores) is exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

from ..core import AnnotatedImage, BBox, ClassSet, Detection, GroundTruthBox, MaskAnnotation
from ..errors import DatasetError, ParseError
from .manifest import DatasetManifest, ManifestRecord

Predictions = Mapping[str, Sequence[Detection]]


def write_coco_json(
    manifest: Optional[DatasetManifest],
    images: Sequence[AnnotatedImage],
    predictions: Optional[Predictions] = None,
) -> str:
    """Serialize a dataset; ``manifest=None`` yields three empty arrays."""
    if manifest is None:
        if images or predictions:
            raise DatasetError("images/predictions given without a manifest")
        return json.dumps({"images": [], "categories": [], "annotations": []}, indent=2) + "\n"

    by_id = {img.image_id: img for img in images}
    image_entries = []
    coco_ids = {}
    for n, rec in enumerate(manifest.records, start=1):
        coco_ids[rec.image_id] = n
        image_entries.append(
            {
                "id": n,
                "file_name": rec.path,
                "width": rec.width,
                "height": rec.height,
                "image_id": rec.image_id,
                "split": rec.split,
                "source": rec.source,
            }
        )
    categories = [{"id": i + 1, "name": name} for i, name in enumerate(manifest.classes)]

    annotations = []
    ann_id = 1

    def bbox_xywh(b: BBox) -> list[float]:
        return [b.x_min, b.y_min, b.width, b.height]

    def segmentation_of(mask: MaskAnnotation):
        if mask.rle is not None:
            return {"counts": list(mask.rle), "size": [mask.height, mask.width]}
        return [[coord for xy in mask.polygon for coord in xy]]

    for rec in manifest.records:
        img = by_id.get(rec.image_id)
        if img is None:
            raise DatasetError(f"manifest record {rec.image_id!r} has no annotated image")
        masks = img.masks
        if masks is not None and len(masks) != len(img.ground_truths):
            raise DatasetError(
                f"image {rec.image_id!r} has {len(masks)} masks for "
                f"{len(img.ground_truths)} boxes; they must pair by index"
            )
        for i, gt in enumerate(img.ground_truths):
            entry = {
                "id": ann_id,
                "image_id": coco_ids[rec.image_id],
                "category_id": gt.class_id + 1,
                "bbox": bbox_xywh(gt.bbox),
                "area": gt.bbox.area,
            }
            if masks is not None:
                entry["segmentation"] = segmentation_of(masks[i])
            annotations.append(entry)
            ann_id += 1
    if predictions:
        for rec in manifest.records:
            for d in predictions.get(rec.image_id, ()):
                annotations.append(
                    {
                        "id": ann_id,
                        "image_id": coco_ids[rec.image_id],
                        "category_id": d.class_id + 1,
                        "bbox": bbox_xywh(d.bbox),
                        "area": d.bbox.area,
                        "score": d.confidence,
                    }
                )
                ann_id += 1

    doc = {"images": image_entries, "categories": categories, "annotations": annotations}
    return json.dumps(doc, indent=2) + "\n"


def parse_coco_json(
    text: str,
) -> tuple[Optional[DatasetManifest], list[AnnotatedImage], dict[str, list[Detection]]]:
    """Exact inverse of write_coco_json.

    External COCO files work too: missing ``image_id``/``split``/``source``
    keys default to the file-name stem, "train", and "human".
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"not valid JSON: {e}") from e
    for key in ("images", "categories", "annotations"):
        if key not in doc:
            raise ParseError(f"missing required key {key!r}")

    if not doc["images"] and not doc["categories"]:
        if doc["annotations"]:
            raise ParseError("annotations present but no images")
        return None, [], {}

    categories = sorted(doc["categories"], key=lambda c: c["id"])
    for c in categories:
        if "id" not in c or "name" not in c:
            raise ParseError(f"category missing id/name: {c}")
    class_of_category = {c["id"]: i for i, c in enumerate(categories)}
    classes = ClassSet([c["name"] for c in categories])

    records = []
    rec_by_coco_id: dict[int, ManifestRecord] = {}
    for entry in doc["images"]:
        missing = {"id", "file_name", "width", "height"} - set(entry)
        if missing:
            raise ParseError(f"image entry missing keys {sorted(missing)}: {entry}")
        image_id = entry.get("image_id") or Path(entry["file_name"]).stem or str(entry["id"])
        rec = ManifestRecord(
            image_id=image_id,
            path=entry["file_name"],
            width=int(entry["width"]),
            height=int(entry["height"]),
            split=entry.get("split", "train"),
            source=entry.get("source", "human"),
        )
        if entry["id"] in rec_by_coco_id:
            raise ParseError(f"duplicate image id {entry['id']}")
        rec_by_coco_id[entry["id"]] = rec
        records.append(rec)
    manifest = DatasetManifest(classes, tuple(records))

    gt_boxes: dict[str, list[GroundTruthBox]] = {r.image_id: [] for r in records}
    gt_masks: dict[str, list[MaskAnnotation]] = {r.image_id: [] for r in records}
    has_seg: dict[str, bool] = {r.image_id: False for r in records}
    predictions: dict[str, list[Detection]] = {}
    for ann in doc["annotations"]:
        missing = {"id", "image_id", "category_id", "bbox"} - set(ann)
        if missing:
            raise ParseError(f"annotation missing keys {sorted(missing)}: {ann}")
        rec = rec_by_coco_id.get(ann["image_id"])
        if rec is None:
            raise ParseError(f"annotation {ann['id']} references unknown image id {ann['image_id']}")
        if ann["category_id"] not in class_of_category:
            raise ParseError(f"annotation {ann['id']} references unknown category {ann['category_id']}")
        class_id = class_of_category[ann["category_id"]]
        x, y, w, h = ann["bbox"]
        if w < 0 or h < 0:
            raise ParseError(f"annotation {ann['id']} has negative bbox size")
        # xywh -> xyxy reintroduces float rounding; boxes that touched the
        # image edge may overshoot it by an ulp, so clamp that noise away
        x_max = float(x) + float(w)
        y_max = float(y) + float(h)
        if rec.width < x_max <= rec.width * (1 + 1e-9) + 1e-9:
            x_max = float(rec.width)
        if rec.height < y_max <= rec.height * (1 + 1e-9) + 1e-9:
            y_max = float(rec.height)
        bbox = BBox(float(x), float(y), x_max, y_max)
        if "score" in ann:
            if "segmentation" in ann:
                raise ParseError(f"annotation {ann['id']}: segmentation on a scored annotation")
            predictions.setdefault(rec.image_id, []).append(
                Detection(bbox, class_id, float(ann["score"]))
            )
            continue
        gt_boxes[rec.image_id].append(GroundTruthBox(bbox, class_id))
        if "segmentation" in ann:
            has_seg[rec.image_id] = True
            gt_masks[rec.image_id].append(
                _parse_segmentation(ann["segmentation"], class_id, rec.width, rec.height, ann["id"])
            )
        elif has_seg[rec.image_id]:
            raise ParseError(
                f"image {rec.image_id!r} mixes annotations with and without segmentation"
            )

    images = []
    for rec in records:
        masks = tuple(gt_masks[rec.image_id]) if has_seg[rec.image_id] else None
        if masks is not None and len(masks) != len(gt_boxes[rec.image_id]):
            raise ParseError(f"image {rec.image_id!r} mixes annotations with and without segmentation")
        images.append(
            AnnotatedImage(rec.image_id, rec.width, rec.height, tuple(gt_boxes[rec.image_id]), masks)
        )
    return manifest, images, predictions


def _parse_segmentation(seg, class_id: int, width: int, height: int, ann_id) -> MaskAnnotation:
    if isinstance(seg, dict):
        missing = {"counts", "size"} - set(seg)
        if missing:
            raise ParseError(f"annotation {ann_id}: RLE segmentation missing {sorted(missing)}")
        h, w = seg["size"]
        if (w, h) != (width, height):
            raise ParseError(
                f"annotation {ann_id}: RLE size {w}x{h} does not match image {width}x{height}"
            )
        return MaskAnnotation(class_id=class_id, width=width, height=height,
                              rle=tuple(int(c) for c in seg["counts"]))
    if isinstance(seg, list):
        if len(seg) != 1:
            raise ParseError(f"annotation {ann_id}: multi-polygon segmentation unsupported")
        flat = seg[0]
        if len(flat) < 6 or len(flat) % 2 != 0:
            raise ParseError(f"annotation {ann_id}: polygon needs >= 3 (x, y) pairs")
        poly = tuple((float(flat[i]), float(flat[i + 1])) for i in range(0, len(flat), 2))
        return MaskAnnotation(class_id=class_id, width=width, height=height, polygon=poly)
    raise ParseError(f"annotation {ann_id}: unrecognized segmentation payload")
