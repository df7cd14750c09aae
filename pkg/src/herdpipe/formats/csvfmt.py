"""Flat CSV: header ``image_id,class,x_min,y_min,x_max,y_max,confidence,split``,
one row per box, RFC-4180 quoting.

Confidence is empty for ground truths and populated for predictions. The
CSV carries boxes only; image dimensions (and images without any box)
live in the manifest, which parse_csv therefore needs.
"""

from __future__ import annotations

import csv
import io
from typing import Mapping, Optional, Sequence

from ..core import AnnotatedImage, BBox, ClassSet, Detection, GroundTruthBox
from ..errors import ParseError
from .manifest import SPLITS, DatasetManifest

HEADER = ["image_id", "class", "x_min", "y_min", "x_max", "y_max", "confidence", "split"]


def write_csv(
    manifest: DatasetManifest,
    images: Sequence[AnnotatedImage],
    predictions: Optional[Mapping[str, Sequence[Detection]]] = None,
) -> str:
    """Rows ordered by (image id, box index): ground truths, then predictions."""
    by_id = {img.image_id: img for img in images}
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(HEADER)
    for rec in sorted(manifest.records, key=lambda r: r.image_id):
        img = by_id.get(rec.image_id)
        if img is not None:
            for gt in img.ground_truths:
                b = gt.bbox
                writer.writerow(
                    [rec.image_id, manifest.classes.name_of(gt.class_id),
                     repr(b.x_min), repr(b.y_min), repr(b.x_max), repr(b.y_max),
                     "", rec.split]
                )
        for d in (predictions or {}).get(rec.image_id, ()):
            b = d.bbox
            writer.writerow(
                [rec.image_id, manifest.classes.name_of(d.class_id),
                 repr(b.x_min), repr(b.y_min), repr(b.x_max), repr(b.y_max),
                 repr(d.confidence), rec.split]
            )
    return buf.getvalue()


def parse_csv(
    text: str,
    class_set: ClassSet,
    dims: Mapping[str, tuple[int, int]],
) -> tuple[list[AnnotatedImage], dict[str, list[Detection]], dict[str, str]]:
    """Inverse of write_csv for boxes, confidences, and split tags.

    ``dims`` maps image id to (width, height); images absent from the CSV
    (no boxes) are not reconstructed here.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty document, expected a header row") from None
    if header != HEADER:
        raise ParseError(f"unexpected header {header!r}")
    gt_boxes: dict[str, list[GroundTruthBox]] = {}
    predictions: dict[str, list[Detection]] = {}
    splits: dict[str, str] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(HEADER):
            raise ParseError(f"expected {len(HEADER)} fields, got {len(row)}", line=lineno)
        image_id, cls_name, x0, y0, x1, y1, conf, split = row
        if image_id not in dims:
            raise ParseError(f"image id {image_id!r} has no known dimensions", line=lineno)
        if split not in SPLITS:
            raise ParseError(f"unknown split {split!r}", line=lineno)
        prev = splits.setdefault(image_id, split)
        if prev != split:
            raise ParseError(f"image {image_id!r} appears in two splits", line=lineno)
        class_id = class_set.id_of(cls_name)
        try:
            bbox = BBox(float(x0), float(y0), float(x1), float(y1))
        except ValueError as e:
            raise ParseError(f"non-numeric coordinate: {e}", line=lineno) from e
        if conf == "":
            gt_boxes.setdefault(image_id, []).append(GroundTruthBox(bbox, class_id))
        else:
            predictions.setdefault(image_id, []).append(Detection(bbox, class_id, float(conf)))
    images = [
        AnnotatedImage(image_id, dims[image_id][0], dims[image_id][1], tuple(boxes))
        for image_id, boxes in gt_boxes.items()
    ]
    return images, predictions, splits
