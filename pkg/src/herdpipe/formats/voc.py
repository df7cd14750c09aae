"""Pascal-VOC XML: one document per image, integer pixels, 1-based
bounding-box convention (xmin = round(x_min) + 1, xmax = round(x_max))."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET

from ..core import AnnotatedImage, BBox, ClassSet, GroundTruthBox
from ..errors import ParseError


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def write_voc_xml(img: AnnotatedImage, class_set: ClassSet) -> str:
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = img.image_id
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(img.width)
    ET.SubElement(size, "height").text = str(img.height)
    ET.SubElement(size, "depth").text = "3"
    for gt in img.ground_truths:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = class_set.name_of(gt.class_id)
        bnd = ET.SubElement(obj, "bndbox")
        ET.SubElement(bnd, "xmin").text = str(_round_half_up(gt.bbox.x_min) + 1)
        ET.SubElement(bnd, "ymin").text = str(_round_half_up(gt.bbox.y_min) + 1)
        ET.SubElement(bnd, "xmax").text = str(_round_half_up(gt.bbox.x_max))
        ET.SubElement(bnd, "ymax").text = str(_round_half_up(gt.bbox.y_max))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def parse_voc_xml(text: str, class_set: ClassSet, image_id: str = "") -> AnnotatedImage:
    """Inverse of write_voc_xml including the 1-based shift.

    Unknown class names raise a mapping error listing the known classes.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise ParseError(f"not well-formed XML: {e}") from e
    size = root.find("size")
    if size is None:
        raise ParseError("document has no size element")
    try:
        width = int(size.findtext("width", ""))
        height = int(size.findtext("height", ""))
    except ValueError as e:
        raise ParseError(f"size has non-integer width/height: {e}") from e
    if not image_id:
        image_id = root.findtext("filename", "")
    boxes = []
    for obj in root.findall("object"):
        name = obj.findtext("name")
        if name is None:
            raise ParseError("object element has no name")
        class_id = class_set.id_of(name)
        bnd = obj.find("bndbox")
        if bnd is None:
            raise ParseError(f"object {name!r} has no bndbox")
        try:
            coords = {k: int(float(bnd.findtext(k, ""))) for k in ("xmin", "ymin", "xmax", "ymax")}
        except ValueError as e:
            raise ParseError(f"object {name!r} has a non-numeric coordinate: {e}") from e
        x_min = float(coords["xmin"] - 1)
        y_min = float(coords["ymin"] - 1)
        x_max = float(coords["xmax"])
        y_max = float(coords["ymax"])
        # a degenerate (zero-size) box serializes as xmin = xmax + 1
        x_max = max(x_max, x_min)
        y_max = max(y_max, y_min)
        boxes.append(GroundTruthBox(BBox(x_min, y_min, x_max, y_max), class_id))
    return AnnotatedImage(image_id, width, height, tuple(boxes))
