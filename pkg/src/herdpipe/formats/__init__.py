"""Serialization and parsing of annotations in the four supported formats
(coco-json, voc-xml, yolo-txt, csv) plus the dataset manifest."""

from .manifest import DatasetManifest, ManifestRecord, load_dataset, save_dataset
from .yolo import parse_yolo_txt, write_yolo_txt
from .cocojson import parse_coco_json, write_coco_json
from .voc import parse_voc_xml, write_voc_xml
from .csvfmt import parse_csv, write_csv
from .convert import FORMATS, ConversionSummary, convert

__all__ = [
    "DatasetManifest",
    "ManifestRecord",
    "load_dataset",
    "save_dataset",
    "parse_yolo_txt",
    "write_yolo_txt",
    "parse_coco_json",
    "write_coco_json",
    "parse_voc_xml",
    "write_voc_xml",
    "parse_csv",
    "write_csv",
    "FORMATS",
    "ConversionSummary",
    "convert",
]
