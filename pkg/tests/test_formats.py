import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from herdpipe.core import (
    AnnotatedImage,
    BBox,
    ClassSet,
    Detection,
    GroundTruthBox,
    box_mask_rle,
)
from herdpipe.errors import ConfigError, DatasetError, ParseError
from herdpipe.formats import (
    DatasetManifest,
    ManifestRecord,
    convert,
    load_dataset,
    parse_coco_json,
    parse_csv,
    parse_voc_xml,
    parse_yolo_txt,
    save_dataset,
    write_coco_json,
    write_csv,
    write_voc_xml,
    write_yolo_txt,
)


def gtb(x0, y0, x1, y1, cls=0):
    return GroundTruthBox(BBox(x0, y0, x1, y1), cls)


CS = ClassSet(["camel", "rope", "mask", "pole"])


def random_dataset(seed, with_masks=False, with_preds=False, max_images=3, size=200):
    """Random (manifest, images, predictions) with integer-ish geometry."""
    rng = random.Random(seed)
    images, records = [], []
    predictions = {}
    for i in range(rng.randint(1, max_images)):
        image_id = f"im{seed}_{i}"
        w = rng.randint(20, size)
        h = rng.randint(20, size)
        boxes = []
        for _ in range(rng.randint(0, 4)):
            x0 = rng.randint(0, w - 2)
            y0 = rng.randint(0, h - 2)
            boxes.append(
                GroundTruthBox(
                    BBox(x0, y0, rng.randint(x0 + 1, w), rng.randint(y0 + 1, h)),
                    rng.randrange(len(CS)),
                )
            )
        masks = None
        if with_masks and boxes:
            masks = tuple(box_mask_rle(b.bbox, w, h, b.class_id) for b in boxes)
        img = AnnotatedImage(image_id, w, h, tuple(boxes), masks)
        images.append(img)
        split = rng.choice(["train", "valid", "test"])
        records.append(ManifestRecord(image_id, f"{split}/images/{image_id}.png", w, h,
                                      split=split, source="fixture"))
        if with_preds:
            predictions[image_id] = [
                Detection(b.bbox, b.class_id, round(rng.random(), 3)) for b in boxes
            ]
    return DatasetManifest(CS, tuple(records)), images, predictions


class TestYolo:
    def test_full_image_box(self):
        img = AnnotatedImage("a", 100, 100, (gtb(0, 0, 100, 100, cls=0),))
        assert write_yolo_txt(img) == "0 0.500000 0.500000 1.000000 1.000000\n"

    def test_derived_line(self):
        img = AnnotatedImage("a", 100, 100, (gtb(10, 20, 30, 60, cls=2),))
        assert write_yolo_txt(img) == "2 0.200000 0.400000 0.200000 0.400000\n"

    def test_empty(self):
        assert write_yolo_txt(AnnotatedImage("a", 10, 10, ())) == ""

    def test_parse_full_image(self):
        img = parse_yolo_txt("0 0.5 0.5 1.0 1.0", 200, 200, CS)
        assert img.ground_truths[0].bbox == BBox(0, 0, 200, 200)

    def test_parse_bad_class(self):
        with pytest.raises(ParseError):
            parse_yolo_txt("9 0.5 0.5 0.1 0.1", 100, 100, CS)

    def test_parse_bad_field_count(self):
        with pytest.raises(ParseError) as e:
            parse_yolo_txt("0 0.5 0.5 1.0\n", 100, 100, CS)
        assert e.value.line == 1

    def test_parse_non_numeric(self):
        with pytest.raises(ParseError):
            parse_yolo_txt("0 a b c d", 100, 100, CS)

    def test_parse_out_of_range(self):
        with pytest.raises(ParseError):
            parse_yolo_txt("0 1.5 0.5 0.1 0.1", 100, 100, CS)

    def test_refuses_out_of_image_box(self):
        img = AnnotatedImage("a", 100, 100, (gtb(0, 0, 100, 100),))
        shrunk = AnnotatedImage("b", 50, 50, ())
        object.__setattr__(shrunk, "ground_truths", img.ground_truths)
        from herdpipe.errors import GeometryError

        with pytest.raises(GeometryError):
            write_yolo_txt(shrunk)

    @given(st.integers(0, 10_000))
    @settings(max_examples=100)
    def test_round_trip_within_half_pixel(self, seed):
        rng = random.Random(seed)
        w = h = 1000
        x0 = rng.uniform(0, w - 1)
        y0 = rng.uniform(0, h - 1)
        box = BBox(x0, y0, rng.uniform(x0, w), rng.uniform(y0, h))
        img = AnnotatedImage("a", w, h, (GroundTruthBox(box, 1),))
        back = parse_yolo_txt(write_yolo_txt(img), w, h, CS)
        got = back.ground_truths[0].bbox
        for a, b in zip(box.as_xyxy(), got.as_xyxy()):
            assert abs(a - b) <= 0.5


class TestCoco:
    def test_empty_document(self):
        text = write_coco_json(None, [])
        import json

        doc = json.loads(text)
        assert doc == {"images": [], "categories": [], "annotations": []}
        manifest, images, preds = parse_coco_json(text)
        assert manifest is None and images == [] and preds == {}

    def test_xywh_conversion(self):
        manifest, images, _ = random_dataset(0)
        img = AnnotatedImage("one", 100, 100, (gtb(10, 20, 30, 60),))
        m = DatasetManifest(CS, (ManifestRecord("one", "train/images/one.png", 100, 100),))
        import json

        doc = json.loads(write_coco_json(m, [img]))
        assert doc["annotations"][0]["bbox"] == [10, 20, 20, 40]

    def test_round_trip_identity(self):
        for seed in range(30):
            manifest, images, preds = random_dataset(seed, with_masks=seed % 2 == 0,
                                                     with_preds=seed % 3 == 0)
            text = write_coco_json(manifest, images, preds)
            m2, i2, p2 = parse_coco_json(text)
            assert m2 == manifest
            assert i2 == images
            assert {k: list(v) for k, v in preds.items() if v} == p2

    def test_missing_key(self):
        with pytest.raises(ParseError):
            parse_coco_json('{"images": [], "annotations": []}')

    def test_dangling_image_id(self):
        bad = (
            '{"images": [{"id": 1, "file_name": "a.png", "width": 10, "height": 10}],'
            '"categories": [{"id": 1, "name": "x"}],'
            '"annotations": [{"id": 1, "image_id": 99, "category_id": 1, "bbox": [0, 0, 1, 1]}]}'
        )
        with pytest.raises(ParseError):
            parse_coco_json(bad)

    def test_writer_deterministic(self):
        manifest, images, preds = random_dataset(7, with_masks=True, with_preds=True)
        assert write_coco_json(manifest, images, preds) == write_coco_json(manifest, images, preds)


class TestVoc:
    def test_one_based_shift(self):
        img = AnnotatedImage("a", 100, 100, (gtb(0, 0, 10, 10),))
        text = write_voc_xml(img, CS)
        assert "<xmin>1</xmin>" in text
        assert "<ymin>1</ymin>" in text
        assert "<xmax>10</xmax>" in text
        assert "<ymax>10</ymax>" in text

    def test_round_trip(self):
        for seed in range(30):
            _, images, _ = random_dataset(seed)
            for img in images:
                back = parse_voc_xml(write_voc_xml(img, CS), CS)
                assert back.image_id == img.image_id
                assert (back.width, back.height) == (img.width, img.height)
                for a, b in zip(img.ground_truths, back.ground_truths):
                    assert a.class_id == b.class_id
                    for u, v in zip(a.bbox.as_xyxy(), b.bbox.as_xyxy()):
                        assert abs(u - v) <= 0.5

    def test_missing_size(self):
        with pytest.raises(ParseError):
            parse_voc_xml("<annotation></annotation>", CS)

    def test_unknown_class_lists_known(self):
        text = write_voc_xml(AnnotatedImage("a", 10, 10, (gtb(0, 0, 5, 5),)), CS)
        with pytest.raises(ConfigError) as e:
            parse_voc_xml(text, ClassSet(["other"]))
        assert "other" in str(e.value)


class TestCsv:
    def test_header_only(self):
        m = DatasetManifest(CS, ())
        assert write_csv(m, []) == "image_id,class,x_min,y_min,x_max,y_max,confidence,split\r\n"

    def test_gt_has_empty_confidence(self):
        img = AnnotatedImage("a", 100, 100, (gtb(1, 2, 3, 4),))
        m = DatasetManifest(CS, (ManifestRecord("a", "train/images/a.png", 100, 100),))
        lines = write_csv(m, [img]).splitlines()
        assert lines[1].split(",")[6] == ""

    def test_round_trip(self):
        for seed in range(30):
            manifest, images, preds = random_dataset(seed, with_preds=True)
            text = write_csv(manifest, images, preds)
            dims = {r.image_id: (r.width, r.height) for r in manifest.records}
            back_images, back_preds, splits = parse_csv(text, CS, dims)
            by_id = {i.image_id: i for i in back_images}
            for img in images:
                if img.ground_truths:
                    assert by_id[img.image_id].ground_truths == img.ground_truths
            for image_id, dets in preds.items():
                if dets:
                    assert back_preds[image_id] == list(dets)
            for r in manifest.records:
                if r.image_id in splits:
                    assert splits[r.image_id] == r.split

    def test_bad_header(self):
        with pytest.raises(ParseError):
            parse_csv("nope\r\n", CS, {})


class TestManifest:
    def test_duplicate_ids_rejected(self):
        rec = ManifestRecord("a", "train/images/a.png", 10, 10)
        with pytest.raises(DatasetError):
            DatasetManifest(CS, (rec, rec))

    def test_path_escape_rejected(self):
        with pytest.raises(DatasetError):
            ManifestRecord("a", "../evil.png", 10, 10)
        with pytest.raises(DatasetError):
            ManifestRecord("a", "/abs.png", 10, 10)

    def test_bad_split_rejected(self):
        with pytest.raises(DatasetError):
            ManifestRecord("a", "x/a.png", 10, 10, split="eval")

    def test_json_round_trip(self):
        manifest, _, _ = random_dataset(4)
        assert DatasetManifest.from_json(manifest.to_json()) == manifest

    def test_save_load_dataset(self, tmp_path):
        manifest, images, _ = random_dataset(5)
        save_dataset(tmp_path, manifest, images)
        m2, i2 = load_dataset(tmp_path)
        assert m2 == manifest
        by_id = {i.image_id: i for i in i2}
        for img in images:
            got = by_id[img.image_id]
            assert len(got.ground_truths) == len(img.ground_truths)
            for a, b in zip(img.ground_truths, got.ground_truths):
                assert a.class_id == b.class_id
                for u, v in zip(a.bbox.as_xyxy(), b.bbox.as_xyxy()):
                    assert abs(u - v) <= 0.5  # yolo quantization at <=200px


class TestConvert:
    def test_coco_to_yolo_to_coco(self, tmp_path):
        manifest, images, _ = random_dataset(9)
        src = tmp_path / "src.json"
        src.write_text(write_coco_json(manifest, images))
        mid = tmp_path / "labels"
        s1 = convert(src, "coco-json", mid, "yolo-txt")
        assert s1.masks_dropped == 0
        out = tmp_path / "back.json"
        convert(mid, "yolo-txt", out, "coco-json")
        m2, i2, _ = parse_coco_json(out.read_text())
        assert m2 == manifest
        by_id = {i.image_id: i for i in i2}
        for img in images:
            got = by_id[img.image_id]
            for a, b in zip(img.ground_truths, got.ground_truths):
                for u, v in zip(a.bbox.as_xyxy(), b.bbox.as_xyxy()):
                    assert abs(u - v) <= 0.5

    def test_masks_dropped_reported(self, tmp_path):
        manifest, images, _ = random_dataset(10, with_masks=True)
        n_masks = sum(len(i.masks or ()) for i in images)
        src = tmp_path / "src.json"
        src.write_text(write_coco_json(manifest, images))
        summary = convert(src, "coco-json", tmp_path / "labels", "yolo-txt")
        assert summary.masks_dropped == n_masks
        if n_masks:
            assert f"masks dropped: {n_masks}" in summary.render()

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ConfigError):
            convert(tmp_path / "x", "protobuf", tmp_path / "y", "coco-json")

    def test_voc_dir_round_trip(self, tmp_path):
        manifest, images, _ = random_dataset(11)
        src = tmp_path / "src.json"
        src.write_text(write_coco_json(manifest, images))
        vocdir = tmp_path / "voc"
        convert(src, "coco-json", vocdir, "voc-xml")
        assert (vocdir / "manifest.json").exists()
        back = tmp_path / "back.json"
        convert(vocdir, "voc-xml", back, "coco-json")
        m2, i2, _ = parse_coco_json(back.read_text())
        assert m2 == manifest

    def test_csv_round_trip(self, tmp_path):
        manifest, images, preds = random_dataset(12, with_preds=True)
        src = tmp_path / "src.json"
        src.write_text(write_coco_json(manifest, images, preds))
        csv_path = tmp_path / "boxes.csv"
        convert(src, "coco-json", csv_path, "csv")
        assert csv_path.with_suffix(".manifest.json").exists()
        back = tmp_path / "back.json"
        convert(csv_path, "csv", back, "coco-json")
        m2, i2, p2 = parse_coco_json(back.read_text())
        assert m2 == manifest
        assert {k: list(v) for k, v in p2.items()} == {
            k: list(v) for k, v in preds.items() if v
        }

    def test_missing_input_has_file_context(self, tmp_path):
        with pytest.raises(DatasetError) as e:
            convert(tmp_path / "absent.json", "coco-json", tmp_path / "o", "yolo-txt")
        assert "absent.json" in str(e.value)
