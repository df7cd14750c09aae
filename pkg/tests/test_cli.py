import json

import numpy as np
import pytest

from herdpipe import wire
from herdpipe.cli import main
from herdpipe.core import AnnotatedImage, BBox, ClassSet, Detection, GroundTruthBox
from herdpipe.formats import DatasetManifest, ManifestRecord, write_coco_json
from herdpipe.raster import RasterImage, save_image
from stubserver import StubServer

CS = ClassSet(["camel", "rope"])


def tiny_dataset(root, n=6, size=16, with_pngs=False):
    """A small fixture dataset: coco gt file + optional PNGs + manifest."""
    records, images = [], []
    rng = np.random.default_rng(0)
    for k in range(n):
        image_id = f"im{k}"
        path = f"train/images/{image_id}.png"
        records.append(ManifestRecord(image_id, path, size, size))
        images.append(
            AnnotatedImage(image_id, size, size,
                           (GroundTruthBox(BBox(2, 2, 10, 10), k % 2),))
        )
        if with_pngs:
            arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
            save_image(RasterImage.from_array(arr), root / path)
    manifest = DatasetManifest(CS, tuple(records))
    gt_path = root / "gt.json"
    root.mkdir(parents=True, exist_ok=True)
    gt_path.write_text(write_coco_json(manifest, images))
    return manifest, images, gt_path


def run_cli(*argv):
    import contextlib
    import io

    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(list(argv))
    return code, out.getvalue()


def summary_of(*argv):
    code, text = run_cli(*argv)
    doc = json.loads(text)
    wire.validate("cli-summary", doc)
    assert doc["exit_code"] == code
    return doc


class TestExtractFrames:
    def test_index_mode(self):
        doc = summary_of("--json", "extract-frames", "--count", "47", "--stride", "10")
        assert doc["outputs"]["indices"] == [0, 10, 20, 30, 40]
        assert doc["exit_code"] == 0


class TestSplitCommand:
    def test_deterministic(self, tmp_path):
        _, _, gt = tiny_dataset(tmp_path, n=10)
        out1 = tmp_path / "m1.json" / "manifest.json"
        out2 = tmp_path / "m2.json" / "manifest.json"
        doc1 = summary_of("--json", "split", "--images", str(gt),
                          "--fractions", "0.7,0.2,0.1", "--seed", "42",
                          "--out", str(out1))
        doc2 = summary_of("--json", "split", "--images", str(gt),
                          "--fractions", "0.7,0.2,0.1", "--seed", "42",
                          "--out", str(out2))
        assert doc1["outputs"]["counts"] == {"train": 7, "valid": 2, "test": 1}
        assert out1.read_text() == out2.read_text()

    def test_seed_changes_assignment(self, tmp_path):
        _, _, gt = tiny_dataset(tmp_path, n=10)
        a = tmp_path / "a" / "manifest.json"
        b = tmp_path / "b" / "manifest.json"
        summary_of("--json", "split", "--images", str(gt), "--seed", "1", "--out", str(a))
        summary_of("--json", "split", "--images", str(gt), "--seed", "2", "--out", str(b))
        assert a.read_text() != b.read_text()


class TestEvaluateCommand:
    def test_perfect_fixtures(self, tmp_path):
        manifest, images, gt = tiny_dataset(tmp_path)
        preds = {
            img.image_id: [Detection(g.bbox, g.class_id, 1.0) for g in img.ground_truths]
            for img in images
        }
        pred_path = tmp_path / "preds.json"
        pred_path.write_text(write_coco_json(manifest, images, preds))
        report_path = tmp_path / "report.json"
        doc = summary_of("--json", "evaluate", "--gt", str(gt), "--pred", str(pred_path),
                         "--out", str(report_path))
        assert doc["outputs"]["AP"] == 1.0
        assert doc["outputs"]["AP_valid0.50"] == 1.0
        assert doc["outputs"]["AP_valid0.95"] == 1.0
        assert report_path.exists()

    def test_curves_written(self, tmp_path):
        manifest, images, gt = tiny_dataset(tmp_path)
        pred_path = tmp_path / "preds.json"
        pred_path.write_text(write_coco_json(manifest, images, {}))
        curves = tmp_path / "curves"
        summary_of("--json", "evaluate", "--gt", str(gt), "--pred", str(pred_path),
                   "--steps", "5", "--curves-dir", str(curves))
        assert (curves / "camel.csv").exists()
        assert (curves / "all.csv").read_text().splitlines()[0] == "cutoff,precision,recall,f1"


class TestAnnotateCommand:
    def test_mock_oracle_round_trip(self, tmp_path):
        manifest, images, gt = tiny_dataset(tmp_path)
        out = tmp_path / "auto"
        doc = summary_of("--json", "annotate", "--images", str(gt), "--out", str(out),
                         "--prompts", "camel,rope", "--fixtures", str(gt))
        assert doc["exit_code"] == 0
        assert doc["outputs"]["boxes"] == 6
        from herdpipe.formats import parse_coco_json

        auto_manifest, auto_images, _ = parse_coco_json((out / "detections.json").read_text())
        assert [i.image_id for i in auto_images] == [i.image_id for i in images]
        assert all(r.source == "teacher-auto" for r in auto_manifest.records)

    def test_partial_failure_exit_2(self, tmp_path):
        manifest, images, gt = tiny_dataset(tmp_path)
        # fixtures covering only half the images
        partial_manifest = DatasetManifest(CS, manifest.records[:3])
        fixtures = tmp_path / "partial.json"
        fixtures.write_text(write_coco_json(partial_manifest, images[:3]))
        doc = summary_of("--json", "annotate", "--images", str(gt),
                         "--out", str(tmp_path / "auto"), "--prompts", "camel,rope",
                         "--fixtures", str(fixtures))
        assert doc["exit_code"] == 2
        assert not doc["ok"]
        assert len(doc["errors"]) == 3


class TestConvertCommand:
    def test_coco_to_yolo(self, tmp_path):
        _, _, gt = tiny_dataset(tmp_path)
        out = tmp_path / "labels"
        doc = summary_of("--json", "convert", "--in", str(gt), "--out", str(out),
                         "--format", "yolo-txt")
        assert doc["exit_code"] == 0
        assert (out / "manifest.json").exists()
        assert len(list(out.glob("*.txt"))) == 6

    def test_unknown_format_exit_1(self, tmp_path):
        code, _ = run_cli("convert", "--in", "x.json", "--out", "y", "--format", "hdf5")
        assert code == 1


class TestAugmentCommand:
    def test_augments_train_only(self, tmp_path):
        root = tmp_path / "ds"
        manifest, images, gt = tiny_dataset(root, n=5, with_pngs=True)
        # splits: first 3 train, then valid/test
        splits = ["train", "train", "train", "valid", "test"]
        records = tuple(
            ManifestRecord(r.image_id, r.path.replace("train/", f"{s}/"), r.width, r.height, split=s)
            for r, s in zip(manifest.records, splits)
        )
        for rec, s in zip(manifest.records, splits):
            if s != "train":
                src = root / rec.path
                dst = root / rec.path.replace("train/", f"{s}/")
                dst.parent.mkdir(parents=True, exist_ok=True)
                src.rename(dst)
        split_manifest = DatasetManifest(CS, records)
        (root / "manifest.json").write_text(split_manifest.to_json())
        from herdpipe.formats import save_dataset

        save_dataset(root, split_manifest, images)
        out = tmp_path / "aug"
        doc = summary_of("--json", "--seed", "9", "augment", "--dataset", str(root),
                         "--out", str(out))
        assert doc["outputs"]["train_outputs"] == 6  # 3 train images x 2
        assert doc["outputs"]["counts"] == {"train": 6, "valid": 1, "test": 1}
        # valid/test bytes unchanged
        for rec, s in zip(manifest.records, splits):
            if s != "train":
                rel = rec.path.replace("train/", f"{s}/")
                assert (out / rel).read_bytes() == (root / rel).read_bytes()
        assert (out / "preprocessing.json").exists()

    def test_reproducible(self, tmp_path):
        root = tmp_path / "ds"
        tiny_dataset(root, n=3, with_pngs=True)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        summary_of("--json", "--seed", "4", "augment", "--dataset", str(root), "--out", str(out1))
        summary_of("--json", "--seed", "4", "augment", "--dataset", str(root), "--out", str(out2))
        files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()


class TestDistillAndReport:
    def test_scripted_run_and_report(self, tmp_path):
        runs_dir = tmp_path / "runs"
        doc = summary_of("--json", "distill", "--dataset", "ds", "--epochs", "3",
                         "--runs-dir", str(runs_dir))
        assert doc["exit_code"] == 0
        assert doc["outputs"]["epochs"] == 3
        report = summary_of("--json", "report", "--runs-dir", str(runs_dir),
                            "--select", "max-ap")
        assert report["outputs"]["best"] == doc["outputs"]["run_id"]

    def test_http_trainer(self, tmp_path):
        records = [
            {"epoch": 1, "box_loss": 1.0, "cls_loss": 1.0, "dfl_loss": 1.0,
             "val_box_loss": 1.0, "val_cls_loss": 1.0, "val_dfl_loss": 1.0,
             "ap": 0.5, "recall": 0.5, "ap50": 0.5, "ap50_95": 0.5},
        ]
        with StubServer() as stub:
            stub.script("/v1/train/start", [(200, {"run_id": "r1"})])
            stub.script("/v1/train/r1/epochs", [(200, records)])
            doc = summary_of("--json", "distill", "--dataset", "ds", "--epochs", "1",
                             "--runs-dir", str(tmp_path), "--trainer-endpoint", stub.url)
            assert doc["exit_code"] == 0
            assert doc["outputs"]["run_id"] == "r1"


class TestProfileCommand:
    def test_against_stub(self, tmp_path):
        probe_dir = tmp_path / "probes"
        arr = np.zeros((8, 8, 3), dtype=np.uint8)
        save_image(RasterImage.from_array(arr), probe_dir / "p.png")
        detect = {"detections": [], "model": "stub", "latency_ms": 1.0}
        describe = {"layers": 10, "params": 1000, "flops": 1e6, "weight_bytes": 2048}
        with StubServer() as stub:
            stub.script("/v1/infer", [(200, detect)])
            stub.script("/v1/model/describe", [(200, describe)])
            doc = summary_of("--json", "profile", "--endpoint", stub.url,
                             "--images", str(probe_dir), "--trials", "5")
        profile = doc["outputs"]["profile"]
        assert profile["layers"] == 10
        assert profile["fps"] > 0


class TestErrors:
    def test_usage_error_exit_1(self):
        code, _ = run_cli("annotate")  # missing required flags
        assert code == 1

    def test_missing_gt_file(self, tmp_path):
        code, text = run_cli("--json", "evaluate", "--gt", str(tmp_path / "none.json"),
                             "--pred", str(tmp_path / "none.json"))
        assert code == 1
        doc = json.loads(text)
        assert doc["errors"]

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("seed: 11\nclass_prompts: [camel, rope]\n")
        doc = summary_of("--json", "--config", str(cfg), "extract-frames", "--count", "5",
                         "--stride", "2")
        assert doc["seed"] == 11

    def test_env_config(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("seed: 23\n")
        monkeypatch.setenv("HERDPIPE_CONFIG", str(cfg))
        doc = summary_of("--json", "extract-frames", "--count", "3", "--stride", "1")
        assert doc["seed"] == 23
