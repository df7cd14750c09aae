"""Wire conformance of the adapter service, validated with the primary
toolkit's published schema validator."""

import socket
import threading

import pytest
import uvicorn
from fastapi.testclient import TestClient

from herdpipe import wire
from herdpipe.core import MaskAnnotation
from herdpipe_adapter.app import create_app
from herdpipe_adapter.config import AdapterConfig

PROMPTS = ["camel", "rope", "mask", "pole"]

HP = {
    "num_epochs": 3, "batch_size": 16, "lr0": 0.01, "lrf": 0.01,
    "momentum": 0.937, "weight_decay": 0.001, "optimizer": "SGD",
    "image_size": 640, "model_variant": "YOLOv8s",
}


@pytest.fixture()
def client(tmp_path):
    config = AdapterConfig(journal_dir=tmp_path / "journal", data_dir=tmp_path)
    return TestClient(create_app(config))


def detect_payload(b64, prompts=PROMPTS):
    return {"image_b64": b64, "prompts": prompts,
            "box_threshold": 0.35, "text_threshold": 0.25}


class TestDetect:
    def test_schema_conformance_on_smoke_fixture(self, client, smoke_images):
        for _, b64 in smoke_images:
            response = client.post("/v1/detect", json=detect_payload(b64))
            assert response.status_code == 200
            doc = response.json()
            wire.validate("detect-response", doc)
            assert doc["detections"]
            for d in doc["detections"]:
                x0, y0, x1, y1 = d["bbox"]
                assert 0 <= x0 <= x1 <= 32 and 0 <= y0 <= y1 <= 32
                assert 0 <= d["prompt_index"] < len(PROMPTS)
                assert d["confidence"] >= 0.35

    def test_deterministic(self, client, smoke_images):
        _, b64 = smoke_images[0]
        a = client.post("/v1/detect", json=detect_payload(b64)).json()["detections"]
        b = client.post("/v1/detect", json=detect_payload(b64)).json()["detections"]
        assert a == b

    def test_image_path_mode(self, tmp_path, smoke_images):
        raw, _ = smoke_images[0]
        (tmp_path / "probe.png").write_bytes(raw)
        config = AdapterConfig(data_dir=tmp_path)
        client = TestClient(create_app(config))
        payload = {"image_path": "probe.png", "prompts": PROMPTS,
                   "box_threshold": 0.35, "text_threshold": 0.25}
        response = client.post("/v1/detect", json=payload)
        assert response.status_code == 200
        wire.validate("detect-response", response.json())

    def test_rejects_missing_image(self, client):
        payload = {"prompts": PROMPTS, "box_threshold": 0.35, "text_threshold": 0.25}
        assert client.post("/v1/detect", json=payload).status_code == 400

    def test_rejects_unknown_path(self, client):
        payload = {"image_path": "ghost.png", "prompts": PROMPTS,
                   "box_threshold": 0.35, "text_threshold": 0.25}
        assert client.post("/v1/detect", json=payload).status_code == 400


class TestSegment:
    def test_mask_count_equals_box_count(self, client, smoke_images):
        _, b64 = smoke_images[1]
        boxes = [[0, 0, 10, 10], [5, 5, 20, 20], [1, 2, 3, 4]]
        response = client.post("/v1/segment", json={"image_b64": b64, "boxes": boxes})
        assert response.status_code == 200
        doc = response.json()
        wire.validate("segment-response", doc)
        assert len(doc["masks"]) == len(boxes)
        # run lengths decode against the primary's mask type exactly
        for mask in doc["masks"]:
            MaskAnnotation(class_id=0, width=32, height=32, rle=tuple(mask["rle"]))

    def test_zero_boxes(self, client, smoke_images):
        _, b64 = smoke_images[0]
        response = client.post("/v1/segment", json={"image_b64": b64, "boxes": []})
        assert response.status_code == 200
        assert response.json()["masks"] == []

    def test_batch_limit(self, tmp_path, smoke_images):
        _, b64 = smoke_images[0]
        config = AdapterConfig(batch_limit=2, data_dir=tmp_path)
        client = TestClient(create_app(config))
        boxes = [[0, 0, 1, 1]] * 3
        assert client.post("/v1/segment",
                           json={"image_b64": b64, "boxes": boxes}).status_code == 400


class TestTrain:
    def test_start_and_poll(self, client):
        response = client.post("/v1/train/start",
                               json={"dataset_path": "ds", "hyperparams": HP})
        assert response.status_code == 200
        doc = response.json()
        wire.validate("train-start-response", doc)
        run_id = doc["run_id"]

        records = client.get(f"/v1/train/{run_id}/epochs?from=1").json()
        wire.validate("epoch-records", records)
        assert [r["epoch"] for r in records] == [1, 2, 3]

        tail = client.get(f"/v1/train/{run_id}/epochs?from=3").json()
        assert [r["epoch"] for r in tail] == [3]

    def test_unknown_run(self, client):
        assert client.get("/v1/train/none/epochs?from=1").status_code == 404

    def test_bad_hyperparams(self, client):
        response = client.post("/v1/train/start",
                               json={"dataset_path": "ds", "hyperparams": {"num_epochs": 1}})
        assert response.status_code == 400

    def test_journal_written(self, tmp_path, smoke_images):
        config = AdapterConfig(journal_dir=tmp_path / "journal", data_dir=tmp_path)
        client = TestClient(create_app(config))
        run_id = client.post("/v1/train/start",
                             json={"dataset_path": "ds", "hyperparams": HP}).json()["run_id"]
        assert (tmp_path / "journal" / f"{run_id}.json").exists()


class TestDescribeAndInfer:
    def test_describe_schema(self, client):
        response = client.get("/v1/model/describe")
        assert response.status_code == 200
        wire.validate("describe-response", response.json())

    def test_infer_schema(self, client, smoke_images):
        for _, b64 in smoke_images:
            response = client.post("/v1/infer", json={"image_b64": b64})
            assert response.status_code == 200
            wire.validate("infer-response", response.json())


class _LiveServer:
    """Real uvicorn server on an ephemeral port for cross-component tests."""

    def __init__(self, app):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        self.port = sock.getsockname()[1]
        sock.close()
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="error")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.port}"

    def __enter__(self):
        self.thread.start()
        import time

        for _ in range(200):
            if self.server.started:
                return self
            time.sleep(0.02)
        raise RuntimeError("server did not start")

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=5)


class TestCrossComponent:
    """The primary toolkit drives the adapter over real HTTP."""

    def test_annotate_and_distill_against_adapter(self, tmp_path, smoke_images):
        from herdpipe.annotate import (
            BackendSpec,
            HttpSegmenterBackend,
            HttpTeacherBackend,
            annotate_dataset,
        )
        from herdpipe.distill import HttpTrainerBackend, Hyperparams, run_distillation
        from herdpipe.formats.manifest import ManifestRecord
        from herdpipe.profiling import profile_backend

        for k, (raw, _) in enumerate(smoke_images):
            (tmp_path / f"probe{k}.png").write_bytes(raw)
        config = AdapterConfig(data_dir=tmp_path, journal_dir=tmp_path / "journal")
        with _LiveServer(create_app(config)) as live:
            spec = BackendSpec(kind="remote-http", endpoint=live.url, timeout=10.0,
                               retry_backoff=0.01)
            records = [
                ManifestRecord(f"probe{k}", f"probe{k}.png", 32, 32) for k in range(3)
            ]
            result = annotate_dataset(
                records, PROMPTS,
                HttpTeacherBackend(spec),
                segmenter=HttpSegmenterBackend(spec),
                max_concurrent=2,
                output_dir=tmp_path / "auto",
            )
            assert result.ok
            assert len(result.detection_images) == 3
            for img in result.segmentation_images:
                assert len(img.masks) == len(img.ground_truths)

            trainer = HttpTrainerBackend(spec)
            run = run_distillation("ds", Hyperparams(num_epochs=3), trainer,
                                   runs_dir=tmp_path / "runs")
            assert not run.aborted
            assert len(run.epochs) == 3

            class _Infer:
                def infer(self, image_b64):
                    return trainer.infer(image_b64)

            _, b64 = smoke_images[0]
            latency_ms, fps = profile_backend(_Infer(), [b64], trials=5)
            assert latency_ms > 0 and fps > 0
            describe = trainer.describe()
            wire.validate("describe-response", describe)
