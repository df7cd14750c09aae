"""HTTP service exposing an engine behind the herdpipe wire protocols.

Endpoints mirror the published schemas byte for byte:
POST /v1/detect, POST /v1/segment, POST /v1/train/start,
GET /v1/train/{run_id}/epochs?from=k, GET /v1/model/describe,
POST /v1/infer.

Detect/segment/infer requests serialize on one device lock; a training
run holds the lock exclusively while its records are generated. Run state
lives in memory keyed by run_id with a JSON journal on disk.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
import time
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel, Field

from .config import AdapterConfig
from .engines import DecodedImage, Engine, decode_image, make_engine


class DetectRequest(BaseModel):
    image_b64: Optional[str] = None
    image_path: Optional[str] = None
    prompts: list[str] = Field(min_length=1)
    box_threshold: float = Field(gt=0, le=1)
    text_threshold: float = Field(gt=0, le=1)


class SegmentRequest(BaseModel):
    image_b64: Optional[str] = None
    image_path: Optional[str] = None
    boxes: list[list[float]]


class TrainStartRequest(BaseModel):
    dataset_path: str
    hyperparams: dict


class InferRequest(BaseModel):
    image_b64: str


def create_app(config: AdapterConfig, engine: Optional[Engine] = None) -> FastAPI:
    engine = engine or make_engine(config.engine, config)
    app = FastAPI(title="herdpipe-adapter", version="0.1.0")
    device_lock = threading.Lock()
    runs: dict[str, list[dict]] = {}
    runs_lock = threading.Lock()

    def resolve_image(image_b64: Optional[str], image_path: Optional[str]) -> DecodedImage:
        if (image_b64 is None) == (image_path is None):
            raise HTTPException(400, "request needs exactly one of image_b64 or image_path")
        if image_b64 is not None:
            try:
                raw = base64.b64decode(image_b64, validate=True)
            except (binascii.Error, ValueError) as e:
                raise HTTPException(400, f"invalid base64 payload: {e}") from e
        else:
            path = (config.data_dir / image_path).resolve()
            if not path.is_file():
                raise HTTPException(400, f"image_path not found: {image_path}")
            raw = path.read_bytes()
        try:
            return decode_image(raw)
        except Exception as e:
            raise HTTPException(400, f"cannot decode image: {e}") from e

    def journal(run_id: str, payload: dict):
        if config.journal_dir is None:
            return
        journal_dir = Path(config.journal_dir)
        journal_dir.mkdir(parents=True, exist_ok=True)
        (journal_dir / f"{run_id}.json").write_text(json.dumps(payload, indent=2) + "\n")

    @app.post("/v1/detect")
    def detect(request: DetectRequest):
        image = resolve_image(request.image_b64, request.image_path)
        start = time.perf_counter()
        with device_lock:
            try:
                detections = engine.detect(
                    image, request.prompts, request.box_threshold, request.text_threshold
                )
            except Exception as e:
                raise HTTPException(500, f"detector failure: {e}") from e
        return {
            "detections": detections,
            "model": engine.name,
            "latency_ms": (time.perf_counter() - start) * 1000.0,
        }

    @app.post("/v1/segment")
    def segment(request: SegmentRequest):
        if len(request.boxes) > config.batch_limit:
            raise HTTPException(400, f"too many boxes (> {config.batch_limit})")
        for box in request.boxes:
            if len(box) != 4:
                raise HTTPException(400, f"box must have 4 coordinates: {box}")
        image = resolve_image(request.image_b64, request.image_path)
        start = time.perf_counter()
        with device_lock:
            try:
                masks = engine.segment(image, request.boxes)
            except Exception as e:
                raise HTTPException(500, f"segmenter failure: {e}") from e
        if len(masks) != len(request.boxes):
            raise HTTPException(500, "engine returned a mask count mismatch")
        return {
            "masks": masks,
            "model": engine.name,
            "latency_ms": (time.perf_counter() - start) * 1000.0,
        }

    @app.post("/v1/train/start")
    def train_start(request: TrainStartRequest):
        required = {"num_epochs", "batch_size", "lr0", "lrf", "momentum",
                    "weight_decay", "optimizer", "image_size", "model_variant"}
        missing = required - set(request.hyperparams)
        if missing:
            raise HTTPException(400, f"hyperparams missing keys {sorted(missing)}")
        run_id = f"run-{uuid.uuid4().hex[:12]}"
        with device_lock:  # training is exclusive on the device
            try:
                records = engine.train_records(request.dataset_path, request.hyperparams)
            except Exception as e:
                raise HTTPException(500, f"trainer failure: {e}") from e
        with runs_lock:
            runs[run_id] = records
        journal(run_id, {"run_id": run_id, "dataset_path": request.dataset_path,
                         "hyperparams": request.hyperparams, "epochs": records})
        return {"run_id": run_id}

    @app.get("/v1/train/{run_id}/epochs")
    def train_epochs(run_id: str, from_epoch: int = Query(default=1, alias="from")):
        with runs_lock:
            if run_id not in runs:
                raise HTTPException(404, f"unknown run_id {run_id!r}")
            records = runs[run_id]
        return [r for r in records if r["epoch"] >= from_epoch]

    @app.get("/v1/model/describe")
    def describe():
        try:
            return engine.describe()
        except Exception as e:
            raise HTTPException(500, f"describe failure: {e}") from e

    @app.post("/v1/infer")
    def infer(request: InferRequest):
        image = resolve_image(request.image_b64, None)
        start = time.perf_counter()
        with device_lock:
            try:
                detections = engine.detect(image, list(config.class_names), 0.25, 0.25)
            except Exception as e:
                raise HTTPException(500, f"inference failure: {e}") from e
        return {
            "detections": detections,
            "model": engine.name,
            "latency_ms": (time.perf_counter() - start) * 1000.0,
        }

    return app
