"""Auto-annotation orchestration: drive a zero-shot teacher over every
image with class prompts, optionally drive a box-prompted segmenter over
the resulting boxes, and emit detection and segmentation datasets.

The two passes mirror the annotation algorithm exactly: the first
accumulates (image, boxes) in input order, the second (only when a
segmenter is configured) accumulates (image, masks), one segmenter call
per image with that image's full box list. Backend calls may run
concurrently; results are re-assembled in input order, so output ordering
never depends on scheduling. A failing image is recorded and skipped, not
fatal: long annotation runs survive flaky backends.
"""

from __future__ import annotations

import base64
import json
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import requests

from .core import (
    AnnotatedImage,
    BBox,
    ClassSet,
    Detection,
    GroundTruthBox,
    MaskAnnotation,
    box_mask_rle,
    clip_to_image,
)
from .errors import (
    ConfigError,
    EmptyClipError,
    OracleMissError,
    PermanentBackendError,
    ProtocolError,
    TransientBackendError,
)
from . import wire
from .formats.cocojson import write_coco_json
from .formats.manifest import DatasetManifest, ManifestRecord

DEFAULT_BOX_THRESHOLD = 0.35
DEFAULT_TEXT_THRESHOLD = 0.25


@dataclass(frozen=True)
class TeacherRequest:
    prompts: tuple[str, ...]
    box_threshold: float = DEFAULT_BOX_THRESHOLD
    text_threshold: float = DEFAULT_TEXT_THRESHOLD
    image_path: Optional[str] = None
    image_b64: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if not self.prompts:
            raise ConfigError("prompts must not be empty")
        for name, v in (("box_threshold", self.box_threshold), ("text_threshold", self.text_threshold)):
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if (self.image_path is None) == (self.image_b64 is None):
            raise ConfigError("request needs exactly one of image_path or image_b64")

    def to_wire(self) -> dict:
        doc: dict = {}
        if self.image_b64 is not None:
            doc["image_b64"] = self.image_b64
        else:
            doc["image_path"] = self.image_path
        doc["prompts"] = list(self.prompts)
        doc["box_threshold"] = self.box_threshold
        doc["text_threshold"] = self.text_threshold
        return doc


@dataclass(frozen=True)
class TeacherResponse:
    detections: tuple[tuple[BBox, int, float], ...]  # (box, prompt index, confidence)
    model: str
    latency_ms: float

    @classmethod
    def from_wire(cls, payload, n_prompts: int) -> "TeacherResponse":
        wire.validate("detect-response", payload)
        dets = []
        for d in payload["detections"]:
            if d["prompt_index"] >= n_prompts:
                raise ProtocolError(
                    f"prompt_index {d['prompt_index']} out of range for {n_prompts} prompts"
                )
            x0, y0, x1, y1 = d["bbox"]
            dets.append((BBox(x0, y0, x1, y1), int(d["prompt_index"]), float(d["confidence"])))
        return cls(tuple(dets), payload["model"], float(payload["latency_ms"]))

    def to_wire(self) -> dict:
        return {
            "detections": [
                {"bbox": list(b.as_xyxy()), "prompt_index": i, "confidence": c}
                for b, i, c in self.detections
            ],
            "model": self.model,
            "latency_ms": self.latency_ms,
        }


@dataclass(frozen=True)
class SegmenterRequest:
    boxes: tuple[BBox, ...]
    image_path: Optional[str] = None
    image_b64: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if (self.image_path is None) == (self.image_b64 is None):
            raise ConfigError("request needs exactly one of image_path or image_b64")

    def to_wire(self) -> dict:
        doc: dict = {}
        if self.image_b64 is not None:
            doc["image_b64"] = self.image_b64
        else:
            doc["image_path"] = self.image_path
        doc["boxes"] = [list(b.as_xyxy()) for b in self.boxes]
        return doc


@dataclass(frozen=True)
class SegmenterResponse:
    # one entry per requested box, same order: ("rle", counts) or ("polygon", vertices)
    masks: tuple[tuple[str, tuple], ...]
    model: str
    latency_ms: float

    @classmethod
    def from_wire(cls, payload, expected_count: int) -> "SegmenterResponse":
        wire.validate("segment-response", payload)
        if len(payload["masks"]) != expected_count:
            raise ProtocolError(
                f"segmenter returned {len(payload['masks'])} masks for {expected_count} boxes"
            )
        masks = []
        for m in payload["masks"]:
            if "rle" in m:
                masks.append(("rle", tuple(int(c) for c in m["rle"])))
            else:
                masks.append(("polygon", tuple((float(x), float(y)) for x, y in m["polygon"])))
        return cls(tuple(masks), payload["model"], float(payload["latency_ms"]))


class TeacherBackend(Protocol):
    def detect(self, request: TeacherRequest) -> TeacherResponse: ...


class SegmenterBackend(Protocol):
    def segment(self, request: SegmenterRequest) -> SegmenterResponse: ...


@dataclass(frozen=True)
class BackendSpec:
    """Where a backend lives and how hard to try before giving up."""

    kind: str  # mock-oracle | remote-http | subprocess
    endpoint: str = ""  # base URL or command line
    timeout: float = 30.0
    max_concurrent: int = 1
    retries: int = 2
    retry_backoff: float = 0.5  # seconds; doubles per attempt

    def __post_init__(self):
        if self.kind not in ("mock-oracle", "remote-http", "subprocess"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.max_concurrent < 1:
            raise ConfigError("max_concurrent must be >= 1")


# -- mock oracle ----------------------------------------------------------------


class MockOracleTeacher:
    """Deterministic teacher double loaded with fixture labels.

    Fixtures map image id to (bbox, class name, confidence) triples; the
    oracle resolves the id from the request's image path stem. Boxes whose
    class is absent from the request prompts are filtered out; confidence
    filtering is the orchestrator's job, so everything else is returned
    verbatim. Every request is recorded for assertions.
    """

    def __init__(
        self,
        fixtures: Mapping[str, Sequence[tuple[BBox, str, float]]],
        model: str = "mock-oracle",
        latency_ms: float = 0.0,
    ):
        self.fixtures = {k: tuple(v) for k, v in fixtures.items()}
        self.model = model
        self.latency_ms = latency_ms
        self.requests: list[TeacherRequest] = []
        self._lock = threading.Lock()

    def _resolve(self, request) -> str:
        if request.image_path is None:
            raise OracleMissError("mock oracle needs image_path requests")
        stem = Path(request.image_path).stem
        for key in (request.image_path, stem):
            if key in self.fixtures:
                return key
        raise OracleMissError(f"no fixture labels for image {request.image_path!r}")

    def detect(self, request: TeacherRequest) -> TeacherResponse:
        with self._lock:
            self.requests.append(request)
        key = self._resolve(request)
        dets = []
        for bbox, class_name, conf in self.fixtures[key]:
            if class_name in request.prompts:
                dets.append((bbox, request.prompts.index(class_name), conf))
        return TeacherResponse(tuple(dets), self.model, self.latency_ms)


class MockSegmenter:
    """Deterministic segmenter double: each box becomes its filled
    rectangle as a run-length mask."""

    def __init__(self, dims: Mapping[str, tuple[int, int]], model: str = "mock-segmenter"):
        self.dims = dict(dims)  # image id -> (width, height)
        self.requests: list[SegmenterRequest] = []
        self._lock = threading.Lock()

    def segment(self, request: SegmenterRequest) -> SegmenterResponse:
        with self._lock:
            self.requests.append(request)
        if request.image_path is None:
            raise OracleMissError("mock segmenter needs image_path requests")
        stem = Path(request.image_path).stem
        key = request.image_path if request.image_path in self.dims else stem
        if key not in self.dims:
            raise OracleMissError(f"no dimensions for image {request.image_path!r}")
        w, h = self.dims[key]
        masks = []
        for box in request.boxes:
            mask = box_mask_rle(box, w, h, class_id=0)
            masks.append(("rle", mask.rle))
        return SegmenterResponse(tuple(masks), "mock-segmenter", 0.0)


# -- remote HTTP ----------------------------------------------------------------


def request_with_retries(
    spec: BackendSpec, method: str, path: str, payload: Optional[dict] = None
) -> dict:
    """HTTP round trip with exponential backoff on transient failures
    (timeouts, connection errors, 5xx); 4xx and schema faults never retry."""
    url = spec.endpoint.rstrip("/") + path
    attempts = spec.retries + 1
    delay = spec.retry_backoff
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            resp = requests.request(method, url, json=payload, timeout=spec.timeout)
        except (requests.Timeout, requests.ConnectionError) as e:
            last_error = TransientBackendError(f"{method} {url}: {e}")
        else:
            if 500 <= resp.status_code < 600:
                last_error = TransientBackendError(f"{method} {url}: HTTP {resp.status_code}")
            elif resp.status_code != 200:
                raise PermanentBackendError(
                    f"{method} {url}: HTTP {resp.status_code}: {resp.text[:200]}"
                )
            else:
                try:
                    return resp.json()
                except ValueError as e:
                    raise ProtocolError(
                        f"{method} {url}: response is not JSON: {resp.text[:200]}"
                    ) from e
        if attempt + 1 < attempts:
            time.sleep(delay)
            delay *= 2
    raise last_error  # type: ignore[misc]


def _post_with_retries(spec: BackendSpec, path: str, payload: dict) -> dict:
    return request_with_retries(spec, "POST", path, payload)


class HttpTeacherBackend:
    """Speaks POST /v1/detect; retries transient failures with exponential
    backoff, surfaces schema mismatches as protocol errors."""

    def __init__(self, spec: BackendSpec):
        self.spec = spec

    def detect(self, request: TeacherRequest) -> TeacherResponse:
        data = _post_with_retries(self.spec, "/v1/detect", request.to_wire())
        return TeacherResponse.from_wire(data, n_prompts=len(request.prompts))


class HttpSegmenterBackend:
    def __init__(self, spec: BackendSpec):
        self.spec = spec

    def segment(self, request: SegmenterRequest) -> SegmenterResponse:
        data = _post_with_retries(self.spec, "/v1/segment", request.to_wire())
        return SegmenterResponse.from_wire(data, expected_count=len(request.boxes))


# -- subprocess -----------------------------------------------------------------


class SubprocessBackend:
    """Line-delimited JSON over a child process: one request per stdin
    line, one response per stdout line, same bodies as the HTTP protocol."""

    def __init__(self, spec: BackendSpec):
        self.spec = spec
        self._lock = threading.Lock()
        try:
            self._proc = subprocess.Popen(
                shlex.split(spec.endpoint),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
            )
        except OSError as e:
            raise PermanentBackendError(f"cannot start backend {spec.endpoint!r}: {e}") from e

    def _roundtrip(self, payload: dict) -> dict:
        import select

        with self._lock:
            if self._proc.poll() is not None:
                raise PermanentBackendError(
                    f"backend process exited with code {self._proc.returncode}"
                )
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            ready, _, _ = select.select([self._proc.stdout], [], [], self.spec.timeout)
            if not ready:
                raise TransientBackendError(f"backend timed out after {self.spec.timeout}s")
            line = self._proc.stdout.readline()
        if not line:
            raise PermanentBackendError("backend closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"backend emitted invalid JSON: {line[:200]}") from e

    def detect(self, request: TeacherRequest) -> TeacherResponse:
        data = self._roundtrip(request.to_wire())
        return TeacherResponse.from_wire(data, n_prompts=len(request.prompts))

    def segment(self, request: SegmenterRequest) -> SegmenterResponse:
        data = self._roundtrip(request.to_wire())
        return SegmenterResponse.from_wire(data, expected_count=len(request.boxes))

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_teacher_backend(spec: BackendSpec, fixtures=None) -> TeacherBackend:
    if spec.kind == "mock-oracle":
        if fixtures is None:
            raise ConfigError("mock-oracle backend needs fixture labels")
        return MockOracleTeacher(fixtures)
    if spec.kind == "remote-http":
        return HttpTeacherBackend(spec)
    return SubprocessBackend(spec)


def make_segmenter_backend(spec: BackendSpec, dims=None) -> SegmenterBackend:
    if spec.kind == "mock-oracle":
        if dims is None:
            raise ConfigError("mock segmenter needs image dimensions")
        return MockSegmenter(dims)
    if spec.kind == "remote-http":
        return HttpSegmenterBackend(spec)
    return SubprocessBackend(spec)


# -- orchestration --------------------------------------------------------------


@dataclass(frozen=True)
class AnnotationResult:
    manifest: DatasetManifest
    detection_images: tuple[AnnotatedImage, ...]
    detections: dict[str, tuple[Detection, ...]]
    segmentation_images: Optional[tuple[AnnotatedImage, ...]]
    failures: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.failures


def _b64_of(path: Path) -> str:
    return base64.b64encode(Path(path).read_bytes()).decode("ascii")


def annotate_dataset(
    records: Sequence[ManifestRecord],
    class_prompts: Sequence[str],
    teacher: TeacherBackend,
    segmenter: Optional[SegmenterBackend] = None,
    box_threshold: float = DEFAULT_BOX_THRESHOLD,
    text_threshold: float = DEFAULT_TEXT_THRESHOLD,
    max_concurrent: int = 1,
    base_dir: Optional[Path] = None,
    send_pixels: bool = False,
    output_dir: Optional[Path] = None,
) -> AnnotationResult:
    """Run the two annotation passes over every record.

    Teacher detections below ``box_threshold`` are dropped before
    storage; surviving boxes are clipped to the image (boxes entirely
    outside it are dropped too). Prompt i maps to class id i. With
    ``output_dir`` set, the resulting datasets are persisted as COCO
    documents (detections.json, segmentation.json).
    """
    prompts = tuple(class_prompts)
    classes = ClassSet(prompts)
    if max_concurrent < 1:
        raise ConfigError("max_concurrent must be >= 1")

    def image_ref(rec: ManifestRecord) -> dict:
        if send_pixels:
            root = Path(base_dir) if base_dir is not None else Path(".")
            return {"image_b64": _b64_of(root / rec.path)}
        return {"image_path": rec.path}

    def detect_one(rec: ManifestRecord):
        request = TeacherRequest(
            prompts=prompts,
            box_threshold=box_threshold,
            text_threshold=text_threshold,
            **image_ref(rec),
        )
        response = teacher.detect(request)
        dets = []
        for bbox, prompt_index, conf in response.detections:
            if conf < box_threshold:
                continue
            try:
                clipped = clip_to_image(bbox, rec.width, rec.height)
            except EmptyClipError:
                continue
            dets.append(Detection(clipped, prompt_index, conf))
        return dets

    results: list[Optional[list[Detection]]] = [None] * len(records)
    failures: list[tuple[str, str]] = []

    def run_detect(idx_rec):
        idx, rec = idx_rec
        try:
            return idx, detect_one(rec), None
        except Exception as e:  # per-image isolation: record and continue
            return idx, None, f"{type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=max_concurrent) as pool:
        for idx, dets, error in pool.map(run_detect, enumerate(records)):
            if error is not None:
                failures.append((records[idx].image_id, error))
            else:
                results[idx] = dets

    detection_images: list[AnnotatedImage] = []
    detections: dict[str, tuple[Detection, ...]] = {}
    kept_records: list[ManifestRecord] = []
    for rec, dets in zip(records, results):
        if dets is None:
            continue
        kept_records.append(
            ManifestRecord(rec.image_id, rec.path, rec.width, rec.height,
                           split=rec.split, source="teacher-auto")
        )
        detections[rec.image_id] = tuple(dets)
        boxes = tuple(GroundTruthBox(d.bbox, d.class_id) for d in dets)
        detection_images.append(AnnotatedImage(rec.image_id, rec.width, rec.height, boxes))

    segmentation_images: Optional[list[AnnotatedImage]] = None
    if segmenter is not None:
        segmentation_images = [None] * len(detection_images)  # type: ignore[list-item]

        def run_segment(idx_img):
            idx, (rec, img) = idx_img
            if not img.ground_truths:
                return idx, img.with_masks(()), None
            request = SegmenterRequest(
                boxes=tuple(g.bbox for g in img.ground_truths), **image_ref(rec)
            )
            try:
                response = segmenter.segment(request)
            except Exception as e:
                return idx, None, f"{type(e).__name__}: {e}"
            masks = []
            for gt, (encoding, payload) in zip(img.ground_truths, response.masks):
                if encoding == "rle":
                    masks.append(MaskAnnotation(class_id=gt.class_id, width=img.width,
                                                height=img.height, rle=payload))
                else:
                    masks.append(MaskAnnotation(class_id=gt.class_id, width=img.width,
                                                height=img.height, polygon=payload))
            return idx, img.with_masks(masks), None

        with ThreadPoolExecutor(max_workers=max_concurrent) as pool:
            pairs = list(enumerate(zip(kept_records, detection_images)))
            for idx, seg_img, error in pool.map(run_segment, pairs):
                if error is not None:
                    failures.append((kept_records[idx].image_id, error))
                else:
                    segmentation_images[idx] = seg_img
        segmentation_images = [s for s in segmentation_images if s is not None]

    manifest = DatasetManifest(classes, tuple(kept_records))
    result = AnnotationResult(
        manifest=manifest,
        detection_images=tuple(detection_images),
        detections=detections,
        segmentation_images=tuple(segmentation_images) if segmentation_images is not None else None,
        failures=tuple(failures),
    )
    if output_dir is not None:
        persist_annotation_result(result, Path(output_dir))
    return result


def persist_annotation_result(result: AnnotationResult, output_dir: Path) -> list[Path]:
    """Write the detection (and segmentation) datasets as COCO documents."""
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    det_path = output_dir / "detections.json"
    det_path.write_text(
        write_coco_json(result.manifest, result.detection_images, result.detections)
    )
    written.append(det_path)
    if result.segmentation_images is not None:
        seg_ids = {img.image_id for img in result.segmentation_images}
        seg_manifest = DatasetManifest(
            result.manifest.classes,
            tuple(r for r in result.manifest.records if r.image_id in seg_ids),
        )
        seg_path = output_dir / "segmentation.json"
        seg_path.write_text(write_coco_json(seg_manifest, result.segmentation_images))
        written.append(seg_path)
    return written
