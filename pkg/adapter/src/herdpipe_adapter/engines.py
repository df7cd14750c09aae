"""Engine interface and the built-in synthetic engine.

An engine supplies the model-facing half of every endpoint. The synthetic
engine is deterministic (keyed on the image bytes), dependency-free, and
schema-exact; it exists so the service, its clients, and conformance tests
run without weights. Real engines live in ``real.py``.
"""

from __future__ import annotations

import hashlib
import io
import random
from dataclasses import dataclass
from typing import Protocol, Sequence

from PIL import Image


@dataclass(frozen=True)
class DecodedImage:
    width: int
    height: int
    data: bytes  # original payload bytes (hash key)


def decode_image(raw: bytes) -> DecodedImage:
    with Image.open(io.BytesIO(raw)) as im:
        return DecodedImage(width=im.width, height=im.height, data=raw)


class Engine(Protocol):
    name: str

    def detect(self, image: DecodedImage, prompts: Sequence[str],
               box_threshold: float, text_threshold: float) -> list[dict]: ...

    def segment(self, image: DecodedImage, boxes: Sequence[Sequence[float]]) -> list[dict]: ...

    def describe(self) -> dict: ...

    def train_records(self, dataset_path: str, hyperparams: dict) -> list[dict]: ...


class SyntheticEngine:
    """Deterministic stand-in for the real models.

    Detections are derived from a hash of the image bytes, so identical
    payloads always produce identical responses; boxes always lie inside
    the image and confidences at or above the requested threshold.
    """

    name = "synthetic"

    def __init__(self, class_names: Sequence[str] = (), seed: int = 0):
        self.class_names = tuple(class_names)
        self.seed = seed

    def _rng(self, *tokens: bytes) -> random.Random:
        h = hashlib.sha256(str(self.seed).encode())
        for t in tokens:
            h.update(b"\x00")
            h.update(t)
        return random.Random(int.from_bytes(h.digest()[:8], "big"))

    def detect(self, image: DecodedImage, prompts: Sequence[str],
               box_threshold: float, text_threshold: float) -> list[dict]:
        rng = self._rng(image.data, ",".join(prompts).encode())
        detections = []
        for _ in range(rng.randint(1, 3)):
            w = rng.uniform(image.width * 0.2, image.width * 0.6)
            h = rng.uniform(image.height * 0.2, image.height * 0.6)
            x0 = rng.uniform(0, image.width - w)
            y0 = rng.uniform(0, image.height - h)
            detections.append(
                {
                    "bbox": [x0, y0, x0 + w, y0 + h],
                    "prompt_index": rng.randrange(len(prompts)),
                    "confidence": rng.uniform(box_threshold, 1.0),
                }
            )
        return detections

    def segment(self, image: DecodedImage, boxes: Sequence[Sequence[float]]) -> list[dict]:
        # one run-length rectangle per box, clipped to the image; runs
        # alternate off/on over row-major pixels, starting with off
        masks = []
        for box in boxes:
            x0 = int(min(max(round(box[0]), 0), image.width))
            y0 = int(min(max(round(box[1]), 0), image.height))
            x1 = int(min(max(round(box[2]), x0), image.width))
            y1 = int(min(max(round(box[3]), y0), image.height))
            runs: list[int] = []
            on = False
            length = 0

            def push(n: int, value: bool):
                nonlocal on, length
                if n <= 0:
                    return
                if value == on:
                    length += n
                else:
                    runs.append(length)
                    on = value
                    length = n

            for row in range(image.height):
                if y0 <= row < y1 and x1 > x0:
                    push(x0, False)
                    push(x1 - x0, True)
                    push(image.width - x1, False)
                else:
                    push(image.width, False)
            runs.append(length)
            masks.append({"rle": runs})
        return masks

    def describe(self) -> dict:
        return {"layers": 168, "params": 11_100_000, "flops": 28.4e9,
                "weight_bytes": 21_500_000}

    def train_records(self, dataset_path: str, hyperparams: dict) -> list[dict]:
        rng = self._rng(str(dataset_path).encode(), repr(sorted(hyperparams.items())).encode())
        records = []
        n = int(hyperparams["num_epochs"])
        for e in range(1, n + 1):
            progress = e / n
            loss = 1.1 * (1.0 - 0.55 * progress) + rng.uniform(0, 0.02)
            ap = min(1.0, 0.35 + 0.45 * progress + rng.uniform(0, 0.02))
            records.append(
                {
                    "epoch": e,
                    "box_loss": round(loss, 6),
                    "cls_loss": round(loss * 0.92, 6),
                    "dfl_loss": round(loss * 1.08, 6),
                    "val_box_loss": round(loss * 1.04, 6),
                    "val_cls_loss": round(loss * 0.96, 6),
                    "val_dfl_loss": round(loss * 1.12, 6),
                    "ap": round(ap, 6),
                    "recall": round(min(1.0, ap * 0.94), 6),
                    "ap50": round(min(1.0, ap * 1.03), 6),
                    "ap50_95": round(ap * 0.78, 6),
                    "train_loss_sum": round(loss * 3.0, 6),
                }
            )
        return records


def make_engine(name: str, config) -> Engine:
    if name == "synthetic":
        return SyntheticEngine(class_names=config.class_names)
    if name in ("groundingdino-sam-yolo", "real"):
        from .real import RealEngine

        return RealEngine(config)
    raise ValueError(f"unknown engine {name!r}")
