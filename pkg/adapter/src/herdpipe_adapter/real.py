"""Real model engines: zero-shot detector (GroundingDINO), box-prompted
segmenter (SAM), and a YOLO-family student via ultralytics.

These load lazily and need their packages plus checkpoints on disk; none
of that is available in CI, so this module is exercised only in
deployments with weights. The synthetic engine covers protocol
conformance everywhere else.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .engines import DecodedImage


def _require(module: str, hint: str):
    try:
        return __import__(module, fromlist=["_"])
    except ImportError as e:
        raise RuntimeError(f"engine needs {module!r}: {hint}") from e


class RealEngine:
    """GroundingDINO detect, SAM segment, ultralytics train/describe."""

    name = "groundingdino-sam-yolo"

    def __init__(self, config):
        self.config = config
        self._detector = None
        self._sam_predictor = None
        self._student = None

    # -- detector ------------------------------------------------------------

    def _load_detector(self):
        if self._detector is None:
            inference = _require(
                "groundingdino.util.inference",
                "pip install groundingdino-py and provide detector_config/checkpoint",
            )
            if not (self.config.detector_config and self.config.detector_checkpoint):
                raise RuntimeError("detector_config and detector_checkpoint are required")
            self._detector = inference.load_model(
                str(self.config.detector_config), str(self.config.detector_checkpoint)
            )
        return self._detector

    def detect(self, image: DecodedImage, prompts, box_threshold, text_threshold):
        inference = _require("groundingdino.util.inference", "pip install groundingdino-py")
        torch = _require("torch", "pip install torch")
        model = self._load_detector()
        pil = Image.open(io.BytesIO(image.data)).convert("RGB")
        _, tensor = inference.load_image_from_pil(pil) if hasattr(
            inference, "load_image_from_pil"
        ) else (None, _pil_to_dino_tensor(pil))
        caption = " . ".join(prompts)
        boxes, logits, phrases = inference.predict(
            model=model, image=tensor, caption=caption,
            box_threshold=box_threshold, text_threshold=text_threshold,
            device=self.config.device,
        )
        detections = []
        w, h = image.width, image.height
        for (cx, cy, bw, bh), score, phrase in zip(
            boxes.tolist(), logits.tolist(), phrases
        ):
            index = _phrase_to_prompt_index(phrase, prompts)
            if index is None:
                continue
            detections.append(
                {
                    "bbox": [(cx - bw / 2) * w, (cy - bh / 2) * h,
                             (cx + bw / 2) * w, (cy + bh / 2) * h],
                    "prompt_index": index,
                    "confidence": float(min(max(score, 0.0), 1.0)),
                }
            )
        del torch
        return detections

    # -- segmenter -----------------------------------------------------------

    def _load_sam(self):
        if self._sam_predictor is None:
            sa = _require("segment_anything", "pip install segment-anything")
            if not self.config.segmenter_checkpoint:
                raise RuntimeError("segmenter_checkpoint is required")
            sam = sa.sam_model_registry["vit_h"](checkpoint=str(self.config.segmenter_checkpoint))
            sam.to(self.config.device)
            self._sam_predictor = sa.SamPredictor(sam)
        return self._sam_predictor

    def segment(self, image: DecodedImage, boxes):
        predictor = self._load_sam()
        pil = Image.open(io.BytesIO(image.data)).convert("RGB")
        predictor.set_image(np.asarray(pil))
        masks = []
        for box in boxes:
            mask_arr, _, _ = predictor.predict(box=np.asarray(box), multimask_output=False)
            masks.append({"rle": _encode_rle(mask_arr[0])})
        return masks

    # -- student -------------------------------------------------------------

    def _load_student(self):
        if self._student is None:
            ultralytics = _require("ultralytics", "pip install ultralytics")
            checkpoint = self.config.student_checkpoint or "yolov8s.pt"
            self._student = ultralytics.YOLO(str(checkpoint))
        return self._student

    def describe(self) -> dict:
        from pathlib import Path

        model = self._load_student()
        layers, params, _, flops_g = model.info(verbose=False)
        weight = self.config.student_checkpoint
        weight_bytes = Path(weight).stat().st_size if weight else 0
        return {"layers": int(layers), "params": int(params),
                "flops": float(flops_g) * 1e9, "weight_bytes": int(weight_bytes)}

    def train_records(self, dataset_path: str, hyperparams: dict) -> list[dict]:
        model = self._load_student()
        results = model.train(
            data=str(dataset_path),
            epochs=int(hyperparams["num_epochs"]),
            batch=int(hyperparams["batch_size"]),
            imgsz=int(hyperparams["image_size"]),
            lr0=float(hyperparams["lr0"]),
            lrf=float(hyperparams["lrf"]),
            momentum=float(hyperparams["momentum"]),
            weight_decay=float(hyperparams["weight_decay"]),
            optimizer=hyperparams["optimizer"],
            device=self.config.device,
            verbose=False,
        )
        # ultralytics writes per-epoch metrics to results.csv in its run dir
        import csv
        from pathlib import Path

        csv_path = Path(results.save_dir) / "results.csv"
        records = []
        with open(csv_path) as f:
            for i, row in enumerate(csv.DictReader(f), start=1):
                row = {k.strip(): v for k, v in row.items()}
                records.append(
                    {
                        "epoch": i,
                        "box_loss": float(row["train/box_loss"]),
                        "cls_loss": float(row["train/cls_loss"]),
                        "dfl_loss": float(row["train/dfl_loss"]),
                        "val_box_loss": float(row["val/box_loss"]),
                        "val_cls_loss": float(row["val/cls_loss"]),
                        "val_dfl_loss": float(row["val/dfl_loss"]),
                        "ap": float(row["metrics/mAP50-95(B)"]),
                        "recall": float(row["metrics/recall(B)"]),
                        "ap50": float(row["metrics/mAP50(B)"]),
                        "ap50_95": float(row["metrics/mAP50-95(B)"]),
                    }
                )
        return records


def _phrase_to_prompt_index(phrase: str, prompts) -> int | None:
    phrase = phrase.lower().strip()
    for i, p in enumerate(prompts):
        if p.lower() in phrase or phrase in p.lower():
            return i
    return None


def _pil_to_dino_tensor(pil):
    transforms = _require("groundingdino.datasets.transforms", "pip install groundingdino-py")
    transform = transforms.Compose(
        [
            transforms.RandomResize([800], max_size=1333),
            transforms.ToTensor(),
            transforms.Normalize([0.485, 0.456, 0.406], [0.229, 0.224, 0.225]),
        ]
    )
    tensor, _ = transform(pil, None)
    return tensor


def _encode_rle(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    runs = []
    on = False
    length = 0
    for v in flat:
        if bool(v) == on:
            length += 1
        else:
            runs.append(length)
            on = bool(v)
            length = 1
    runs.append(length)
    return runs
