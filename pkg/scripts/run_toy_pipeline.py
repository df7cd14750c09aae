#!/usr/bin/env python3
"""End-to-end demo on a synthetic dataset, fully offline.

Synthesizes images with painted rectangles, annotates them with the mock
oracle, splits, augments the train split, evaluates the oracle labels
against themselves (a perfect detector), drives one scripted training
run, and renders the comparison report.
"""

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from herdpipe.annotate import MockOracleTeacher, MockSegmenter, annotate_dataset
from herdpipe.core import BBox, Detection
from herdpipe.distill import Hyperparams, ScriptedTrainer, compare_runs, run_distillation, select_best
from herdpipe.formats import DatasetManifest, ManifestRecord, save_dataset
from herdpipe.metrics import EvalConfig, evaluate
from herdpipe.pipeline import PipelineConfig, augment_train, split
from herdpipe.raster import RasterImage, load_image, save_image

PROMPTS = ["camel", "rope", "mask", "pole"]


def synthesize(root: Path, n_images: int, seed: int):
    rng = np.random.default_rng(seed)
    records, fixtures = [], {}
    for k in range(n_images):
        image_id = f"synth{k}"
        w = h = 64
        arr = rng.integers(0, 64, size=(h, w, 3), dtype=np.uint8)
        boxes = []
        for _ in range(rng.integers(1, 4)):
            x0, y0 = rng.integers(0, w - 16, size=2)
            bw, bh = rng.integers(8, 16, size=2)
            cls = int(rng.integers(0, len(PROMPTS)))
            arr[y0 : y0 + bh, x0 : x0 + bw] = (40 * (cls + 1)) % 256
            boxes.append((BBox(float(x0), float(y0), float(x0 + bw), float(y0 + bh)),
                          PROMPTS[cls], float(rng.uniform(0.5, 1.0))))
        path = f"train/images/{image_id}.png"
        save_image(RasterImage.from_array(arr), root / path)
        records.append(ManifestRecord(image_id, path, w, h))
        fixtures[image_id] = boxes
    return records, fixtures


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", type=int, default=40)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--workdir", default=None)
    args = parser.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="herdpipe-demo-"))
    print(f"working under {workdir}")

    records, fixtures = synthesize(workdir / "raw", args.images, args.seed)
    print(f"synthesized {len(records)} images")

    dims = {r.image_id: (r.width, r.height) for r in records}
    result = annotate_dataset(
        records, PROMPTS,
        MockOracleTeacher(fixtures),
        segmenter=MockSegmenter(dims),
        max_concurrent=4,
        output_dir=workdir / "auto",
    )
    n_boxes = sum(len(i.ground_truths) for i in result.detection_images)
    print(f"annotated: {n_boxes} boxes, {len(result.failures)} failures")

    assignment = split(result.manifest.ids(), (0.7, 0.2, 0.1), args.seed)
    print(f"split counts (train/valid/test): {assignment.counts()}")
    split_records = tuple(
        ManifestRecord(r.image_id, r.path, r.width, r.height,
                       split=assignment.assignment[r.image_id], source=r.source)
        for r in result.manifest.records
    )
    manifest = DatasetManifest(result.manifest.classes, split_records)
    save_dataset(workdir / "dataset", manifest, result.detection_images)

    by_id = {img.image_id: img for img in result.detection_images}
    pixels = {r.image_id: load_image(workdir / "raw" / r.path) for r in records}
    train_items = [(by_id[i], pixels[i]) for i in assignment.ids_for("train")]
    outputs = augment_train(train_items, PipelineConfig(rng_seed=args.seed))
    print(f"augmented train split: {len(train_items)} -> {len(outputs)} outputs")

    predictions = {
        img.image_id: tuple(Detection(g.bbox, g.class_id, 1.0) for g in img.ground_truths)
        for img in result.detection_images
    }
    report = evaluate(result.detection_images, predictions,
                      EvalConfig(manifest.classes, confidence_steps=21))
    print(f"self-evaluation: AP={report.ap:.3f} AP@0.50={report.ap50:.3f} "
          f"mAP@0.50:0.95={report.ap_sweep:.3f}")

    runs_dir = workdir / "runs"
    runs = []
    for variant, epochs in (("YOLOv8s", 5), ("YOLOv8n", 5)):
        hp = Hyperparams(num_epochs=epochs, image_size=640, model_variant=variant)
        trainer = ScriptedTrainer(seed=args.seed + len(runs))
        runs.append(run_distillation(str(workdir / "dataset"), hp, trainer, runs_dir=runs_dir))
    table = compare_runs(runs)
    print()
    print(table.render())
    print(f"\nbest by max-ap: {select_best(runs, 'max-ap')}")


if __name__ == "__main__":
    main()
