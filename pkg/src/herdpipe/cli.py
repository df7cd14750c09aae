"""Command-line entry point: the full pipeline as subcommands over a
shared config file.

Exit codes: 0 on full success, 2 on partial annotation failure, 1 on any
other error. With --json, a machine-readable summary (validated by the
shipped cli-summary schema) goes to stdout; human output and all errors
go to stderr.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from pathlib import Path

from . import wire
from .annotate import (
    BackendSpec,
    HttpSegmenterBackend,
    HttpTeacherBackend,
    MockOracleTeacher,
    MockSegmenter,
    SubprocessBackend,
    annotate_dataset,
)
from .config import CliConfig
from .core import ClassSet
from .distill import (
    HttpTrainerBackend,
    Hyperparams,
    ScriptedTrainer,
    compare_runs,
    load_runs,
    run_distillation,
    select_best,
)
from .errors import ConfigError, HerdpipeError
from .formats import convert, load_dataset, parse_coco_json, save_dataset
from .formats.manifest import DatasetManifest, ManifestRecord
from .metrics import DEFAULT_IOU_SWEEP, EvalConfig, evaluate
from .pipeline import (
    augment_train,
    extract_video_frames,
    save_preprocessing_metadata,
    split,
    stride_indices,
    preprocess,
)
from .profiling import ModelProfile, profile_backend, render_profile_table
from .raster import load_image, save_image


class CliError(HerdpipeError):
    def __init__(self, message: str, outputs: dict | None = None):
        super().__init__(message)
        self.outputs = outputs or {}


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage faults; 2 means partial annotation
    # failure here, so route usage errors through the normal error path
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated fractions, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _teacher_backend(spec: BackendSpec, fixtures_path: str | None):
    if spec.kind == "mock-oracle":
        if fixtures_path is None:
            raise ConfigError("mock-oracle teacher needs --fixtures <coco json>")
        manifest, images, _ = parse_coco_json(Path(fixtures_path).read_text())
        if manifest is None:
            raise ConfigError(f"fixtures file {fixtures_path} is empty")
        labels = {
            img.image_id: [
                (g.bbox, manifest.classes.name_of(g.class_id), 1.0) for g in img.ground_truths
            ]
            for img in images
        }
        return MockOracleTeacher(labels)
    if spec.kind == "remote-http":
        return HttpTeacherBackend(spec)
    return SubprocessBackend(spec)


def _segmenter_backend(spec: BackendSpec, records):
    if spec.kind == "mock-oracle":
        return MockSegmenter({r.image_id: (r.width, r.height) for r in records})
    if spec.kind == "remote-http":
        return HttpSegmenterBackend(spec)
    return SubprocessBackend(spec)


def _load_gt(path: str):
    """Ground truths from a COCO document or a dataset root/manifest."""
    p = Path(path)
    if p.is_dir() or p.name == "manifest.json":
        return load_dataset(p)
    manifest, images, _ = parse_coco_json(p.read_text())
    if manifest is None:
        raise ConfigError(f"{path} holds an empty dataset")
    return manifest, images


def _load_predictions(path: str, classes: ClassSet):
    """Scored COCO annotations remapped onto the ground-truth class set."""
    manifest, _, preds = parse_coco_json(Path(path).read_text())
    if manifest is None:
        return {}
    remap = {i: classes.id_of(name) for i, name in enumerate(manifest.classes)}
    from .core import Detection

    return {
        image_id: [Detection(d.bbox, remap[d.class_id], d.confidence) for d in dets]
        for image_id, dets in preds.items()
    }


def _infer_format(path: Path) -> str:
    if path.is_dir():
        return "voc-xml" if list(path.glob("*.xml")) else "yolo-txt"
    if path.suffix == ".csv":
        return "csv"
    if path.suffix == ".json":
        return "coco-json"
    raise ConfigError(f"cannot infer annotation format of {path}; pass --in-format")


# -- subcommand implementations (each returns the outputs dict) -------------------


def cmd_extract_frames(args, cfg: CliConfig) -> dict:
    stride = args.stride if args.stride is not None else cfg.pipeline.frame_stride
    if args.count is not None:
        indices = stride_indices(args.count, stride)
        return {"stride": stride, "indices": indices, "frames": len(indices)}
    if not args.video:
        raise ConfigError("extract-frames needs --video <file> or --count <n>")
    written = extract_video_frames(Path(args.video), stride, Path(args.out))
    return {"stride": stride, "frames": len(written), "paths": [str(p) for p in written]}


def cmd_annotate(args, cfg: CliConfig) -> dict:
    prompts = args.prompts.split(",") if args.prompts else list(cfg.class_prompts)
    if not prompts:
        raise ConfigError("no class prompts given (--prompts or config class_prompts)")
    manifest, _ = _load_gt(args.images)
    teacher_spec = cfg.teacher or BackendSpec(kind="mock-oracle")
    teacher = _teacher_backend(teacher_spec, args.fixtures)
    segmenter = None
    if args.segment:
        seg_spec = cfg.segmenter or BackendSpec(kind="mock-oracle")
        segmenter = _segmenter_backend(seg_spec, manifest.records)
    result = annotate_dataset(
        manifest.records,
        prompts,
        teacher,
        segmenter=segmenter,
        box_threshold=args.box_threshold,
        text_threshold=args.text_threshold,
        max_concurrent=args.jobs,
        base_dir=Path(args.images).parent,
        output_dir=Path(args.out),
    )
    outputs = {
        "images": len(result.detection_images),
        "boxes": sum(len(i.ground_truths) for i in result.detection_images),
        "failures": [list(f) for f in result.failures],
        "detections_file": str(Path(args.out) / "detections.json"),
    }
    if result.segmentation_images is not None:
        outputs["segmentation_file"] = str(Path(args.out) / "segmentation.json")
    return outputs


def cmd_convert(args, cfg: CliConfig) -> dict:
    in_path = Path(args.input)
    in_format = args.in_format or _infer_format(in_path)
    summary = convert(in_path, in_format, Path(args.out), args.format)
    print(summary.render(), file=sys.stderr)
    return summary.to_json_dict()


def cmd_split(args, cfg: CliConfig) -> dict:
    manifest, images = _load_gt(args.images)
    fractions = _parse_fractions(args.fractions) if args.fractions else cfg.pipeline.split_fractions
    seed = args.seed if args.seed is not None else cfg.seed
    assignment = split(manifest.ids(), fractions, seed)
    records = tuple(
        ManifestRecord(r.image_id, r.path, r.width, r.height,
                       split=assignment.assignment[r.image_id], source=r.source)
        for r in manifest.records
    )
    new_manifest = DatasetManifest(manifest.classes, records)
    out = Path(args.out)
    if out.name == "manifest.json":
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(new_manifest.to_json())
    else:
        save_dataset(out, new_manifest, images)
        out = out / "manifest.json"
    counts = new_manifest.split_counts()
    return {"manifest": str(out), "counts": counts, "seed": seed}


def cmd_augment(args, cfg: CliConfig) -> dict:
    from dataclasses import replace

    root = Path(args.dataset)
    manifest, images = _load_gt(str(root))
    base = root if root.is_dir() else root.parent
    seed = args.seed if args.seed is not None else cfg.seed
    pipeline_cfg = replace(cfg.pipeline, rng_seed=seed)

    by_id = {img.image_id: img for img in images}
    train_items = []
    passthrough = []  # (record, image, pixels) for valid/test
    for rec in manifest.records:
        pixels = load_image(base / rec.path)
        if args.preprocess:
            pixels = preprocess(pixels, pipeline_cfg)
        if rec.split == "train":
            train_items.append((by_id[rec.image_id], pixels))
        else:
            passthrough.append((rec, by_id[rec.image_id], pixels))

    outputs = augment_train(train_items, pipeline_cfg)

    out_root = Path(args.out)
    out_records = []
    out_images = []
    for out in outputs:
        rec_path = f"train/images/{out.annotations.image_id}.png"
        origin = manifest.record_for(out.origin_id)
        out_records.append(
            ManifestRecord(out.annotations.image_id, rec_path,
                           out.annotations.width, out.annotations.height,
                           split="train", source=origin.source)
        )
        out_images.append(out.annotations)
        save_image(out.pixels, out_root / rec_path)
    for rec, img, pixels in passthrough:
        rec_path = f"{rec.split}/images/{rec.image_id}.png"
        out_records.append(ManifestRecord(rec.image_id, rec_path, rec.width, rec.height,
                                          split=rec.split, source=rec.source))
        out_images.append(img)
        save_image(pixels, out_root / rec_path)

    new_manifest = DatasetManifest(manifest.classes, tuple(out_records))
    save_dataset(out_root, new_manifest, out_images)
    save_preprocessing_metadata(out_root, pipeline_cfg)
    return {
        "dataset": str(out_root),
        "train_outputs": len(outputs),
        "total_images": len(out_records),
        "counts": new_manifest.split_counts(),
        "seed": seed,
    }


def cmd_evaluate(args, cfg: CliConfig) -> dict:
    manifest, images = _load_gt(args.gt)
    predictions = _load_predictions(args.pred, manifest.classes)
    thresholds = (
        _parse_floats(args.iou_thresholds)
        if args.iou_thresholds
        else (cfg.iou_thresholds or DEFAULT_IOU_SWEEP)
    )
    eval_cfg = EvalConfig(
        class_set=manifest.classes,
        iou_thresholds=tuple(thresholds),
        confidence_steps=args.steps or cfg.confidence_steps,
    )
    report = evaluate(images, predictions, eval_cfg)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json() + "\n")
    if args.curves_dir:
        curves_dir = Path(args.curves_dir)
        curves_dir.mkdir(parents=True, exist_ok=True)
        for name, text in report.curves_csv().items():
            (curves_dir / f"{name}.csv").write_text(text)
    if args.table:
        print(report.render_table(), file=sys.stderr)
    return {
        "AP": report.ap,
        "Recall": report.recall,
        "AP_valid0.50": report.ap50,
        "AP_valid0.95": report.ap_sweep,
        "report_file": args.out,
    }


def cmd_distill(args, cfg: CliConfig) -> dict:
    spec = cfg.trainer or BackendSpec(kind="mock-oracle")
    if args.trainer_endpoint:
        spec = BackendSpec(kind="remote-http", endpoint=args.trainer_endpoint,
                           timeout=spec.timeout, retries=spec.retries)
    trainer = ScriptedTrainer(seed=cfg.seed) if spec.kind == "mock-oracle" else HttpTrainerBackend(spec)
    hp = Hyperparams(
        num_epochs=args.epochs,
        batch_size=args.batch,
        image_size=args.image_size,
        model_variant=args.model,
    )
    run = run_distillation(args.dataset, hp, trainer, runs_dir=Path(args.runs_dir))
    outputs = {
        "run_id": run.run_id,
        "run_file": str(Path(args.runs_dir) / f"{run.run_id}.json"),
        "aborted": run.aborted,
        "diagnostics": list(run.diagnostics),
        "epochs": len(run.epochs),
    }
    if run.final is not None:
        outputs["final"] = {"AP": run.final.ap, "Recall": run.final.recall}
    if run.aborted:
        raise CliError(f"run {run.run_id} failed: {'; '.join(run.diagnostics)}", outputs)
    return outputs


def cmd_report(args, cfg: CliConfig) -> dict:
    runs = load_runs(Path(args.runs_dir))
    table = compare_runs(runs)
    print(table.render(), file=sys.stderr)
    if args.csv:
        Path(args.csv).write_text(table.to_csv())
    outputs = {"rows": [dict(r) for r in table.rows]}
    if args.select:
        outputs["best"] = select_best(runs, args.select)
        outputs["criterion"] = args.select
    if args.profiles:
        prows = [
            {"Model": r.hyperparams.model_variant, "Epoch": r.hyperparams.num_epochs,
             "Size": r.hyperparams.image_size, "profile": r.profile}
            for r in runs if r.profile is not None
        ]
        if prows:
            print(render_profile_table(prows), file=sys.stderr)
    return outputs


def cmd_profile(args, cfg: CliConfig) -> dict:
    spec = BackendSpec(kind="remote-http", endpoint=args.endpoint, timeout=args.timeout)
    trainer = HttpTrainerBackend(spec)
    probe_dir = Path(args.images)
    probes = sorted(probe_dir.glob("*.png")) + sorted(probe_dir.glob("*.jpg"))
    if not probes:
        raise ConfigError(f"no probe images (*.png, *.jpg) under {probe_dir}")
    payloads = [base64.b64encode(p.read_bytes()).decode("ascii") for p in probes]

    class _Adapter:
        def infer(self, image_b64):
            return trainer.infer(image_b64)

    latency_ms, fps = profile_backend(_Adapter(), payloads, trials=args.trials)
    profile = ModelProfile.from_describe(trainer.describe(), fps=fps, latency_ms=latency_ms)
    return {"profile": profile.to_json_dict(), "trials": args.trials}


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="herdpipe", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="config file (YAML or JSON); falls back to $HERDPIPE_CONFIG")
    parser.add_argument("--json", action="store_true", help="print a machine-readable summary")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="worker parallelism cap")

    # the same flags are accepted after the subcommand; SUPPRESS keeps a
    # post-subcommand omission from clobbering a pre-subcommand value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract-frames", help="select every Nth frame", parents=[common])
    p.add_argument("--video", help="video file to decode")
    p.add_argument("--count", type=int, help="frame count for index-only mode")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--out", default="frames")

    p = sub.add_parser("annotate", help="auto-annotate images with the teacher", parents=[common])
    p.add_argument("--images", required=True, help="dataset root or manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--prompts", help="comma-separated class prompts")
    p.add_argument("--fixtures", help="coco json with oracle labels (mock teacher)")
    p.add_argument("--segment", action="store_true", help="also run the segmenter pass")
    p.add_argument("--box-threshold", type=float, default=0.35)
    p.add_argument("--text-threshold", type=float, default=0.25)

    p = sub.add_parser("convert", help="convert between annotation formats", parents=[common])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--in-format", choices=("coco-json", "voc-xml", "yolo-txt", "csv"))
    p.add_argument("--out", required=True)
    p.add_argument("--format", required=True, choices=("coco-json", "voc-xml", "yolo-txt", "csv"))

    p = sub.add_parser("split", help="assign train/valid/test splits", parents=[common])
    p.add_argument("--images", required=True, help="dataset root or manifest.json")
    p.add_argument("--fractions", help="train,valid,test e.g. 0.7,0.2,0.1")
    p.add_argument("--out", required=True, help="output manifest.json or dataset root")

    p = sub.add_parser("augment", help="augment the train split", parents=[common])
    p.add_argument("--dataset", required=True, help="dataset root with images")
    p.add_argument("--out", required=True)
    p.add_argument("--preprocess", action="store_true",
                   help="apply brightness/contrast/blur before augmenting")

    p = sub.add_parser("evaluate", help="detection metrics against ground truth", parents=[common])
    p.add_argument("--gt", required=True, help="coco json, dataset root, or manifest.json")
    p.add_argument("--pred", required=True, help="coco json with scored annotations")
    p.add_argument("--iou-thresholds", help="comma-separated sweep, default 0.50:0.05:0.95")
    p.add_argument("--steps", type=int, help="confidence curve sample count")
    p.add_argument("--out", help="write the full report JSON here")
    p.add_argument("--curves-dir", help="write per-class curve CSVs here")
    p.add_argument("--table", action="store_true", help="print the metrics table")

    p = sub.add_parser("distill", help="drive one training run", parents=[common])
    p.add_argument("--dataset", required=True)
    p.add_argument("--runs-dir", default="runs")
    p.add_argument("--trainer-endpoint", help="HTTP trainer base URL")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--image-size", type=int, default=1024)
    p.add_argument("--model", default="YOLOv8s")

    p = sub.add_parser("report", help="compare persisted runs", parents=[common])
    p.add_argument("--runs-dir", default="runs")
    p.add_argument("--select", choices=("max-ap", "max-ap50", "max-recall", "balanced"))
    p.add_argument("--csv", help="also write the table as CSV")
    p.add_argument("--profiles", action="store_true", help="print the properties table")

    p = sub.add_parser("profile", help="measure inference latency/fps of a backend", parents=[common])
    p.add_argument("--endpoint", required=True)
    p.add_argument("--images", required=True, help="directory of probe images")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--timeout", type=float, default=30.0)

    return parser


COMMANDS = {
    "extract-frames": cmd_extract_frames,
    "annotate": cmd_annotate,
    "convert": cmd_convert,
    "split": cmd_split,
    "augment": cmd_augment,
    "evaluate": cmd_evaluate,
    "distill": cmd_distill,
    "report": cmd_report,
    "profile": cmd_profile,
}


def main(argv=None) -> int:
    parser = build_parser()
    summary = {"command": "", "ok": False, "exit_code": 1, "seed": None,
               "outputs": {}, "errors": []}
    emit_json = False
    try:
        args = parser.parse_args(argv)
        emit_json = args.json
        summary["command"] = args.command
        cfg = CliConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        summary["seed"] = cfg.seed
        outputs = COMMANDS[args.command](args, cfg)
        summary["outputs"] = outputs
        failures = outputs.get("failures") or []
        summary["ok"] = not failures
        summary["exit_code"] = 2 if failures else 0
        if failures:
            summary["errors"] = [f"{image_id}: {message}" for image_id, message in failures]
    except (HerdpipeError, OSError) as e:
        summary["errors"] = [str(e)]
        summary["outputs"] = getattr(e, "outputs", {})
        summary["ok"] = False
        summary["exit_code"] = 1
        print(f"error: {e}", file=sys.stderr)
    if emit_json:
        wire.validate("cli-summary", summary)
        print(json.dumps(summary, indent=2))
    return summary["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
