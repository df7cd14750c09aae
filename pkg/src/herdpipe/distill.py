"""Distillation workflow: package the auto-annotated dataset, configure
hyperparameters, drive a pluggable trainer backend through its epoch loop,
ingest per-epoch records, and compare/select runs.

This module never computes gradients or losses. Shuffling, mini-batching,
forward/backward, and loss calculation are the trainer backend's
contract, parameterized by the hyperparameters sent at start; what flows
back is one record per epoch, validated strictly here: contiguous epoch
indices from 1, finite losses, metrics inside [0, 1] (violations reject
the record and mark the run failed, nothing is ever clamped). The
trainer-side per-epoch loss accumulator, when reported, is stored as
``train_loss_sum`` and otherwise unused.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence

from . import wire
from .annotate import BackendSpec, request_with_retries
from .errors import ConfigError, ProtocolError
from .profiling import ModelProfile

METRIC_FIELDS = ("ap", "recall", "ap50", "ap50_95")
LOSS_FIELDS = ("box_loss", "cls_loss", "dfl_loss", "val_box_loss", "val_cls_loss", "val_dfl_loss")


@dataclass(frozen=True)
class Hyperparams:
    """Trainer configuration; defaults follow the reference recipe for the
    v8 family (batch 16, SGD, lr 0.01/0.01, momentum 0.937, decay 0.001)."""

    num_epochs: int = 50
    batch_size: int = 16
    lr0: float = 0.01
    lrf: float = 0.01
    momentum: float = 0.937
    weight_decay: float = 0.001
    optimizer: str = "SGD"
    image_size: int = 1024
    model_variant: str = "YOLOv8s"

    def __post_init__(self):
        if self.num_epochs < 1:
            raise ConfigError("num_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr0 <= 0 or self.lrf <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.image_size < 32:
            raise ConfigError("image_size must be >= 32")

    def to_wire(self) -> dict:
        return {
            "num_epochs": self.num_epochs,
            "batch_size": self.batch_size,
            "lr0": self.lr0,
            "lrf": self.lrf,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "optimizer": self.optimizer,
            "image_size": self.image_size,
            "model_variant": self.model_variant,
        }

    @classmethod
    def from_wire(cls, doc: dict) -> "Hyperparams":
        return cls(**doc)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    box_loss: float
    cls_loss: float
    dfl_loss: float
    val_box_loss: float
    val_cls_loss: float
    val_dfl_loss: float
    ap: float
    recall: float
    ap50: float
    ap50_95: float
    train_loss_sum: Optional[float] = None

    def to_wire(self) -> dict:
        doc = {
            "epoch": self.epoch,
            "box_loss": self.box_loss,
            "cls_loss": self.cls_loss,
            "dfl_loss": self.dfl_loss,
            "val_box_loss": self.val_box_loss,
            "val_cls_loss": self.val_cls_loss,
            "val_dfl_loss": self.val_dfl_loss,
            "ap": self.ap,
            "recall": self.recall,
            "ap50": self.ap50,
            "ap50_95": self.ap50_95,
        }
        if self.train_loss_sum is not None:
            doc["train_loss_sum"] = self.train_loss_sum
        return doc

    @classmethod
    def from_wire(cls, doc: dict) -> "EpochRecord":
        return cls(
            epoch=int(doc["epoch"]),
            box_loss=float(doc["box_loss"]),
            cls_loss=float(doc["cls_loss"]),
            dfl_loss=float(doc["dfl_loss"]),
            val_box_loss=float(doc["val_box_loss"]),
            val_cls_loss=float(doc["val_cls_loss"]),
            val_dfl_loss=float(doc["val_dfl_loss"]),
            ap=float(doc["ap"]),
            recall=float(doc["recall"]),
            ap50=float(doc["ap50"]),
            ap50_95=float(doc["ap50_95"]),
            train_loss_sum=None if doc.get("train_loss_sum") is None else float(doc["train_loss_sum"]),
        )

    def problems(self, expected_epoch: int) -> list[str]:
        """Contract violations that must fail the run."""
        issues = []
        if self.epoch != expected_epoch:
            issues.append(f"expected epoch {expected_epoch}, got {self.epoch}")
        for name in LOSS_FIELDS:
            v = getattr(self, name)
            if not math.isfinite(v):
                issues.append(f"epoch {self.epoch}: non-finite {name} ({v})")
        for name in METRIC_FIELDS:
            v = getattr(self, name)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                issues.append(f"epoch {self.epoch}: metric {name}={v} outside [0, 1]")
        return issues


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    hyperparams: Hyperparams
    epochs: tuple[EpochRecord, ...]
    checkpoint: Optional[str] = None
    profile: Optional[ModelProfile] = None
    aborted: bool = False
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))
        if not self.aborted and len(self.epochs) != self.hyperparams.num_epochs:
            raise ConfigError(
                f"run {self.run_id!r}: {len(self.epochs)} epoch records for "
                f"{self.hyperparams.num_epochs} epochs (flag the run aborted)"
            )

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None

    def to_json_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "hyperparams": self.hyperparams.to_wire(),
            "epochs": [e.to_wire() for e in self.epochs],
            "checkpoint": self.checkpoint,
            "profile": None if self.profile is None else self.profile.to_json_dict(),
            "aborted": self.aborted,
            "diagnostics": list(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        doc = json.loads(text)
        return cls(
            run_id=doc["run_id"],
            hyperparams=Hyperparams.from_wire(doc["hyperparams"]),
            epochs=tuple(EpochRecord.from_wire(e) for e in doc["epochs"]),
            checkpoint=doc.get("checkpoint"),
            profile=None if doc.get("profile") is None else ModelProfile.from_json_dict(doc["profile"]),
            aborted=doc.get("aborted", False),
            diagnostics=tuple(doc.get("diagnostics", ())),
        )


class TrainerBackend(Protocol):
    def start_run(self, dataset_path: str, hyperparams: Hyperparams) -> str: ...

    def fetch_epochs(self, run_id: str, from_epoch: int) -> list[dict]: ...


class HttpTrainerBackend:
    """Speaks the trainer wire protocol over HTTP."""

    def __init__(self, spec: BackendSpec):
        self.spec = spec

    def start_run(self, dataset_path: str, hyperparams: Hyperparams) -> str:
        payload = {"dataset_path": str(dataset_path), "hyperparams": hyperparams.to_wire()}
        wire.validate("train-start-request", payload)
        data = request_with_retries(self.spec, "POST", "/v1/train/start", payload)
        wire.validate("train-start-response", data)
        return data["run_id"]

    def fetch_epochs(self, run_id: str, from_epoch: int) -> list[dict]:
        data = request_with_retries(
            self.spec, "GET", f"/v1/train/{run_id}/epochs?from={from_epoch}"
        )
        wire.validate("epoch-records", data)
        return data

    def describe(self) -> dict:
        data = request_with_retries(self.spec, "GET", "/v1/model/describe")
        wire.validate("describe-response", data)
        return data

    def infer(self, image_b64: str) -> dict:
        data = request_with_retries(self.spec, "POST", "/v1/infer", {"image_b64": image_b64})
        wire.validate("infer-response", data)
        return data


class ScriptedTrainer:
    """Offline trainer double.

    Either replays explicit ``scripted_records`` (wire-format dicts) or
    synthesizes a deterministic declining-loss curve from the seed. Useful
    for tests and for exercising the workflow without a real trainer.
    """

    def __init__(self, scripted_records: Optional[Sequence[dict]] = None, seed: int = 0,
                 describe_payload: Optional[dict] = None):
        self.scripted_records = list(scripted_records) if scripted_records is not None else None
        self.seed = seed
        self.describe_payload = describe_payload or {
            "layers": 168, "params": 11_100_000, "flops": 28.4e9, "weight_bytes": 21_500_000
        }
        self._runs: dict[str, list[dict]] = {}
        self._counter = 0

    def start_run(self, dataset_path: str, hyperparams: Hyperparams) -> str:
        self._counter += 1
        run_id = f"scripted-{self._counter}"
        if self.scripted_records is not None:
            records = self.scripted_records
        else:
            rng = random.Random(self.seed)
            records = []
            for e in range(1, hyperparams.num_epochs + 1):
                progress = e / hyperparams.num_epochs
                loss = 1.2 * (1.0 - 0.6 * progress) + rng.uniform(0, 0.01)
                ap = min(1.0, 0.4 + 0.4 * progress + rng.uniform(0, 0.01))
                records.append(
                    {
                        "epoch": e,
                        "box_loss": round(loss, 6),
                        "cls_loss": round(loss * 0.9, 6),
                        "dfl_loss": round(loss * 1.1, 6),
                        "val_box_loss": round(loss * 1.05, 6),
                        "val_cls_loss": round(loss * 0.95, 6),
                        "val_dfl_loss": round(loss * 1.15, 6),
                        "ap": round(ap, 6),
                        "recall": round(min(1.0, ap * 0.95), 6),
                        "ap50": round(min(1.0, ap * 1.02), 6),
                        "ap50_95": round(ap * 0.8, 6),
                        "train_loss_sum": round(loss * 3.0, 6),
                    }
                )
        self._runs[run_id] = list(records)
        return run_id

    def fetch_epochs(self, run_id: str, from_epoch: int) -> list[dict]:
        records = self._runs[run_id]
        return [r for r in records if r.get("epoch", 0) >= from_epoch or "epoch" not in r]

    def describe(self) -> dict:
        return dict(self.describe_payload)


def run_distillation(
    dataset_path: str,
    hyperparams: Hyperparams,
    trainer: TrainerBackend,
    runs_dir: Optional[Path] = None,
    poll_interval: float = 0.05,
    max_idle_polls: int = 100,
) -> RunRecord:
    """Drive one training run and ingest its epoch records.

    Contract violations (schema faults, epoch gaps, non-finite losses,
    out-of-range metrics, a stalled trainer) mark the run failed with
    diagnostics instead of raising; the partial record is still returned
    and persisted.
    """
    run_id = trainer.start_run(str(dataset_path), hyperparams)
    epochs: list[EpochRecord] = []
    diagnostics: list[str] = []
    idle = 0
    while len(epochs) < hyperparams.num_epochs and not diagnostics:
        batch = trainer.fetch_epochs(run_id, from_epoch=len(epochs) + 1)
        try:
            wire.validate("epoch-records", batch)
        except ProtocolError as e:
            diagnostics.append(str(e))
            break
        if not batch:
            idle += 1
            if idle >= max_idle_polls:
                diagnostics.append(
                    f"trainer stalled after epoch {len(epochs)} ({idle} empty polls)"
                )
                break
            time.sleep(poll_interval)
            continue
        idle = 0
        for doc in batch:
            record = EpochRecord.from_wire(doc)
            issues = record.problems(expected_epoch=len(epochs) + 1)
            if issues:
                diagnostics.extend(issues)
                break
            epochs.append(record)
            if len(epochs) == hyperparams.num_epochs:
                break

    aborted = bool(diagnostics)
    run = RunRecord(
        run_id=run_id,
        hyperparams=hyperparams,
        epochs=tuple(epochs),
        checkpoint=None if aborted else f"{run_id}/weights/best",
        aborted=aborted,
        diagnostics=tuple(diagnostics),
    )
    if runs_dir is not None:
        persist_run(run, runs_dir)
    return run


def persist_run(run: RunRecord, runs_dir: Path) -> Path:
    runs_dir = Path(runs_dir)
    runs_dir.mkdir(parents=True, exist_ok=True)
    path = runs_dir / f"{run.run_id}.json"
    path.write_text(run.to_json())
    return path


def load_runs(runs_dir: Path) -> list[RunRecord]:
    return [RunRecord.from_json(p.read_text()) for p in sorted(Path(runs_dir).glob("*.json"))]


# -- comparison and selection ----------------------------------------------------

COMPARISON_COLUMNS = (
    "Model", "Epoch", "Size", "AP", "Recall", "AP@0.50", "AP@0.50:0.95",
    "BoxLoss_val", "ClsLoss_val", "DflLoss_val",
)


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[dict, ...]

    def render(self) -> str:
        cells = [list(COMPARISON_COLUMNS)]
        for row in self.rows:
            cells.append([str(row[c]) for c in COMPARISON_COLUMNS])
        widths = [max(len(r[i]) for r in cells) for i in range(len(COMPARISON_COLUMNS))]
        lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip() for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def to_csv(self) -> str:
        import csv
        import io

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(COMPARISON_COLUMNS)
        for row in self.rows:
            writer.writerow([row[c] for c in COMPARISON_COLUMNS])
        return buf.getvalue()


def _final_or_error(run: RunRecord) -> EpochRecord:
    if run.final is None:
        raise ConfigError(f"run {run.run_id!r} has no epoch records")
    return run.final


def compare_runs(runs: Sequence[RunRecord]) -> ComparisonTable:
    """Tabulate final-epoch metrics, best AP first (ties by run id).

    Values are copied verbatim from the records; nothing is recomputed.
    """
    if not runs:
        raise ConfigError("compare_runs needs at least one run")
    rows = []
    for run in runs:
        final = _final_or_error(run)
        rows.append(
            {
                "run_id": run.run_id,
                "Model": run.hyperparams.model_variant,
                "Epoch": run.hyperparams.num_epochs,
                "Size": run.hyperparams.image_size,
                "AP": final.ap,
                "Recall": final.recall,
                "AP@0.50": final.ap50,
                "AP@0.50:0.95": final.ap50_95,
                "BoxLoss_val": final.val_box_loss,
                "ClsLoss_val": final.val_cls_loss,
                "DflLoss_val": final.val_dfl_loss,
            }
        )
    rows.sort(key=lambda r: (-r["AP"], r["run_id"]))
    return ComparisonTable(tuple(rows))


CRITERIA = ("max-ap", "max-ap50", "max-recall", "balanced")


def _minmax(values: Sequence[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)  # all tied: treat every run as equally good
    return [(v - lo) / (hi - lo) for v in values]


def select_best(runs: Sequence[RunRecord], criterion: str = "max-ap") -> str:
    """Pick a run id by criterion; deterministic tie-break by run id.

    ``balanced`` scores ap_norm * fps_norm / flops_norm with each factor
    min-max normalized across runs (it needs profiles attached); a zero
    normalized flops denominator scores +inf unless the numerator is 0.
    """
    if not runs:
        raise ConfigError("select_best needs at least one run")
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")
    if criterion in ("max-ap", "max-ap50", "max-recall"):
        attr = {"max-ap": "ap", "max-ap50": "ap50", "max-recall": "recall"}[criterion]
        scored = [(getattr(_final_or_error(r), attr), r.run_id) for r in runs]
    else:
        for r in runs:
            if r.profile is None or r.profile.fps is None or r.profile.flops is None:
                raise ConfigError(f"run {r.run_id!r} has no profile; balanced selection needs fps/flops")
        aps = _minmax([_final_or_error(r).ap for r in runs])
        fps = _minmax([r.profile.fps for r in runs])
        flops = _minmax([r.profile.flops for r in runs])
        scored = []
        for r, a, f, g in zip(runs, aps, fps, flops):
            numerator = a * f
            if g == 0.0:
                score = math.inf if numerator > 0 else 0.0
            else:
                score = numerator / g
            scored.append((score, r.run_id))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return scored[0][1]


def attach_profile(run: RunRecord, profile: ModelProfile) -> RunRecord:
    return replace(run, profile=profile)
