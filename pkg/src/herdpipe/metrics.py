"""Detection metrics: precision/recall/F1, all-point-interpolated AP, mAP
over an IoU-threshold sweep, confusion matrix, and confidence-sweep curves.

Conventions, fixed here and relied on by every consumer:

* precision = tp/(tp+fp) and recall = tp/(tp+fn) are both defined as 1.0
  on an empty denominator: a detector with nothing to predict (or nothing
  to find) has made no mistakes,
* AP is the literal all-point sum ``sum_n (R_n - R_{n-1}) * P_n`` over the
  pooled, confidence-sorted prefix curve with R_0 = 0 -- no 11-point or
  101-point interpolation and no precision envelope,
* classes without any ground truth are excluded from class means (their
  per-class AP is reported as None),
* confidence-sweep curves and the scalar recall are computed at the lowest
  IoU threshold of the sweep,
* the confusion matrix uses class-agnostic box matching followed by class
  comparison, with an explicit background row/column for unmatched
  detections and ground truths.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from .core import AnnotatedImage, ClassSet, Detection, GroundTruthBox, match_detections
from .errors import ConfigError, DatasetError

DEFAULT_IOU_SWEEP = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def precision(tp: int, fp: int) -> float:
    """tp/(tp+fp); 1.0 when there are no predictions at all."""
    if tp < 0 or fp < 0:
        raise ConfigError("counts must be non-negative")
    if tp + fp == 0:
        return 1.0
    return tp / (tp + fp)


def recall(tp: int, fn: int) -> float:
    """tp/(tp+fn); 1.0 when there is nothing to find."""
    if tp < 0 or fn < 0:
        raise ConfigError("counts must be non-negative")
    if tp + fn == 0:
        return 1.0
    return tp / (tp + fn)


def f1(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0.0 when both are 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
        raise ConfigError(f"precision/recall outside [0, 1]: {p}, {r}")
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def sweep_mean(threshold_aps: Sequence[float]) -> float:
    """Mean AP over an IoU-threshold sweep: sum of the per-threshold APs
    divided by the sweep length k."""
    if not threshold_aps:
        raise ConfigError("sweep must contain at least one threshold")
    return sum(threshold_aps) / len(threshold_aps)


@dataclass(frozen=True)
class EvalConfig:
    """IoU sweep and curve-sampling definition for an evaluation run."""

    class_set: ClassSet
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_SWEEP
    confidence_steps: int = 101

    def __post_init__(self):
        thrs = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", thrs)
        if not thrs:
            raise ConfigError("need at least one IoU threshold")
        for t in thrs:
            if not (0.0 < t <= 1.0):
                raise ConfigError(f"IoU threshold outside (0, 1]: {t}")
        if any(b <= a for a, b in zip(thrs, thrs[1:])):
            raise ConfigError(f"IoU thresholds must be strictly increasing: {thrs}")
        if self.confidence_steps < 2:
            raise ConfigError("confidence_steps must be >= 2")


@dataclass(frozen=True)
class PRPoint:
    """One prefix of the confidence-sorted detection list."""

    confidence: float
    precision: float
    recall: float


GtsInput = Union[Mapping[str, Sequence[GroundTruthBox]], Sequence[AnnotatedImage]]


def gts_by_image(ground_truths: GtsInput) -> dict[str, tuple[GroundTruthBox, ...]]:
    """Normalize either input shape to an ordered {image_id: boxes} mapping."""
    if isinstance(ground_truths, Mapping):
        return {img: tuple(boxes) for img, boxes in ground_truths.items()}
    out: dict[str, tuple[GroundTruthBox, ...]] = {}
    for image in ground_truths:
        if image.image_id in out:
            raise DatasetError(f"duplicate image id {image.image_id!r}")
        out[image.image_id] = tuple(image.ground_truths)
    return out


def _pooled_flags(
    predictions: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[GroundTruthBox]],
    class_id: int,
    iou_thr: float,
) -> list[tuple[float, bool]]:
    """(confidence, is_tp) per class detection, in global greedy order.

    Matching state is per image, so per-image greedy matching in
    confidence order is equivalent to one global greedy pass; ties across
    images break by pool position (image order, then detection index).
    """
    pool: list[tuple[float, int, bool]] = []  # (confidence, pool index, is_tp)
    pool_idx = 0
    for img in gts:
        dets = predictions.get(img, ())
        res = match_detections(dets, gts[img], iou_thr, class_id=class_id)
        for k, matched in zip(res.detection_indices, res.detection_matches):
            pool.append((dets[k].confidence, pool_idx, matched is not None))
            pool_idx += 1
    pool.sort(key=lambda t: (-t[0], t[1]))
    return [(conf, is_tp) for conf, _, is_tp in pool]


def pr_curve(
    predictions: Mapping[str, Sequence[Detection]],
    ground_truths: GtsInput,
    class_id: int,
    iou_thr: float,
) -> list[PRPoint]:
    """Prefix precision/recall curve for one class over the whole dataset.

    Detections are pooled across images and sorted by descending
    confidence; each point reports cumulative precision/recall after
    admitting one more detection. Recall is non-decreasing by construction.
    """
    gts = gts_by_image(ground_truths)
    for img in predictions:
        if img not in gts:
            raise DatasetError(f"predictions reference unknown image id {img!r}")
    total_gts = sum(1 for boxes in gts.values() for g in boxes if g.class_id == class_id)
    flags = _pooled_flags(predictions, gts, class_id, iou_thr)
    points: list[PRPoint] = []
    tp = fp = 0
    for conf, is_tp in flags:
        if is_tp:
            tp += 1
        else:
            fp += 1
        points.append(PRPoint(conf, precision(tp, fp), recall(tp, total_gts - tp)))
    return points


def ap_from_curve(points: Sequence[PRPoint]) -> float:
    """All-point AP: sum of (R_n - R_{n-1}) * P_n with R_0 = 0."""
    prev = 0.0
    ap = 0.0
    for pt in points:
        if pt.recall < prev - 1e-12:
            raise ConfigError(f"recall decreases along the curve: {pt.recall} < {prev}")
        ap += (pt.recall - prev) * pt.precision
        prev = pt.recall
    return ap


@dataclass(frozen=True)
class CurvePoint:
    """Metrics at one confidence cutoff."""

    cutoff: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    """Everything the evaluation produces, ready for serialization.

    ``ap`` is the class-level mean over the sweep (the headline number);
    ``ap50`` the class mean at IoU 0.50; ``ap_sweep`` the per-threshold
    mean averaged over the sweep (the mAP equation with its k
    denominator). ``ap`` and ``ap_sweep`` agree arithmetically whenever
    every class has ground truths at every threshold; both are exposed so
    the aggregation is explicit rather than guessed.
    """

    class_names: tuple[str, ...]
    iou_thresholds: tuple[float, ...]
    per_class_ap: dict[str, tuple[Optional[float], ...]]
    mean_ap_per_threshold: tuple[float, ...]
    ap: float
    recall: float
    ap50: Optional[float]
    ap_sweep: float
    confidence_curves: dict[str, tuple[CurvePoint, ...]]
    pr_curves: dict[str, tuple[PRPoint, ...]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        thr_keys = [f"{t:.2f}" for t in self.iou_thresholds]
        return {
            "class_names": list(self.class_names),
            "iou_thresholds": list(self.iou_thresholds),
            "per_class_ap": {
                name: {k: ap for k, ap in zip(thr_keys, aps)}
                for name, aps in self.per_class_ap.items()
            },
            "mean_ap_per_threshold": {
                k: v for k, v in zip(thr_keys, self.mean_ap_per_threshold)
            },
            "AP": self.ap,
            "Recall": self.recall,
            "AP_valid0.50": self.ap50,
            "AP_valid0.95": self.ap_sweep,
            "confidence_curves": {
                name: [
                    {"cutoff": p.cutoff, "precision": p.precision, "recall": p.recall, "f1": p.f1}
                    for p in pts
                ]
                for name, pts in self.confidence_curves.items()
            },
            "pr_curves": {
                name: [
                    {"confidence": p.confidence, "precision": p.precision, "recall": p.recall}
                    for p in pts
                ]
                for name, pts in self.pr_curves.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def render_table(self) -> str:
        headers = ["Class", "AP", "Recall", "AP_valid0.50", "AP_valid0.95"]
        rows = [headers]
        for name in self.class_names:
            aps = self.per_class_ap[name]
            defined = [a for a in aps if a is not None]
            sweep = sum(defined) / len(defined) if defined else None
            ap50 = None
            if 0.50 in self.iou_thresholds:
                ap50 = aps[self.iou_thresholds.index(0.50)]
            rows.append([name, _fmt(sweep), "-", _fmt(ap50), _fmt(sweep)])
        rows.append(["all", _fmt(self.ap), _fmt(self.recall), _fmt(self.ap50), _fmt(self.ap_sweep)])
        widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
        lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)

    def curves_csv(self) -> dict[str, str]:
        """One CSV per class (plus 'all') with cutoff/precision/recall/f1."""
        out = {}
        for name, pts in self.confidence_curves.items():
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(["cutoff", "precision", "recall", "f1"])
            for p in pts:
                writer.writerow([repr(p.cutoff), repr(p.precision), repr(p.recall), repr(p.f1)])
            out[name] = buf.getvalue()
        return out


def _fmt(v: Optional[float]) -> str:
    return "n/a" if v is None else f"{v:.5f}"


def _class_counts_at_cutoff(
    predictions: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[GroundTruthBox]],
    class_id: int,
    iou_thr: float,
    cutoff: float,
) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for img in gts:
        dets = [d for d in predictions.get(img, ()) if d.confidence >= cutoff]
        res = match_detections(dets, gts[img], iou_thr, class_id=class_id)
        tp += res.num_tp
        fp += res.num_fp
        fn += res.num_fn
    return tp, fp, fn


def evaluate(
    ground_truths: GtsInput,
    predictions: Mapping[str, Sequence[Detection]],
    cfg: EvalConfig,
) -> EvalReport:
    """Evaluate predictions against ground truths over the configured sweep."""
    gts = gts_by_image(ground_truths)
    for img, dets in predictions.items():
        if img not in gts:
            raise DatasetError(f"predictions reference unknown image id {img!r}")
        for d in dets:
            if d.class_id >= len(cfg.class_set):
                raise DatasetError(
                    f"prediction class id {d.class_id} outside class set of {len(cfg.class_set)}"
                )
    for boxes in gts.values():
        for g in boxes:
            if g.class_id >= len(cfg.class_set):
                raise DatasetError(
                    f"ground-truth class id {g.class_id} outside class set of {len(cfg.class_set)}"
                )

    names = tuple(cfg.class_set)
    class_has_gts = {
        c: any(g.class_id == c for boxes in gts.values() for g in boxes)
        for c in cfg.class_set.ids()
    }

    per_class: dict[str, list[Optional[float]]] = {n: [] for n in names}
    prc: dict[int, dict[float, list[PRPoint]]] = {}
    for c in cfg.class_set.ids():
        prc[c] = {}
        for thr in cfg.iou_thresholds:
            pts = pr_curve(predictions, gts, c, thr)
            prc[c][thr] = pts
            per_class[names[c]].append(ap_from_curve(pts) if class_has_gts[c] else None)

    mean_per_thr: list[float] = []
    for i, _ in enumerate(cfg.iou_thresholds):
        aps = [per_class[n][i] for n in names if per_class[n][i] is not None]
        mean_per_thr.append(sum(aps) / len(aps) if aps else 0.0)

    class_sweeps = []
    for n in names:
        defined = [a for a in per_class[n] if a is not None]
        if defined:
            class_sweeps.append(sum(defined) / len(defined))
    overall_ap = sum(class_sweeps) / len(class_sweeps) if class_sweeps else 0.0
    map_sweep = sweep_mean(mean_per_thr)
    ap50 = None
    if 0.50 in cfg.iou_thresholds:
        ap50 = mean_per_thr[cfg.iou_thresholds.index(0.50)]

    base_thr = cfg.iou_thresholds[0]
    class_recalls = []
    for c in cfg.class_set.ids():
        if not class_has_gts[c]:
            continue
        tp, _, fn = _class_counts_at_cutoff(predictions, gts, c, base_thr, 0.0)
        class_recalls.append(recall(tp, fn))
    overall_recall = sum(class_recalls) / len(class_recalls) if class_recalls else 1.0

    cutoffs = [i / (cfg.confidence_steps - 1) for i in range(cfg.confidence_steps)]
    curves: dict[str, tuple[CurvePoint, ...]] = {}
    for c in cfg.class_set.ids():
        pts = []
        for cut in cutoffs:
            tp, fp, fn = _class_counts_at_cutoff(predictions, gts, c, base_thr, cut)
            p = precision(tp, fp)
            r = recall(tp, fn)
            pts.append(CurvePoint(cut, p, r, f1(p, r)))
        curves[names[c]] = tuple(pts)
    all_pts = []
    gt_classes = [names[c] for c in cfg.class_set.ids() if class_has_gts[c]]
    for i, cut in enumerate(cutoffs):
        sel = [curves[n][i] for n in gt_classes] or [curves[n][i] for n in names]
        p = sum(pt.precision for pt in sel) / len(sel)
        r = sum(pt.recall for pt in sel) / len(sel)
        all_pts.append(CurvePoint(cut, p, r, f1(p, r)))
    curves["all"] = tuple(all_pts)

    return EvalReport(
        class_names=names,
        iou_thresholds=cfg.iou_thresholds,
        per_class_ap={n: tuple(v) for n, v in per_class.items()},
        mean_ap_per_threshold=tuple(mean_per_thr),
        ap=overall_ap,
        recall=overall_recall,
        ap50=ap50,
        ap_sweep=map_sweep,
        confidence_curves=curves,
        pr_curves={names[c]: tuple(prc[c][base_thr]) for c in cfg.class_set.ids()},
    )


@dataclass(frozen=True)
class ConfusionMatrix:
    """(n+1) x (n+1) confusion counts; the final row/column is background.

    ``matrix[pred][true]`` counts detections of class ``pred`` matched to
    ground truths of class ``true``; the background column collects
    unmatched detections, the background row unmatched ground truths.
    """

    class_names: tuple[str, ...]
    matrix: tuple[tuple[float, ...], ...]
    normalized: bool = False

    BACKGROUND = "background"

    def __post_init__(self):
        n = len(self.class_names) + 1
        if len(self.matrix) != n or any(len(row) != n for row in self.matrix):
            raise ConfigError(f"matrix must be {n}x{n}")
        if any(v < 0 for row in self.matrix for v in row):
            raise ConfigError("matrix entries must be non-negative")

    def normalize(self) -> "ConfusionMatrix":
        """Column-normalized view: each column with support sums to 1."""
        if self.normalized:
            return self
        n = len(self.class_names) + 1
        sums = [sum(self.matrix[r][c] for r in range(n)) for c in range(n)]
        norm = tuple(
            tuple(self.matrix[r][c] / sums[c] if sums[c] > 0 else 0.0 for c in range(n))
            for r in range(n)
        )
        return ConfusionMatrix(self.class_names, norm, normalized=True)

    def diagonal(self) -> tuple[float, ...]:
        return tuple(self.matrix[i][i] for i in range(len(self.class_names)))

    def render(self) -> str:
        labels = list(self.class_names) + [self.BACKGROUND]
        fmt = (lambda v: f"{v:.2f}") if self.normalized else (lambda v: f"{v:g}")
        header = ["Predicted \\ True"] + labels
        rows = [header]
        for r, name in enumerate(labels):
            rows.append([name] + [fmt(self.matrix[r][c]) for c in range(len(labels))])
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.rjust(widths[i]) if i else cell.ljust(widths[i]) for i, cell in enumerate(row))
            for row in rows
        )


def confusion_matrix(
    ground_truths: GtsInput,
    predictions: Mapping[str, Sequence[Detection]],
    class_set: ClassSet,
    iou_thr: float = 0.5,
    conf_thr: float = 0.25,
) -> ConfusionMatrix:
    """Raw-count confusion matrix over the dataset.

    Detections below ``conf_thr`` are discarded; the rest are matched
    class-agnostically (greedy by confidence at ``iou_thr``) and the
    matched pair's classes indexed into the matrix.
    """
    if not (0.0 <= conf_thr <= 1.0):
        raise ConfigError(f"confidence threshold outside [0, 1]: {conf_thr}")
    gts = gts_by_image(ground_truths)
    for img in predictions:
        if img not in gts:
            raise DatasetError(f"predictions reference unknown image id {img!r}")
    n = len(class_set)
    counts = [[0.0] * (n + 1) for _ in range(n + 1)]
    for img in gts:
        dets = [d for d in predictions.get(img, ()) if d.confidence >= conf_thr]
        boxes = gts[img]
        res = match_detections(dets, boxes, iou_thr, class_id=None)
        for k, matched in enumerate(res.detection_matches):
            pred_cls = dets[res.detection_indices[k]].class_id
            if matched is not None:
                true_cls = boxes[res.gt_indices[matched]].class_id
                counts[pred_cls][true_cls] += 1
            else:
                counts[pred_cls][n] += 1
        for j, matched in enumerate(res.gt_matches):
            if matched is None:
                counts[n][boxes[res.gt_indices[j]].class_id] += 1
    return ConfusionMatrix(tuple(class_set), tuple(tuple(row) for row in counts))
