"""Per-class IoU / per-shape mIoU computation, aggregation, and reports.

A class absent from both ground truth and prediction is skipped (excluded
from every average), never scored 0 or 1: scoring it would reward
degenerate predictions. Background is included in mIoU by default; every
report echoes that choice.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import load_manifest, load_xyzl
from .errors import (DimensionMismatch, MissingPredictionsError,
                     UndefinedMetricError)
from .mesh import BACKGROUND

_REPORT_VERSION = "eval-report/1"


def _as_labels(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x), dtype=np.int64)


def iou(ground_truth, prediction, class_id: int) -> float | None:
    """Intersection over union of one class's vertex sets.

    Returns None when the class appears in neither map (skipped class).
    """
    gt = _as_labels(ground_truth)
    pred = _as_labels(prediction)
    if gt.shape != pred.shape:
        raise DimensionMismatch("ground truth and prediction differ in length")
    in_gt = gt == class_id
    in_pred = pred == class_id
    union = int(np.sum(in_gt | in_pred))
    if union == 0:
        return None
    return float(np.sum(in_gt & in_pred) / union)


def miou_shape(ground_truth, prediction, class_ids,
               include_background: bool = True) -> float:
    """Arithmetic mean of per-class IoU over classes present in either map."""
    ids = sorted(set(int(c) for c in class_ids) | {BACKGROUND})
    if not include_background:
        ids = [c for c in ids if c != BACKGROUND]
    values = [v for c in ids if (v := iou(ground_truth, prediction, c)) is not None]
    if not values:
        raise UndefinedMetricError("no includable class present in either map")
    return float(np.mean(values))


@dataclass(frozen=True)
class ShapeEval:
    shape_id: str
    per_class: dict[int, float | None]  # None = skipped (absent everywhere)
    miou: float


@dataclass(frozen=True)
class EvalReport:
    """Per-shape rows plus dataset-level aggregates.

    ``class_means[c]`` is the mean IoU of class c over the shapes where it
    was scored; ``mean_miou`` is the mean of per-shape mIoU values. Both
    are exact arithmetic means of the stored rows.
    """

    shapes: tuple[ShapeEval, ...]
    class_means: dict[int, float | None]
    mean_miou: float
    class_ids: tuple[int, ...]
    include_background: bool


def _aggregate(rows: list[ShapeEval], class_ids, include_background: bool) -> EvalReport:
    ids = tuple(sorted(set(int(c) for c in class_ids) | {BACKGROUND}))
    class_means: dict[int, float | None] = {}
    for c in ids:
        vals = [r.per_class[c] for r in rows if r.per_class.get(c) is not None]
        class_means[c] = float(np.mean(vals)) if vals else None
    mean_miou = float(np.mean([r.miou for r in rows]))
    return EvalReport(tuple(rows), class_means, mean_miou, ids, include_background)


def evaluate_pairs(pairs, class_ids, include_background: bool = True) -> EvalReport:
    """Evaluate (shape_id, ground_truth, prediction) triples."""
    rows = []
    ids = sorted(set(int(c) for c in class_ids) | {BACKGROUND})
    for shape_id, gt, pred in pairs:
        per_class = {c: iou(gt, pred, c) for c in ids}
        rows.append(ShapeEval(shape_id, per_class,
                              miou_shape(gt, pred, ids, include_background)))
    if not rows:
        raise UndefinedMetricError("nothing to evaluate")
    return _aggregate(rows, ids, include_background)


def evaluate_dataset(dataset_dir: str | Path, predictions_dir: str | Path | None = None,
                     model=None, split: str = "test",
                     include_background: bool = True) -> EvalReport:
    """Score predictions for a dataset split against its stored labels.

    Predictions come either from ``predictions_dir`` (one ``<shape_id>.xyzl``
    per shape, as written by the predict command) or from a segmenter
    ``model`` applied on the fly. Missing prediction files abort with the
    full list of missing shape ids.
    """
    from .segmenter import predict  # local import; eval has no training deps

    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir / "manifest.json")
    records = manifest.split_records(split)
    class_ids = sorted(manifest.class_table)

    if predictions_dir is None and model is None:
        raise UndefinedMetricError("need a predictions directory or a model")

    if predictions_dir is not None:
        predictions_dir = Path(predictions_dir)
        missing = [r.shape_id for r in records
                   if not (predictions_dir / f"{r.shape_id}.xyzl").exists()]
        if missing:
            raise MissingPredictionsError(
                f"missing predictions for {len(missing)} shapes: "
                + ", ".join(missing[:10]) + ("..." if len(missing) > 10 else ""),
                missing_ids=tuple(missing),
            )

    def generate_rows():
        for rec in records:
            truth = load_xyzl(dataset_dir / rec.path, manifest.class_table,
                              rec.shape_id)
            if predictions_dir is not None:
                pred_cloud = load_xyzl(predictions_dir / f"{rec.shape_id}.xyzl",
                                       manifest.class_table, rec.shape_id)
                if pred_cloud.cloud.n_points != truth.cloud.n_points:
                    raise DimensionMismatch(
                        f"{rec.shape_id}: prediction point count differs"
                    )
                pred = pred_cloud.labels
            else:
                pred = predict(model, truth.cloud)
            yield rec.shape_id, truth.labels, pred

    return evaluate_pairs(generate_rows(), class_ids, include_background)


# ---------------------------------------------------------------------------
# Report emission

def report_to_dict(report: EvalReport) -> dict:
    return {
        "version": _REPORT_VERSION,
        "include_background": report.include_background,
        "class_ids": list(report.class_ids),
        "skipped_class_policy": "absent-everywhere classes are excluded from averages",
        "mean_miou": report.mean_miou,
        "class_mean_iou": {str(c): report.class_means[c] for c in report.class_ids},
        "shapes": [
            {"id": r.shape_id, "miou": r.miou,
             "per_class_iou": {str(c): r.per_class[c] for c in report.class_ids}}
            for r in report.shapes
        ],
    }


def save_report_json(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, allow_nan=False)
        fh.write("\n")


def save_report_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["shape_id", "miou",
                         *[f"iou_class_{c}" for c in report.class_ids]])
        for r in report.shapes:
            writer.writerow([
                r.shape_id, f"{r.miou:.6f}",
                *[("" if r.per_class[c] is None else f"{r.per_class[c]:.6f}")
                  for c in report.class_ids],
            ])


def format_report_text(report: EvalReport) -> str:
    lines = []
    bg = "included" if report.include_background else "excluded"
    lines.append(f"shapes evaluated : {len(report.shapes)}")
    lines.append(f"background in mIoU: {bg}")
    lines.append(f"mean mIoU        : {report.mean_miou:.4f}")
    for c in report.class_ids:
        v = report.class_means[c]
        shown = "skipped" if v is None else f"{v:.4f}"
        lines.append(f"  class {c:>3} mean IoU: {shown}")
    return "\n".join(lines)
