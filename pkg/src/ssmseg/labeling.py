"""Label transfer, multi-annotator aggregation, and annotation accuracy.

Label transfer is a pure index copy: because all shapes realized from one
model share the mean shape's vertex indexing, the mean's per-vertex labels
apply verbatim to every realization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, LabelError, UndefinedMetricError
from .mesh import LabelMap

AGGREGATION_POLICIES = ("union", "majority")

# Accuracy here is per-class recall: the fraction of ground-truth vertices
# of a class that the aggregated annotation also assigns to that class.
ACCURACY_DEFINITION = "intersection(A, GT) / |GT|, per class"


@dataclass(frozen=True)
class AnnotationSet:
    """Labelings of one shape by several annotators."""

    shape_id: str
    annotator_ids: tuple[str, ...]
    label_maps: tuple[LabelMap, ...]

    def __post_init__(self):
        if len(self.annotator_ids) != len(self.label_maps):
            raise LabelError("annotator ids and label maps differ in count")
        if not self.label_maps:
            raise LabelError("annotation set has no annotators")
        first = self.label_maps[0]
        for lm in self.label_maps[1:]:
            if len(lm) != len(first):
                raise LabelError("annotators disagree on vertex count")
            if dict(lm.class_table) != dict(first.class_table):
                raise LabelError("annotators disagree on class table")


def transfer_labels(mean_labels: LabelMap, shape) -> LabelMap:
    """Copy the mean shape's labels onto a generated shape by vertex index.

    ``shape`` may be a mesh, point cloud, flat 3N shape vector, or (N, 3)
    array; only its vertex count matters. The returned map is the identical
    label sequence, so per-class counts match the mean's exactly.
    """
    pts = getattr(shape, "vertices", None)
    if pts is None:
        pts = getattr(shape, "points", shape)
    pts = np.asarray(pts)
    n = pts.size // 3 if pts.ndim == 1 else pts.shape[0]
    if n != len(mean_labels):
        raise DimensionMismatch(
            f"mean labels cover {len(mean_labels)} vertices, shape has {n}"
        )
    return LabelMap(mean_labels.labels.copy(), mean_labels.class_table)


def aggregate_annotations(annotations: AnnotationSet, policy: str = "union") -> LabelMap:
    """Merge several annotators' labelings of one shape into a single map.

    union: a vertex is labeled if any annotator labeled it; when annotators
    chose different non-background classes, the most frequent one wins and
    remaining ties go to the lowest class id.

    majority: a vertex is labeled c only when a strict majority of all
    annotators chose c; everything else becomes background.
    """
    if policy not in AGGREGATION_POLICIES:
        raise LabelError(f"unknown aggregation policy {policy!r}")
    votes = np.stack([m.labels for m in annotations.label_maps])  # (A, n)
    n_annotators, n = votes.shape
    out = np.zeros(n, dtype=np.int64)
    class_ids = sorted(dict(annotations.label_maps[0].class_table))
    counts = np.stack([(votes == c).sum(axis=0) for c in class_ids])  # (C, n)

    if policy == "union":
        any_label = counts.sum(axis=0) > 0
        # argmax on the (class-ordered) count matrix picks the majority
        # class; first-max ties resolve to the lowest class id.
        winner = np.argmax(counts, axis=0)
        out[any_label] = np.array(class_ids)[winner[any_label]]
    else:
        strict = counts > n_annotators / 2.0
        has_majority = strict.any(axis=0)
        winner = np.argmax(strict, axis=0)
        out[has_majority] = np.array(class_ids)[winner[has_majority]]
    return LabelMap(out, annotations.label_maps[0].class_table)


def _as_labels(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x), dtype=np.int64)


def annotation_accuracy(annotated, ground_truth, class_id: int) -> float:
    """Fraction of ground-truth vertices of ``class_id`` recovered by hand.

    Raises UndefinedMetricError when the ground truth contains no vertex of
    the class (the metric is undefined, never silently 0).
    """
    a = _as_labels(annotated)
    gt = _as_labels(ground_truth)
    if a.shape != gt.shape:
        raise DimensionMismatch("annotated and ground-truth maps differ in length")
    gt_set = gt == class_id
    n_gt = int(gt_set.sum())
    if n_gt == 0:
        raise UndefinedMetricError(
            f"ground truth has no vertex of class {class_id}; accuracy undefined"
        )
    return float(np.sum(gt_set & (a == class_id)) / n_gt)


@dataclass(frozen=True)
class StudyRow:
    shape_id: str
    class_id: int
    accuracy: float


def run_study(annotation_sets: list[AnnotationSet],
              ground_truths: dict[str, LabelMap],
              policy: str = "union") -> list[StudyRow]:
    """Aggregate each shape's annotators and score them against ground truth.

    Returns one row per (shape, class); classes are taken from the ground
    truth's class table. Shapes whose ground truth lacks a class get no row
    for it.
    """
    rows: list[StudyRow] = []
    for aset in annotation_sets:
        if aset.shape_id not in ground_truths:
            raise LabelError(f"no ground truth for shape {aset.shape_id!r}")
        gt = ground_truths[aset.shape_id]
        merged = aggregate_annotations(aset, policy)
        for class_id in sorted(dict(gt.class_table)):
            if not np.any(gt.labels == class_id):
                continue
            rows.append(StudyRow(aset.shape_id, class_id,
                                 annotation_accuracy(merged, gt, class_id)))
    return rows


def write_study_report(rows: list[StudyRow], path: str | Path,
                       policy: str = "union") -> None:
    """CSV report: per-(shape, class) rows, per-class means, overall mean.

    The overall figure is the mean over shapes of each shape's mean class
    accuracy. A comment line pins down the metric definition so reports are
    self-describing.
    """
    by_class: dict[int, list[float]] = {}
    by_shape: dict[str, list[float]] = {}
    for r in rows:
        by_class.setdefault(r.class_id, []).append(r.accuracy)
        by_shape.setdefault(r.shape_id, []).append(r.accuracy)

    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# accuracy = {ACCURACY_DEFINITION}; aggregation = {policy}\n")
        writer = csv.writer(fh)
        writer.writerow(["shape_id", "class_id", "accuracy"])
        for r in rows:
            writer.writerow([r.shape_id, r.class_id, f"{r.accuracy:.6f}"])
        for class_id in sorted(by_class):
            writer.writerow(["mean", class_id,
                             f"{float(np.mean(by_class[class_id])):.6f}"])
        if by_shape:
            overall = float(np.mean([np.mean(v) for v in by_shape.values()]))
            writer.writerow(["overall", "", f"{overall:.6f}"])
