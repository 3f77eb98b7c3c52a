"""Per-class segmentation scores: DSC, surface DSC, HD95 and recall.

Empty-label convention: when both ground truth and prediction are empty the
overlap scores are 1 and HD95 is undefined. A prediction on an empty ground
truth scores 0 on DSC, SDSC and recall. HD95 is undefined whenever either mask
is empty and such entries are left out of its mean.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .image import ClassId, LabelMaskSet, boundary_mask

DEFAULT_TOLERANCE = 3.0
METRICS = ("dsc", "sdsc", "recall", "hd95")


def _pair(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=bool)
    pred = np.asarray(pred, dtype=bool)
    if gt.shape != pred.shape:
        raise ValueError(f"mask shapes differ: {gt.shape} vs {pred.shape}")
    return gt, pred


def dice(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    total = int(gt.sum()) + int(pred.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(gt, pred).sum()) / total


def recall(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    n_gt = int(gt.sum())
    if n_gt == 0:
        return 1.0 if not pred.any() else 0.0
    return int(np.logical_and(gt, pred).sum()) / n_gt


def _surface_points(mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(boundary_mask(mask))
    return np.stack([rows, cols], axis=1).astype(np.float64)


def surface_distances(gt, pred) -> tuple[np.ndarray, np.ndarray]:
    """Distance from each gt surface pixel to the pred surface, and vice versa."""
    gt, pred = _pair(gt, pred)
    s_gt, s_pred = _surface_points(gt), _surface_points(pred)
    if len(s_gt) == 0 or len(s_pred) == 0:
        raise ValueError("surface distances need two non-empty masks")
    d_gt, _ = cKDTree(s_pred).query(s_gt)
    d_pred, _ = cKDTree(s_gt).query(s_pred)
    return d_gt, d_pred


def surface_dice(gt, pred, tolerance: float = DEFAULT_TOLERANCE) -> float:
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    gt, pred = _pair(gt, pred)
    if not gt.any() and not pred.any():
        return 1.0
    if not gt.any() or not pred.any():
        return 0.0
    d_gt, d_pred = surface_distances(gt, pred)
    hits = int((d_gt <= tolerance).sum()) + int((d_pred <= tolerance).sum())
    return hits / (len(d_gt) + len(d_pred))


def hd95(gt, pred) -> float | None:
    """95th percentile of the pooled two-way surface distances; None if a mask is empty."""
    gt, pred = _pair(gt, pred)
    if not gt.any() or not pred.any():
        return None
    d_gt, d_pred = surface_distances(gt, pred)
    return _percentile(np.concatenate([d_gt, d_pred]), 95)


def _percentile(values: np.ndarray, q: int) -> float:
    """Linear-interpolation percentile for integer ``q``.

    The rank ``q * (n - 1) / 100`` is split with integer arithmetic, so the
    only rounding is in the final interpolation step.
    """
    v = np.sort(values)
    lo, k = divmod(q * (len(v) - 1), 100)
    if k == 0:
        return float(v[lo])
    return float(v[lo] + (v[lo + 1] - v[lo]) * (k / 100))


@dataclass(frozen=True)
class ClassScore:
    dsc: float
    sdsc: float
    recall: float
    hd95: float | None
    empty_pair: bool

    def value(self, metric: str) -> float | None:
        return getattr(self, metric)


def score_class(gt, pred, tolerance: float = DEFAULT_TOLERANCE) -> ClassScore:
    gt, pred = _pair(gt, pred)
    empty = not gt.any() and not pred.any()
    return ClassScore(dice(gt, pred), surface_dice(gt, pred, tolerance), recall(gt, pred), hd95(gt, pred), empty)


@dataclass(frozen=True)
class ScoreRow:
    image_id: str
    cls: ClassId
    score: ClassScore


@dataclass(frozen=True)
class Aggregate:
    mean: float
    std: float
    n: int
    n_hd95_defined: int


@dataclass
class MetricsReport:
    rows: list[ScoreRow]
    summary: dict[tuple[ClassId, str], Aggregate]

    def class_rows(self, cls: ClassId) -> list[ScoreRow]:
        return [r for r in self.rows if r.cls is cls]


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(rows: Sequence[ScoreRow]) -> dict[tuple[ClassId, str], Aggregate]:
    summary = {}
    for cls in ClassId:
        cls_rows = [r for r in rows if r.cls is cls]
        n_def = sum(r.score.hd95 is not None for r in cls_rows)
        for metric in METRICS:
            vals = [r.score.value(metric) for r in cls_rows if r.score.value(metric) is not None]
            mean, std = _mean_std(vals)
            summary[(cls, metric)] = Aggregate(mean, std, len(vals), n_def)
    return summary


def evaluate(gt: Mapping[str, LabelMaskSet], pred: Mapping[str, LabelMaskSet],
             tolerance: float = DEFAULT_TOLERANCE, classes: Iterable[ClassId] = tuple(ClassId)) -> MetricsReport:
    """Score every image and class; rows follow the order of ``gt``."""
    if set(gt) != set(pred):
        missing = sorted(set(gt) ^ set(pred))
        raise KeyError(f"ground truth and prediction ids differ: {missing[:5]}")
    classes = tuple(classes)
    rows = []
    for image_id, gt_masks in gt.items():
        pred_masks = pred[image_id]
        if gt_masks.shape != pred_masks.shape:
            raise ValueError(f"{image_id}: gt {gt_masks.shape} vs pred {pred_masks.shape}")
        for cls in classes:
            rows.append(ScoreRow(image_id, cls, score_class(gt_masks[cls], pred_masks[cls], tolerance)))
    return MetricsReport(rows, aggregate(rows))


def evaluate_dataset(gt_manifest, pred_manifest, tolerance: float = DEFAULT_TOLERANCE) -> MetricsReport:
    from .manifest import load_label_sets

    return evaluate(load_label_sets(gt_manifest), load_label_sets(pred_manifest), tolerance)


# --- CSV ------------------------------------------------------------------

SCORE_COLUMNS = ("image_id", "class", "dsc", "sdsc", "recall", "hd95", "empty_pair")
SUMMARY_COLUMNS = ("class", "metric", "mean", "std", "n", "n_hd95_defined")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_scores_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for r in report.rows:
            s = r.score
            writer.writerow([r.image_id, r.cls.label, _fmt(s.dsc), _fmt(s.sdsc), _fmt(s.recall),
                             _fmt(s.hd95), _fmt(s.empty_pair)])


def write_summary_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for (cls, metric), agg in report.summary.items():
            writer.writerow([cls.label, metric, _fmt(agg.mean), _fmt(agg.std), agg.n, agg.n_hd95_defined])


def read_scores_csv(path: str | Path) -> list[ScoreRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SCORE_COLUMNS:
            raise ValueError(f"{path}: expected columns {', '.join(SCORE_COLUMNS)}")
        for rec in reader:
            hd = float(rec["hd95"]) if rec["hd95"] else None
            score = ClassScore(float(rec["dsc"]), float(rec["sdsc"]), float(rec["recall"]), hd,
                               rec["empty_pair"] == "1")
            rows.append(ScoreRow(rec["image_id"], ClassId.parse(rec["class"]), score))
    return rows
