"""Segmentation and measure metrics with count-and-sum accumulation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import CLASS_NAMES

CSV_COLUMNS = ("horizon_min", "iou_cloud", "iou_sky", "iou_sun", "iou_tracker", "accuracy", "nmae_pct")


def _check_labels(labels: np.ndarray, classes: int | None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label array")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or (classes is not None and labels.max() >= classes):
        raise ValueError("label outside the class range")
    return labels


def iou(pred: np.ndarray, gt: np.ndarray, k: int, classes: int | None = None) -> float:
    """Intersection over union of class ``k``; 1.0 when neither mask contains it."""
    pred, gt = _check_labels(pred, classes), _check_labels(gt, classes)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    p, g = pred == k, gt == k
    union = np.count_nonzero(p | g)
    return 1.0 if union == 0 else np.count_nonzero(p & g) / union


def pixel_accuracy(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _check_labels(pred, None), _check_labels(gt, None)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    return float(np.mean(pred == gt))


def nmae(preds: Sequence[float], gts: Sequence[float]) -> float:
    """``100 * sum|p - g| / sum g`` (percent)."""
    preds, gts = np.asarray(preds, dtype=np.float64), np.asarray(gts, dtype=np.float64)
    if preds.size == 0 or preds.shape != gts.shape:
        raise ValueError("nmae needs equal-length, non-empty inputs")
    total = gts.sum()
    if total <= 0:
        raise ValueError("nmae is undefined for a non-positive ground-truth mean")
    return float(100.0 * np.abs(preds - gts).sum() / total)


@dataclass
class HorizonMetrics:
    horizon_min: int
    iou: tuple[float, ...]
    accuracy: float
    nmae_pct: float


@dataclass
class MetricsReport:
    rows: list[HorizonMetrics]
    sample_count: int
    class_names: tuple[str, ...] = CLASS_NAMES

    def cloud_iou(self) -> list[float]:
        idx = self.class_names.index("cloud")
        return [row.iou[idx] for row in self.rows]

    def iou_of(self, name: str) -> list[float]:
        idx = self.class_names.index(name)
        return [row.iou[idx] for row in self.rows]

    def to_csv(self) -> str:
        names = self.class_names
        if set(CSV_COLUMNS[1:5]) <= {f"iou_{n}" for n in names}:
            order = [names.index(n) for n in ("cloud", "sky", "sun", "tracker")]
            header = CSV_COLUMNS
        else:
            order = list(range(len(names)))
            header = ("horizon_min", *(f"iou_{n}" for n in names), "accuracy", "nmae_pct")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in self.rows:
            writer.writerow([row.horizon_min, *(f"{row.iou[i]:.6f}" for i in order),
                             f"{row.accuracy:.6f}", f"{row.nmae_pct:.6f}"])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


@dataclass
class _Counts:
    inter: np.ndarray
    union: np.ndarray
    correct: int = 0
    pixels: int = 0
    abs_err: float = 0.0
    gt_sum: float = 0.0


@dataclass
class MetricsAccumulator:
    """Sums intersections, unions, matches and absolute errors per horizon.

    Accumulation is order-independent up to float summation of the measure
    errors, so partial accumulators over disjoint data can be merged.
    """

    classes: int
    horizons: int = 1
    step_minutes: int = 10
    counts: list[_Counts] = field(default_factory=list)
    samples: int = 0

    def __post_init__(self):
        if not self.counts:
            self.counts = [_Counts(np.zeros(self.classes, np.int64), np.zeros(self.classes, np.int64))
                           for _ in range(self.horizons)]

    def update(self, horizon: int, pred_labels, gt_labels, r_pred=None, r_gt=None) -> None:
        pred = _check_labels(pred_labels, self.classes)
        gt = _check_labels(gt_labels, self.classes)
        if pred.shape != gt.shape:
            raise ValueError("prediction and ground truth shapes differ")
        c = self.counts[horizon]
        for k in range(self.classes):
            p, g = pred == k, gt == k
            c.inter[k] += np.count_nonzero(p & g)
            c.union[k] += np.count_nonzero(p | g)
        c.correct += int(np.count_nonzero(pred == gt))
        c.pixels += pred.size
        if r_pred is not None:
            r_pred, r_gt = np.asarray(r_pred, np.float64), np.asarray(r_gt, np.float64)
            c.abs_err += float(np.abs(r_pred - r_gt).sum())
            c.gt_sum += float(r_gt.sum())
        if horizon == 0:
            self.samples += pred.shape[0] if pred.ndim == 3 else 1

    def merge(self, other: "MetricsAccumulator") -> "MetricsAccumulator":
        out = MetricsAccumulator(self.classes, self.horizons, self.step_minutes)
        for dst, a, b in zip(out.counts, self.counts, other.counts):
            dst.inter, dst.union = a.inter + b.inter, a.union + b.union
            dst.correct, dst.pixels = a.correct + b.correct, a.pixels + b.pixels
            dst.abs_err, dst.gt_sum = a.abs_err + b.abs_err, a.gt_sum + b.gt_sum
        out.samples = self.samples + other.samples
        return out

    def report(self, first_horizon_min: int | None = None) -> MetricsReport:
        if self.samples == 0:
            raise ValueError("no samples accumulated")
        start = self.step_minutes if first_horizon_min is None else first_horizon_min
        rows = []
        for h, c in enumerate(self.counts):
            ious = tuple(1.0 if u == 0 else i / u for i, u in zip(c.inter.tolist(), c.union.tolist()))
            acc = c.correct / c.pixels
            if c.gt_sum > 0:
                err = 100.0 * c.abs_err / c.gt_sum
            elif c.abs_err == 0:
                err = 0.0
            else:
                raise ValueError("nmae is undefined for a non-positive ground-truth mean")
            rows.append(HorizonMetrics(start + h * self.step_minutes, ious, acc, err))
        names = CLASS_NAMES if self.classes == len(CLASS_NAMES) else tuple(f"class{k}" for k in range(self.classes))
        return MetricsReport(rows, self.samples, names)
