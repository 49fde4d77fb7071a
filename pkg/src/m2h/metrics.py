"""Evaluation metrics: mIoU, depth RMSE/AbsRel/delta1, normal angular error, boundary odsF."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, DimensionError

IGNORE_INDEX = 255
ODS_THRESHOLDS = np.round(np.arange(1, 100) / 100.0, 2)


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int,
                     ignore: int = IGNORE_INDEX) -> np.ndarray:
    """``num_classes x num_classes`` counts, rows = ground truth, columns = prediction."""
    pred, gt = np.asarray(pred).ravel(), np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    keep = (gt != ignore) & (gt >= 0) & (gt < num_classes) & (pred >= 0) & (pred < num_classes)
    idx = gt[keep].astype(np.int64) * num_classes + pred[keep].astype(np.int64)
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-class IoU (NaN for classes absent from both GT and prediction) and their mean."""
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(0) + cm.sum(1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)
    present = union > 0
    return (float(iou[present].mean()) if present.any() else 1.0), iou


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore: int = IGNORE_INDEX) -> tuple[float, np.ndarray]:
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes, ignore))


def depth_metrics(p: np.ndarray, y: np.ndarray, mask: Optional[np.ndarray] = None) -> tuple[float, float, float]:
    """``(rmse, absrel, delta1)`` over ``mask`` (default: ``y > 0``)."""
    p = np.asarray(p, dtype=np.float64).reshape(np.shape(y))
    y = np.asarray(y, dtype=np.float64)
    mask = (y > 0) if mask is None else (np.asarray(mask, bool).reshape(y.shape) & (y > 0))
    if not mask.any():
        raise DataError("depth metrics: empty mask")
    pv, yv = p[mask], y[mask]
    rmse = float(np.sqrt(np.mean((pv - yv) ** 2)))
    absrel = float(np.mean(np.abs(pv - yv) / yv))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(pv / yv, yv / pv)
    delta1 = float(np.mean(ratio < 1.25))
    return rmse, absrel, delta1


def angular_errors(n_pred: np.ndarray, n_gt: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-pixel angles in degrees; vectors on axis 1 (``B x 3 x H x W``) or axis 0 (``3 x H x W``)."""
    n_pred, n_gt = np.asarray(n_pred, np.float64), np.asarray(n_gt, np.float64)
    if n_pred.shape != n_gt.shape:
        raise DimensionError(f"normals {n_pred.shape} vs {n_gt.shape}")
    axis = 1 if n_pred.ndim == 4 else 0
    # atan2(|a x b|, a . b) equals arccos of the clamped cosine for unit vectors but stays exact near 0 deg
    dot = np.sum(n_pred * n_gt, axis=axis)
    cross = np.linalg.norm(np.cross(n_pred, n_gt, axis=axis), axis=axis)
    valid = np.linalg.norm(n_gt, axis=axis) > 0.5
    if mask is not None:
        valid &= np.asarray(mask, bool).reshape(valid.shape)
    return np.degrees(np.arctan2(cross[valid], dot[valid]))


def mean_angular_error(n_pred: np.ndarray, n_gt: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    err = angular_errors(n_pred, n_gt, mask)
    if err.size == 0:
        raise DataError("angular error: no valid pixels")
    return float(err.mean())


@dataclass
class OdsAccumulator:
    """Dataset-wide TP/FP/FN at each threshold; a pixel is predicted positive when ``prob >= tau``."""

    thresholds: np.ndarray = field(default_factory=lambda: ODS_THRESHOLDS.copy())
    tp: np.ndarray = None
    fp: np.ndarray = None
    fn: np.ndarray = None

    def __post_init__(self) -> None:
        n = len(self.thresholds)
        self.tp = np.zeros(n, np.int64)
        self.fp = np.zeros(n, np.int64)
        self.fn = np.zeros(n, np.int64)

    def add(self, probs: np.ndarray, gt: np.ndarray) -> None:
        probs = np.asarray(probs, np.float64).ravel()
        gt = np.asarray(gt).ravel() > 0.5
        if probs.shape != gt.shape:
            raise DimensionError(f"edge probabilities {probs.shape} vs ground truth {gt.shape}")
        # counts of positives / negatives with prob >= tau via sorted search
        pos = np.sort(probs[gt])
        neg = np.sort(probs[~gt])
        pos_above = len(pos) - np.searchsorted(pos, self.thresholds, side="left")
        neg_above = len(neg) - np.searchsorted(neg, self.thresholds, side="left")
        self.tp += pos_above
        self.fp += neg_above
        self.fn += len(pos) - pos_above

    def f_scores(self) -> np.ndarray:
        if (self.tp + self.fn)[0] == 0:
            raise DataError("odsF: no positive ground-truth pixels in the dataset")
        tp = self.tp.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            precision = np.where(self.tp + self.fp > 0, tp / (self.tp + self.fp), 0.0)
            recall = tp / (self.tp + self.fn)
            f = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
        return f

    def value(self) -> float:
        return float(self.f_scores().max())

    def best_threshold(self) -> float:
        return float(self.thresholds[int(np.argmax(self.f_scores()))])


def odsf(edge_probs, edge_gt) -> float:
    """Optimal-dataset-scale F-measure over a list (or stacked array) of samples."""
    acc = OdsAccumulator()
    if isinstance(edge_probs, np.ndarray) and isinstance(edge_gt, np.ndarray):
        acc.add(edge_probs, edge_gt)
    else:
        for p, g in zip(edge_probs, edge_gt, strict=True):
            acc.add(p, g)
    return acc.value()


@dataclass
class MetricReport:
    miou: float
    iou: np.ndarray
    rmse: float
    absrel: float
    delta1: float
    merr: float
    odsf: float
    samples: int

    SUMMARY_FIELDS = ("samples", "miou", "rmse", "absrel", "delta1", "merr", "odsf")

    def summary(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.SUMMARY_FIELDS}


class MetricAccumulator:
    """Streams per-batch predictions and builds one :class:`MetricReport` for the dataset.

    Depth and angular errors are pooled over all valid pixels of the dataset.
    """

    def __init__(self, num_classes: int, ignore: int = IGNORE_INDEX):
        self.num_classes = num_classes
        self.ignore = ignore
        self.cm = np.zeros((num_classes, num_classes), np.int64)
        self.sq_err = self.rel_err = self.delta_hits = 0.0
        self.depth_count = 0
        self.angle_sum = 0.0
        self.angle_count = 0
        self.ods = OdsAccumulator()
        self.samples = 0

    def add(self, seg_labels, depth, normals, edge_probs, gt: dict) -> None:
        """Predictions as numpy arrays (labels ``B x H x W``); ``gt`` has labels/depth/normals/edges."""
        self.cm += confusion_matrix(seg_labels, gt["labels"], self.num_classes, self.ignore)
        y = np.asarray(gt["depth"], np.float64)
        p = np.asarray(depth, np.float64).reshape(y.shape)
        m = y > 0
        pv, yv = p[m], y[m]
        self.sq_err += float(np.sum((pv - yv) ** 2))
        self.rel_err += float(np.sum(np.abs(pv - yv) / yv))
        with np.errstate(divide="ignore", invalid="ignore"):
            self.delta_hits += float(np.sum(np.maximum(pv / yv, yv / pv) < 1.25))
        self.depth_count += int(m.sum())
        ang = angular_errors(normals, gt["normals"])
        self.angle_sum += float(ang.sum())
        self.angle_count += ang.size
        edges_gt = np.asarray(gt["edges"])
        self.ods.add(np.asarray(edge_probs).reshape(edges_gt.shape), edges_gt)
        self.samples += len(y)

    def report(self) -> MetricReport:
        if self.depth_count == 0 or self.angle_count == 0:
            raise DataError("no valid depth/normal pixels accumulated")
        m, iou = iou_from_confusion(self.cm)
        n = self.depth_count
        return MetricReport(m, iou, float(np.sqrt(self.sq_err / n)), self.rel_err / n, self.delta_hits / n,
                            self.angle_sum / self.angle_count, self.ods.value(), self.samples)
