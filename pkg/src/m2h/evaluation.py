"""Dataset evaluation and metric report files."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import SceneDataset, quantize_image, write_pfm, write_pnm
from .metrics import MetricAccumulator, MetricReport

REPORT_COLUMNS = ("row", "class", "samples", "miou", "iou", "rmse", "absrel", "delta1", "merr", "odsf")


def predict(model, images: np.ndarray) -> dict[str, np.ndarray]:
    """Forward pass without graph recording; returns labels, depth, normals and edge probabilities."""
    with ad.no_grad():
        p = model(Tensor(images.astype(model.heads["depth"].out.weight.dtype, copy=False)))
    edges = 1.0 / (1.0 + np.exp(-p.edges.data.astype(np.float64)))
    return {"labels": np.argmax(p.seg.data, axis=1), "depth": p.depth.data[:, 0],
            "normals": p.normals.data, "edges": edges[:, 0]}


def ground_truth_predictions(batch: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Harness check: predictions copied from the targets."""
    return {"labels": batch["labels"], "depth": batch["depth"][:, 0], "normals": batch["normals"],
            "edges": batch["edges"][:, 0].astype(np.float64)}


def evaluate(model, dataset: SceneDataset, num_classes: int, batch_size: int = 8,
             gt_as_prediction: bool = False, pred_dir: Optional[str | Path] = None) -> MetricReport:
    acc = MetricAccumulator(num_classes)
    for lo in range(0, len(dataset), batch_size):
        idx = list(range(lo, min(lo + batch_size, len(dataset))))
        batch = dataset.batch(idx)
        pred = ground_truth_predictions(batch) if gt_as_prediction else predict(model, batch["image"])
        gt = {"labels": batch["labels"], "depth": batch["depth"][:, 0], "normals": batch["normals"],
              "edges": batch["edges"][:, 0]}
        acc.add(pred["labels"], pred["depth"], pred["normals"], pred["edges"], gt)
        if pred_dir is not None:
            save_predictions(pred_dir, [dataset.rows[i]["id"] for i in idx], pred)
    return acc.report()


def save_predictions(root: str | Path, ids, pred: dict[str, np.ndarray]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for k, sid in enumerate(ids):
        write_pnm(root / f"{sid}_labels.pgm", np.asarray(pred["labels"][k], dtype=np.uint8))
        write_pfm(root / f"{sid}_depth.pfm", pred["depth"][k])
        write_pfm(root / f"{sid}_normals.pfm", pred["normals"][k])
        write_pnm(root / f"{sid}_edges.pgm", quantize_image(np.asarray(pred["edges"][k])))


def write_report(path: str | Path, report: MetricReport) -> None:
    """One summary row followed by one row per class."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow(["summary", "", report.samples, repr(report.miou), "", repr(report.rmse), repr(report.absrel),
                    repr(report.delta1), repr(report.merr), repr(report.odsf)])
        for c, iou in enumerate(report.iou):
            w.writerow(["class", c, "", "", "" if np.isnan(iou) else repr(float(iou)), "", "", "", "", ""])


def read_report(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
