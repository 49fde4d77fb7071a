"""Two-phase training loop (task losses with DWA, then fine-tuning with consistency losses)."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .config import RunConfig, dump_config
from .data import SceneDataset
from .errors import M2HError
from .losses import DwaState, LossBreakdown, total_loss
from .model import M2H
from .optim import AdamW, poly_lr

LOG_COLUMNS = (
    "step", "phase", "lr", "alpha", "beta",
    "loss_seg", "loss_depth", "loss_normals", "loss_edges", "loss_xdn", "loss_xes",
    "w_seg", "w_depth", "w_normals", "w_edges", "w_consistency", "total",
)


class TrainingDiverged(M2HError, FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at step {step}{': ' + detail if detail else ''}")
        self.step = step


def log_row(step: int, phase: str, lr: float, br: LossBreakdown) -> dict:
    w = br.weights
    return {"step": step, "phase": phase, "lr": lr, "alpha": br.alpha, "beta": br.beta,
            "loss_seg": br.seg, "loss_depth": br.depth, "loss_normals": br.normals, "loss_edges": br.edges,
            "loss_xdn": br.xdn, "loss_xes": br.xes, "w_seg": w[0], "w_depth": w[1], "w_normals": w[2],
            "w_edges": w[3], "w_consistency": br.w_consistency, "total": br.total}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class BatchSampler:
    """Shuffled epochs over ``n`` items; the whole set every step when ``batch >= n``."""

    def __init__(self, n: int, batch: int, seed: int):
        self.n, self.batch = n, batch
        self.rng = np.random.default_rng(seed)
        self.queue: list[int] = []

    def next(self) -> list[int]:
        if self.batch >= self.n:
            return list(range(self.n))
        if len(self.queue) < self.batch:
            self.queue.extend(self.rng.permutation(self.n).tolist())
        out, self.queue = self.queue[: self.batch], self.queue[self.batch :]
        return out


@dataclass
class TrainResult:
    model: M2H
    dwa: DwaState
    log: list[dict] = field(default_factory=list)
    wall_s: float = 0.0


def train(cfg: RunConfig, dataset: SceneDataset, out_dir: Optional[str | Path] = None,
          model: Optional[M2H] = None, progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run ``cfg.steps`` optimisation steps and return the trained model and its log.

    With ``out_dir`` set, writes ``config.txt``, ``train_log.csv`` (flushed every
    row) and checkpoints every ``cfg.checkpoint_every`` steps plus ``final.ckpt``.
    Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    start = time.perf_counter()
    with ad.default_dtype(np.float32):
        model = model if model is not None else M2H(cfg.model, seed=cfg.seed)
    opt = AdamW(model.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    dwa = DwaState(4, cfg.loss.dwa_temperature, cfg.loss.dwa_ema)
    sampler = BatchSampler(len(dataset), cfg.batch_size, cfg.seed)
    run_text = dump_config(cfg)

    out = Path(out_dir) if out_dir is not None else None
    log_file = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(run_text)
        log_file = open(out / "train_log.csv", "w", newline="")
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)

    rows: list[dict] = []
    try:
        for step in range(cfg.steps):
            phase = cfg.phase(step)
            lr = poly_lr(cfg.lr, step, cfg.steps, cfg.poly_power)
            batch = dataset.batch(sampler.next())
            opt.zero_grad()
            preds = model(Tensor(batch["image"]))
            loss, br = total_loss(preds, batch, cfg.loss, dwa, phase)
            if not np.isfinite(br.total):
                raise TrainingDiverged(step)
            loss.backward()
            opt.step(lr)
            dwa.update(br.task_losses())
            row = log_row(step, phase, lr, br)
            rows.append(row)
            if writer is not None and step % cfg.log_every == 0:
                writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
                log_file.flush()
            if progress is not None:
                progress(row)
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"step_{step + 1:06d}.ckpt", model, dwa, step + 1, run_text)
        if out is not None:
            save_checkpoint(out / "final.ckpt", model, dwa, cfg.steps, run_text)
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(model, dwa, rows, time.perf_counter() - start)


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        for k, v in r.items():
            if k == "phase":
                continue
            r[k] = int(v) if k == "step" else float(v)
    return rows
