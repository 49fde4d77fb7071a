"""Attention cost benchmark: windowed cross-task attention versus global cross-task attention."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .config import ModelConfig
from .wmca import FlopCount, wmca_flop_count

CSV_COLUMNS = ("mode", "size", "p", "windows", "attention_macs", "total_macs", "wall_ms")


@dataclass
class BenchRow:
    mode: str
    size: int
    p: int
    windows: int
    flops: FlopCount

    def as_list(self) -> list:
        f = self.flops
        return [self.mode, self.size, self.p, self.windows, f.attention, f.total, f"{f.wall_ms:.3f}"]


def bench_config(channels: int = 32, heads: int = 2, window: int = 7) -> ModelConfig:
    return ModelConfig(channels=channels, wmca_heads=heads, window=window, emb_dim=channels, encoder_heads=heads)


def run_bench(mode: str, sizes: Iterable[int], window: int = 7, channels: int = 32, heads: int = 2,
              batch: int = 1, seed: int = 0) -> list[BenchRow]:
    """One instrumented WMCA forward per feature-map size ``H' = W'``.

    ``mode="wmca"`` uses ``p = window``; ``mode="global"`` sets ``p = H'`` so a
    single window spans the map, i.e. every token attends to all ``4 H'^2`` tokens.
    """
    if mode not in ("wmca", "global"):
        raise ValueError(f"mode must be 'wmca' or 'global', got {mode!r}")
    cfg = bench_config(channels, heads, window)
    rows = []
    for size in sizes:
        p = window if mode == "wmca" else size
        fc = wmca_flop_count(cfg, size, size, batch=batch, seed=seed, window=p)
        rows.append(BenchRow(mode, size, p, fc.windows, fc))
    return rows


def write_bench(path: Optional[str | Path], rows: list[BenchRow]) -> str:
    lines = [",".join(CSV_COLUMNS)] + [",".join(str(v) for v in r.as_list()) for r in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def read_bench(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
