"""Token reassembly into a spatial pyramid (MSTR) and per-task multi-scale fusion (MSF)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import NUM_SCALES, TASKS, ModelConfig
from .encoder import TokenSet
from .errors import DimensionError
from .nn import Conv2d, ConvTranspose2d, Module, SeparableConv2d


@dataclass
class TaskBundle:
    """Edge, normal, semantic and depth maps, always in that order."""

    e: Tensor
    n: Tensor
    s: Tensor
    d: Tensor

    def __post_init__(self) -> None:
        shapes = {tuple(t.shape) for t in self}
        if len(shapes) != 1:
            raise DimensionError(f"task maps differ in shape: {sorted(shapes)}")

    def __iter__(self) -> Iterator[Tensor]:
        return iter((self.e, self.n, self.s, self.d))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.e.shape)

    @classmethod
    def from_tasks(cls, maps: dict[str, Tensor]) -> "TaskBundle":
        return cls(maps["edges"], maps["normals"], maps["semantics"], maps["depth"])

    def as_dict(self) -> dict[str, Tensor]:
        return dict(zip(TASKS, self))


class MSTR(Module):
    """Shared reassembly of ``K`` token sets into maps at 1/4, 1/8, 1/16, 1/32 of the input.

    Each token set is reshaped to its patch grid (1/16), projected to ``C``
    channels by a 1x1 conv and resampled: transposed conv x4 and x2 for the two
    finest levels, identity at 1/16, stride-2 2x2 conv at 1/32.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.channels
        self.project = [Conv2d(cfg.emb_dim, c, 1, rng) for _ in range(NUM_SCALES)]
        self.up4 = ConvTranspose2d(c, c, 4, 4, rng)
        self.up2 = ConvTranspose2d(c, c, 2, 2, rng)
        self.down2 = Conv2d(c, c, 2, rng, stride=2, pad=0)

    def forward(self, taps: Sequence[TokenSet]) -> list[Tensor]:
        if len(taps) != NUM_SCALES:
            raise DimensionError(f"MSTR expects {NUM_SCALES} token sets, got {len(taps)}")
        grids = {ts.grid for ts in taps}
        if len(grids) != 1:
            raise DimensionError(f"token sets disagree on grid: {grids}")
        maps = [proj(ts.to_map()) for proj, ts in zip(self.project, taps)]
        return [self.up4(maps[0]), self.up2(maps[1]), maps[2], self.down2(maps[3])]


def _refinement(cfg: ModelConfig, rng: np.random.Generator) -> Module:
    c = cfg.channels
    return SeparableConv2d(c, c, 3, rng) if cfg.depthwise else Conv2d(c, c, 3, rng)


class MSF(Module):
    """Coarse-to-fine fusion of the pyramid into one ``C x H/4 x W/4`` map for a single task."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.refine = [_refinement(cfg, rng) for _ in range(NUM_SCALES)]
        self.activate = True

    def forward(self, pyramid: Sequence[Tensor]) -> Tensor:
        acc = pyramid[-1]
        for level in range(NUM_SCALES - 1, 0, -1):
            acc = self.refine[level](acc)
            if self.activate:
                acc = ad.gelu(acc)
            acc = ad.upsample(acc, 2) + pyramid[level - 1]
        return self.refine[0](acc)

    def set_identity(self) -> "MSF":
        for conv in self.refine:
            conv.set_identity()
        return self


class UniqueProjection(Module):
    """Final token map -> shared reassembly at 1/4 scale -> per-task 1x1 "up projection"."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.channels
        self.project = Conv2d(cfg.emb_dim, c, 1, rng)
        self.up4 = ConvTranspose2d(c, c, 4, 4, rng)
        self.task_proj = {t: Conv2d(c, c, 1, rng) for t in TASKS}

    def forward(self, final: TokenSet) -> dict[str, Tensor]:
        shared = self.up4(self.project(final.to_map()))
        return {t: self.task_proj[t](shared) for t in TASKS}


def check_pyramid(pyramid: Sequence[Tensor]) -> None:
    """Raise unless levels share B and C and each level halves the previous one."""
    if len(pyramid) != NUM_SCALES:
        raise DimensionError(f"pyramid must have {NUM_SCALES} levels")
    for fine, coarse in zip(pyramid[:-1], pyramid[1:]):
        if fine.shape[:2] != coarse.shape[:2]:
            raise DimensionError("pyramid levels disagree on batch/channels")
        if fine.shape[2] != 2 * coarse.shape[2] or fine.shape[3] != 2 * coarse.shape[3]:
            raise DimensionError(f"level {fine.shape[2:]} is not twice {coarse.shape[2:]}")
