"""End-to-end multi-task model: encoder -> MSTR -> MSF -> {WMCA || GGFM + U_t} -> fuse -> heads."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TASKS, ModelConfig
from .encoder import Encoder
from .ggfm import GGFM, Head, Predictions, StreamFuse, ggfm_fuse_unique
from .nn import Conv2d, Module
from .reassembly import MSF, MSTR, TaskBundle, UniqueProjection
from .wmca import WMCA


class M2H(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c = cfg.channels
        self.encoder = Encoder(cfg, rng)
        self.mstr = MSTR(cfg, rng)
        self.msf = {t: MSF(cfg, rng) for t in TASKS}
        self.unique = UniqueProjection(cfg, rng)
        self.wmca = WMCA(cfg, rng) if cfg.use_wmca else None
        self.ggfm = {t: GGFM(c, cfg.se_reduction, rng) for t in TASKS} if cfg.use_ggfm else None
        self.fuse = {t: StreamFuse(c, rng) for t in TASKS}
        self.stem = Conv2d(3, cfg.head_stem, 3, rng) if cfg.head_stem else None
        self.heads = {t: Head(t, cfg, rng) for t in TASKS}

    def features(self, image: Tensor) -> dict[str, Tensor]:
        """Per-task fused decoder features at 1/4 resolution."""
        taps, final = self.encoder(image)
        pyramid = self.mstr(taps)
        prelim = TaskBundle.from_tasks({t: self.msf[t](pyramid) for t in TASKS})
        local = self.wmca(prelim).as_dict() if self.wmca is not None else prelim.as_dict()
        if self.ggfm is not None:
            unique = self.unique(final)
            global_ = {t: ggfm_fuse_unique(self.ggfm[t](f), unique[t]) for t, f in prelim.as_dict().items()}
        else:
            global_ = prelim.as_dict()
        return {t: self.fuse[t](local[t], global_[t]) for t in TASKS}

    def forward(self, image) -> Predictions:
        image = image if isinstance(image, Tensor) else Tensor(image)
        self.cfg.check_image(*image.shape[2:])
        size = tuple(image.shape[2:])
        fused = self.features(image)
        stem = ad.gelu(self.stem(image)) if self.stem is not None else None
        out = {t: self.heads[t](fused[t], size, stem) for t in TASKS}
        return Predictions(seg=out["semantics"], depth=out["depth"], normals=out["normals"], edges=out["edges"])


def m2h_forward(model: M2H, image, cfg: Optional[ModelConfig] = None) -> Predictions:
    return model(image)
