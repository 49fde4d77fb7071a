"""Global gated feature merging, dual-stream fusion and task heads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import DimensionError
from .nn import Conv2d, Linear, Module, Parameter


class GGFM(Module):
    """Squeeze-and-excitation gate with residual: ``F + g * F`` where ``g = sigmoid(W2 relu(W1 GAP(F)) + b)``."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(channels, hidden, rng, bias=False)
        self.fc2 = Linear(hidden, channels, rng, bias=False)
        self.bias = Parameter(np.zeros(channels))
        self.last_gate: Optional[np.ndarray] = None

    def gate(self, f: Tensor) -> Tensor:
        b, c = f.shape[:2]
        z = ad.mean(f, axis=(2, 3))
        return ad.sigmoid(self.fc2(ad.relu(self.fc1(z))) + self.bias)

    def forward(self, f: Tensor, gate_override: Optional[np.ndarray] = None) -> Tensor:
        """``gate_override`` bypasses the MLP with a fixed ``(B, C)`` (or broadcastable) gate."""
        b, c = f.shape[:2]
        if gate_override is not None:
            g = Tensor(np.broadcast_to(np.asarray(gate_override, dtype=f.dtype), (b, c)).copy())
        else:
            g = self.gate(f)
        self.last_gate = g.data
        return f + g.reshape(b, c, 1, 1) * f


def ggfm_fuse_unique(f_global: Tensor, unique: Tensor) -> Tensor:
    if f_global.shape != unique.shape:
        raise DimensionError(f"cannot fuse {f_global.shape} with unique features {unique.shape}")
    return f_global + unique


class StreamFuse(Module):
    """Concatenate local and global streams on channels, project ``2C -> C`` with a 1x1 conv."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv = Conv2d(2 * channels, channels, 1, rng)

    def forward(self, local: Tensor, global_: Tensor) -> Tensor:
        if local.shape != global_.shape:
            raise DimensionError(f"stream shapes differ: {local.shape} vs {global_.shape}")
        return self.conv(ad.concat([local, global_], axis=1))

    def set_selector(self, which: str) -> "StreamFuse":
        """Weights ``[I | 0]`` (``which='local'``) or ``[0 | I]`` (``'global'``), zero bias."""
        c = self.conv.weight.shape[0]
        w = np.zeros_like(self.conv.weight.data)
        offset = 0 if which == "local" else c
        w[np.arange(c), offset + np.arange(c), 0, 0] = 1.0
        self.conv.weight.data = w
        self.conv.bias.data[...] = 0
        return self


OUT_CHANNELS = {"edges": 1, "normals": 3, "depth": 1}


def _softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))


class Head(Module):
    """3x3 conv + GELU at 1/4 scale, bilinear x4, then 1x1 conv to the task's channels.

    With ``stem_channels > 0`` the upsampled features are concatenated with
    full-resolution image features and passed through one more 3x3 conv + GELU
    before the final projection.
    """

    def __init__(self, task: str, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.channels
        half = c // 2
        self.task = task
        self.max_depth = cfg.max_depth
        out = cfg.num_classes if task == "semantics" else OUT_CHANNELS[task]
        self.reduce = Conv2d(c, half, 3, rng)
        self.refine = Conv2d(half + cfg.head_stem, half, 3, rng) if cfg.head_stem else None
        self.out = Conv2d(half, out, 1, rng)
        self.out.weight.data *= 0.1
        if task == "depth":
            self.out.bias.data[:] = _softplus_inverse(math.atanh(0.5) * cfg.max_depth)
        elif task == "normals":
            self.out.bias.data[:] = (0.0, 0.0, 1.0)
        elif task == "edges":
            self.out.bias.data[:] = -2.0

    def forward(self, f: Tensor, size: tuple[int, int], stem: Optional[Tensor] = None) -> Tensor:
        x = ad.gelu(self.reduce(f))
        x = ad.resize_bilinear(x, size)
        if self.refine is not None:
            if stem is None:
                raise DimensionError("head built with an image stem but none was given")
            x = ad.gelu(self.refine(ad.concat([x, stem], axis=1)))
        return self.activate(self.out(x))

    def activate(self, raw: Tensor) -> Tensor:
        if self.task == "depth":
            # smooth map onto (0, max_depth]; ~identity for shallow depths
            return ad.tanh(ad.softplus(raw) * (1.0 / self.max_depth)) * self.max_depth
        if self.task == "normals":
            return ad.l2_normalize(raw, axis=1)
        return raw


@dataclass
class Predictions:
    seg: Tensor  # B x classes x H x W logits
    depth: Tensor  # B x 1 x H x W metres
    normals: Tensor  # B x 3 x H x W unit vectors
    edges: Tensor  # B x 1 x H x W logits

    def numpy(self) -> dict[str, np.ndarray]:
        return {"seg": self.seg.data, "depth": self.depth.data, "normals": self.normals.data,
                "edges": self.edges.data}
