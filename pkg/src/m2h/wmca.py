"""Windowed multi-task cross-attention.

The four task maps are cut into non-overlapping ``p x p`` windows; inside each
window the tokens of all tasks are layer-normalised, concatenated into one
``4 p^2`` sequence, passed through multi-head attention and a feed-forward
network (both residual), then split back per task. Windows never exchange
information with each other.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .attention import FeedForward, MultiHeadAttention
from .autodiff import Tensor
from .config import TASKS, ModelConfig
from .errors import DimensionError
from .nn import LayerNorm, Module
from .reassembly import TaskBundle


@dataclass
class WindowedTokens:
    tokens: Tensor  # (B*M) x p^2 x C, windows ordered batch-major then row-major
    windows: int  # M, windows per image
    pad: tuple[int, int]  # (bottom, right) zero padding
    grid: tuple[int, int]  # windows along H and W
    size: tuple[int, int]  # original H', W'
    p: int


def window_counts(h: int, w: int, p: int) -> tuple[int, int]:
    return -(-h // p), -(-w // p)


def window_partition(x: Tensor, p: int) -> WindowedTokens:
    """``B x C x H x W`` -> ``(B*M) x p^2 x C``, zero-padding bottom/right to multiples of ``p``."""
    if p < 1:
        raise DimensionError("window size must be >= 1")
    b, c, h, w = x.shape
    nh, nw = window_counts(h, w, p)
    ph, pw = nh * p - h, nw * p - w
    if ph or pw:
        x = ad.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)))
    t = x.reshape(b, c, nh, p, nw, p).transpose(0, 2, 4, 3, 5, 1).reshape(b * nh * nw, p * p, c)
    return WindowedTokens(t, nh * nw, (ph, pw), (nh, nw), (h, w), p)


def window_unpartition(win: WindowedTokens, p: Optional[int] = None, h: Optional[int] = None,
                       w: Optional[int] = None) -> Tensor:
    """Inverse of :func:`window_partition`; padded rows/cols are dropped."""
    p = win.p if p is None else p
    h, w = (win.size[0] if h is None else h), (win.size[1] if w is None else w)
    nh, nw = window_counts(h, w, p)
    bm, length, c = win.tokens.shape
    if length != p * p or (nh, nw) != win.grid or bm % (nh * nw):
        raise DimensionError(f"window geometry mismatch: tokens {win.tokens.shape}, p={p}, size {h}x{w}")
    b = bm // (nh * nw)
    x = win.tokens.reshape(b, nh, nw, p, p, c).transpose(0, 5, 1, 3, 2, 4).reshape(b, c, nh * p, nw * p)
    if nh * p != h or nw * p != w:
        x = x[:, :, :h, :w]
    return x


def padding_key_bias(b: int, h: int, w: int, p: int, tasks: int, dtype) -> np.ndarray:
    """``(B*M) x (tasks*p^2)`` additive bias: 0 for real pixels, -1e9 for padding."""
    nh, nw = window_counts(h, w, p)
    valid = np.zeros((nh * p, nw * p), dtype=bool)
    valid[:h, :w] = True
    per_window = valid.reshape(nh, p, nw, p).transpose(0, 2, 1, 3).reshape(nh * nw, p * p)
    bias = np.where(per_window, 0.0, -1e9).astype(dtype)
    return np.tile(np.tile(bias, (1, tasks)), (b, 1))


class WMCALayer(Module):
    """One windowed cross-task layer with its own per-task LN, attention and FFN weights."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c = cfg.channels
        self.p = cfg.window
        self.mask_padding = cfg.wmca_mask_padding
        self.norms = {t: LayerNorm(c, cfg.ln_eps) for t in TASKS}
        self.attn = MultiHeadAttention(c, cfg.wmca_heads, rng, qkv_bias=False, out_proj=cfg.wmca_out_proj)
        self.ffn = FeedForward(c, cfg.ffn_expansion * c, rng)

    def mix(self, z_in: Tensor, key_bias: Optional[np.ndarray] = None, keep_weights: bool = False) -> Tensor:
        z_attn = z_in + self.attn(z_in, key_bias=key_bias, keep_weights=keep_weights)
        return z_attn + self.ffn(z_attn)

    def forward(self, bundle: TaskBundle, keep_weights: bool = False) -> TaskBundle:
        b, c, h, w = bundle.shape
        p = self.p
        wins = [window_partition(x, p) for x in bundle]
        z_in = ad.concat([self.norms[t](wt.tokens) for t, wt in zip(TASKS, wins)], axis=1)
        key_bias = None
        if self.mask_padding and any(wins[0].pad):
            key_bias = padding_key_bias(b, h, w, p, len(TASKS), z_in.dtype)
        z = self.mix(z_in, key_bias, keep_weights)
        parts = ad.split(z, len(TASKS), axis=1)
        outs = [window_unpartition(WindowedTokens(part, wt.windows, wt.pad, wt.grid, wt.size, p))
                for part, wt in zip(parts, wins)]
        return TaskBundle(*outs)


class WMCA(Module):
    """Stack of ``cfg.wmca_layers`` independent :class:`WMCALayer` s."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.layers = [WMCALayer(cfg, rng) for _ in range(cfg.wmca_layers)]

    def forward(self, bundle: TaskBundle, keep_weights: bool = False) -> TaskBundle:
        for layer in self.layers:
            bundle = layer(bundle, keep_weights=keep_weights)
        return bundle

    @property
    def window(self) -> int:
        return self.layers[0].p

    def set_window(self, p: int) -> None:
        for layer in self.layers:
            layer.p = p


def wmca_forward(bundle: TaskBundle, module: WMCA) -> TaskBundle:
    return module(bundle)


def global_cross_task_attention(bundle: TaskBundle, module: WMCA) -> TaskBundle:
    """Unwindowed reference: every token of every task attends to all tokens of all tasks.

    Uses the parameters of ``module`` but none of the window machinery.
    """
    b, c, h, w = bundle.shape
    maps = list(bundle)
    for layer in module.layers:
        seqs = [layer.norms[t](x.reshape(b, c, h * w).transpose(0, 2, 1)) for t, x in zip(TASKS, maps)]
        z = layer.mix(ad.concat(seqs, axis=1))
        maps = [part.transpose(0, 2, 1).reshape(b, c, h, w) for part in ad.split(z, len(TASKS), axis=1)]
    return TaskBundle(*maps)


@dataclass
class FlopCount:
    attention: int  # multiply-adds in QK^T and AV
    projection: int
    ffn: int
    windows: int
    wall_ms: float

    @property
    def total(self) -> int:
        return self.attention + self.projection + self.ffn


def count_wmca_flops(module: WMCA, batch: int, channels: int, h: int, w: int, dtype=np.float32,
                     reference: bool = False) -> FlopCount:
    """Run one forward pass on zeros and record every executed multiply-add by category."""
    x = Tensor(np.zeros((batch, channels, h, w), dtype=dtype))
    bundle = TaskBundle(x, x, x, x)
    start = time.perf_counter()
    with ad.no_grad(), ad.count_macs() as counter:
        if reference:
            global_cross_task_attention(bundle, module)
        else:
            module(bundle)
    wall = (time.perf_counter() - start) * 1e3
    nh, nw = window_counts(h, w, module.window)
    return FlopCount(counter.get("attention"), counter.get("projection"), counter.get("ffn"),
                     nh * nw, wall)


def wmca_flop_count(cfg: ModelConfig, h: int, w: int, batch: int = 1, seed: int = 0,
                    window: Optional[int] = None) -> FlopCount:
    """Instrumented multiply-add count of a WMCA stack built from ``cfg``.

    ``window`` overrides ``cfg.window``; ``window >= max(h, w)`` gives global attention.
    """
    with ad.default_dtype(np.float32):
        module = WMCA(cfg, np.random.default_rng(seed))
    if window is not None:
        module.set_window(window)
    return count_wmca_flops(module, batch, cfg.channels, h, w)
