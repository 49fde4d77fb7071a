"""Multi-head scaled dot-product attention shared by the encoder and WMCA."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Linear, Module


class MultiHeadAttention(Module):
    """Self-attention over ``(batch, length, dim)`` with separate Q/K/V projections."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, qkv_bias: bool = False,
                 out_proj: bool = True):
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(dim, dim, rng, bias=qkv_bias)
        self.k = Linear(dim, dim, rng, bias=qkv_bias)
        self.v = Linear(dim, dim, rng, bias=qkv_bias)
        self.proj = Linear(dim, dim, rng) if out_proj else None
        self.last_weights: Optional[np.ndarray] = None

    def forward(self, x: Tensor, key_bias: Optional[np.ndarray] = None, keep_weights: bool = False) -> Tensor:
        """``key_bias`` is an additive ``(batch, length)`` score offset (``-inf`` masks a key)."""
        n, length, dim = x.shape
        h, dh = self.heads, self.head_dim
        with ad.mac_tag("projection"):
            q = self.q(x).reshape(n, length, h, dh).transpose(0, 2, 1, 3)
            k = self.k(x).reshape(n, length, h, dh).transpose(0, 2, 3, 1)
            v = self.v(x).reshape(n, length, h, dh).transpose(0, 2, 1, 3)
        with ad.mac_tag("attention"):
            scores = ad.matmul(q, k) * (1.0 / math.sqrt(dh))
            if key_bias is not None:
                scores = scores + key_bias.reshape(n, 1, 1, length).astype(scores.dtype)
            weights = ad.softmax(scores, axis=-1)
            out = ad.matmul(weights, v)
        if keep_weights:
            self.last_weights = weights.data
        out = out.transpose(0, 2, 1, 3).reshape(n, length, dim)
        if self.proj is not None:
            with ad.mac_tag("projection"):
                out = self.proj(out)
        return out


class FeedForward(Module):
    """``GELU(x W1 + b1) W2 + b2``."""

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        with ad.mac_tag("ffn"):
            return self.fc2(ad.gelu(self.fc1(x)))
