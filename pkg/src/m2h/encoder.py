"""Trainable ViT-style encoder producing multi-scale token sets.

Interface of a pretrained small ViT backbone (patch size, token width, tapped
intermediate layers plus the final token map), trained from scratch here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import FeedForward, MultiHeadAttention
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .nn import LayerNorm, Linear, Module, Parameter


@dataclass
class TokenSet:
    tokens: Tensor  # B x N x emb_dim
    grid: tuple[int, int]

    def __post_init__(self) -> None:
        if self.tokens.shape[1] != self.grid[0] * self.grid[1]:
            raise DimensionError(f"{self.tokens.shape[1]} tokens do not fill grid {self.grid}")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[1]

    def to_map(self) -> Tensor:
        """Pure reshape to ``B x emb_dim x gh x gw``."""
        b, _, e = self.tokens.shape
        return self.tokens.transpose(0, 2, 1).reshape(b, e, *self.grid)


class PatchEmbed(Module):
    """Non-overlapping ``d x d`` patches -> linear projection + learned positional embedding.

    The positional table is learned on the ``image_size / d`` grid and resampled
    bilinearly for other grids.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.patch
        self.patch = d
        self.proj = Linear(3 * d * d, cfg.emb_dim, rng)
        g = max(1, cfg.image_size // d)
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(1, cfg.emb_dim, g, g)))

    def forward(self, image: Tensor) -> TokenSet:
        b, c, h, w = image.shape
        d = self.patch
        if c != 3:
            raise DimensionError(f"expected 3-channel image, got {c}")
        if h % d or w % d:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {d}")
        gh, gw = h // d, w // d
        patches = image.reshape(b, 3, gh, d, gw, d).transpose(0, 2, 4, 1, 3, 5).reshape(b, gh * gw, 3 * d * d)
        tokens = self.proj(patches)
        pos = ad.resize_bilinear(self.pos, (gh, gw))
        emb = pos.shape[1]
        tokens = tokens + pos.reshape(1, emb, gh * gw).transpose(0, 2, 1)
        return TokenSet(tokens, (gh, gw))


class MEViTBlock(Module):
    """Pre-norm transformer block: ``x + MHA(LN x)`` then ``x + FFN(LN x)``."""

    def __init__(self, dim: int, heads: int, expansion: int, rng: np.random.Generator, eps: float = 1e-5):
        self.norm1 = LayerNorm(dim, eps)
        self.attn = MultiHeadAttention(dim, heads, rng, qkv_bias=True)
        self.norm2 = LayerNorm(dim, eps)
        self.ffn = FeedForward(dim, expansion * dim, rng)

    def forward(self, ts: TokenSet, keep_weights: bool = False) -> TokenSet:
        x = ts.tokens
        if x.shape[-1] != self.norm1.weight.shape[0]:
            raise DimensionError(f"token width {x.shape[-1]} != block width {self.norm1.weight.shape[0]}")
        x = x + self.attn(self.norm1(x), keep_weights=keep_weights)
        x = x + self.ffn(self.norm2(x))
        return TokenSet(x, ts.grid)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.taps = tuple(cfg.taps)
        self.embed = PatchEmbed(cfg, rng)
        self.blocks = [MEViTBlock(cfg.emb_dim, cfg.encoder_heads, cfg.ffn_expansion, rng, cfg.ln_eps)
                       for _ in range(cfg.encoder_blocks)]

    def forward(self, image: Tensor) -> tuple[list[TokenSet], TokenSet]:
        """Returns the tapped token sets (one per pyramid level) and the final tokens."""
        if not self.taps or max(self.taps) > len(self.blocks) or min(self.taps) < 1:
            raise ConfigError(f"tap indices {self.taps} out of range for {len(self.blocks)} blocks")
        ts = self.embed(image)
        outputs = []
        for block in self.blocks:
            ts = block(ts)
            outputs.append(ts)
        return [outputs[t - 1] for t in self.taps], ts


def encode_multiscale(encoder: Encoder, image: Tensor) -> tuple[list[TokenSet], TokenSet]:
    return encoder(image)
