"""AdamW with decoupled weight decay and the polynomial learning-rate schedule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import Parameter


def poly_lr(lr0: float, step: int, total: int, power: float = 0.9) -> float:
    """``lr0 * (1 - step/total) ** power``, clamped at 0 past the end."""
    frac = min(max(step / total, 0.0), 1.0)
    return lr0 * (1.0 - frac) ** power


class AdamW:
    def __init__(self, params: Sequence[Parameter], lr: float = 5e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
