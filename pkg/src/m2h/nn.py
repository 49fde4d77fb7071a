"""Parameter containers and the small set of layers the model is built from."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.asarray(data, dtype=ad.get_default_dtype()), requires_grad=True, name=name)


class Module:
    """Base class; parameters and sub-modules are discovered from instance attributes."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{k}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{k}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise ConfigError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_(self) -> "Module":
        """Set every parameter to zero (used by identity tests)."""
        for p in self.parameters():
            p.data[...] = 0
        return self


def _normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` of shape ``(in, out)``."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: Optional[float] = None):
        bound = math.sqrt(6.0 / (d_in + d_out))
        if std is None:
            w = rng.uniform(-bound, bound, size=(d_in, d_out))
        else:
            w = _normal(rng, (d_in, d_out), std)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 pad: Optional[int] = None, groups: int = 1, bias: bool = True):
        if c_in % groups or c_out % groups:
            raise ConfigError(f"channels ({c_in}->{c_out}) not divisible by groups={groups}")
        fan_in = (c_in // groups) * k * k
        self.weight = Parameter(_normal(rng, (c_out, c_in // groups, k, k), math.sqrt(2.0 / fan_in)))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad, groups=self.groups)

    def set_identity(self) -> "Conv2d":
        """Centre-tap identity kernel (requires ``c_in == c_out``, odd ``k``)."""
        w = np.zeros_like(self.weight.data)
        c_out, c_in_g, k, _ = w.shape
        for c in range(c_out):
            w[c, c % c_in_g if self.groups > 1 else c, k // 2, k // 2] = 1.0
        self.weight.data = w
        if self.bias is not None:
            self.bias.data[...] = 0
        return self


class ConvTranspose2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng: np.random.Generator,
                 pad: int = 0, bias: bool = True):
        fan_in = c_in * (k // stride) ** 2 if k >= stride else c_in
        self.weight = Parameter(_normal(rng, (c_in, c_out, k, k), math.sqrt(1.0 / fan_in)))
        self.bias = Parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.weight, self.bias, eps=self.eps)


class SeparableConv2d(Module):
    """Depth-wise ``k x k`` followed by point-wise ``1 x 1`` (the small-variant refinement)."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        self.depthwise = Conv2d(c_in, c_in, k, rng, groups=c_in, bias=False)
        self.pointwise = Conv2d(c_in, c_out, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.pointwise(self.depthwise(x))

    def set_identity(self) -> "SeparableConv2d":
        self.depthwise.set_identity()
        self.pointwise.set_identity()
        return self
