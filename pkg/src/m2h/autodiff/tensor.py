"""Tensor value type, differentiable-function protocol and reverse-mode backward pass."""

from __future__ import annotations

import contextlib
import itertools
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from ..errors import UsageError

_DEFAULT_DTYPE: np.dtype = np.dtype(np.float32)
_GRAD_ENABLED = True
_ANOMALY = False
_COUNTERS: list["MacCounter"] = []
_TAGS: list[str] = []
_SEQ = itertools.count()


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"only float32 and float64 are supported, got {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors and parameters."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def detect_anomaly() -> Iterator[None]:
    """Raise ``FloatingPointError`` naming the op that first produces NaN/Inf."""
    global _ANOMALY
    previous = _ANOMALY
    _ANOMALY = True
    try:
        yield
    finally:
        _ANOMALY = previous


class MacCounter:
    """Accumulates multiply-add counts of matmul/conv ops executed while active."""

    def __init__(self) -> None:
        self.by_tag: dict[str, int] = {}

    @property
    def total(self) -> int:
        return sum(self.by_tag.values())

    def get(self, tag: str) -> int:
        return self.by_tag.get(tag, 0)

    def add(self, tag: str, macs: int) -> None:
        self.by_tag[tag] = self.by_tag.get(tag, 0) + int(macs)


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.remove(counter)


@contextlib.contextmanager
def mac_tag(tag: str) -> Iterator[None]:
    """Label multiply-adds recorded inside the block (innermost tag wins)."""
    _TAGS.append(tag)
    try:
        yield
    finally:
        _TAGS.pop()


def record_macs(macs: int) -> None:
    if _COUNTERS:
        tag = _TAGS[-1] if _TAGS else "other"
        for counter in _COUNTERS:
            counter.add(tag, macs)


def _as_array(data: Any, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype.kind == "f":
        return data
    if isinstance(data, (np.floating,)) and np.dtype(type(data)) in (np.float32, np.float64):
        return np.asarray(data)
    return np.asarray(data, dtype=_DEFAULT_DTYPE)


class Tensor:
    """Dense float array with an optional gradient and a link to the op that produced it."""

    __array_priority__ = 1000.0
    __slots__ = ("data", "requires_grad", "grad", "_ctx", "name")

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self) -> None:
        """Populate ``.grad`` of every reachable leaf that requires grad.

        Ops are replayed once each in reverse execution order; the graph is
        released afterwards.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that does not require grad")

        # collect reachable ops
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in nodes:
                continue
            nodes[id(t)] = t
            if t._ctx is not None:
                stack.extend(p for p in t._ctx.parents if p.requires_grad)

        order = sorted(
            (t for t in nodes.values() if t._ctx is not None),
            key=lambda t: t._ctx.seq,
            reverse=True,
        )
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in order:
            g = grads.pop(id(t), None)
            ctx = t._ctx
            t._ctx = None
            if g is None:
                continue
            parent_grads = ctx.backward(g)
            if not isinstance(parent_grads, tuple):
                parent_grads = (parent_grads,)
            for parent, pg in zip(ctx.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.dtype != parent.data.dtype:
                    pg = pg.astype(parent.data.dtype)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for key, g in grads.items():
            leaf = nodes.get(key)
            if leaf is None or leaf._ctx is not None:
                continue
            if g.shape != leaf.shape:
                g = np.broadcast_to(g, leaf.shape).copy()
            leaf.grad = g if leaf.grad is None else leaf.grad + g


class Function:
    """A differentiable op: ``forward`` on arrays, ``backward`` maps output grad to input grads."""

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> Tensor:
        tensors = _lift(inputs)
        fn = cls()
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        if _ANOMALY and not np.all(np.isfinite(out)):
            raise FloatingPointError(f"non-finite values produced by {cls.__name__} "
                                     f"(output shape {np.shape(out)})")
        result = Tensor(out)
        if _GRAD_ENABLED and any(t.requires_grad for t in tensors):
            fn.parents = tensors
            fn.seq = next(_SEQ)
            result._ctx = fn
            result.requires_grad = True
        return result


def _lift(inputs: Sequence[Any]) -> list[Tensor]:
    dtype = None
    for x in inputs:
        if isinstance(x, Tensor):
            dtype = x.dtype if dtype is None else np.promote_types(dtype, x.dtype)
    out = []
    for x in inputs:
        if isinstance(x, Tensor):
            out.append(x)
        else:
            out.append(Tensor(np.asarray(x, dtype=dtype or _DEFAULT_DTYPE)))
    return out


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
