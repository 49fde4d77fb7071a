"""Task losses, cross-task consistency losses and dynamic weight averaging.

Array conventions: predictions are :class:`Tensor` s in ``B x C x H x W``;
targets are plain numpy arrays (labels ``B x H x W`` ints, depth ``B x H x W``
or ``B x 1 x H x W``, normals ``B x 3 x H x W``, edges ``B x H x W``).
Spatial derivatives use forward differences; ``dx`` steps the column index
and ``dy`` the row index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TASKS, LossConfig
from .errors import DataError, DimensionError, DomainError

IGNORE_INDEX = 255

# order used for per-task vectors (DWA weights, loss history, log columns)
LOSS_TASKS = ("semantics", "depth", "normals", "edges")


def _as_map(y, like: Tensor) -> np.ndarray:
    """Reshape a ``B x H x W`` target to the ``B x 1 x H x W`` layout of ``like``."""
    y = np.asarray(y)
    if y.ndim == like.ndim - 1:
        y = y[:, None]
    if y.shape != tuple(like.shape):
        raise DimensionError(f"target shape {y.shape} does not match prediction {like.shape}")
    return y


def _masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    count = float(mask.sum())
    if count == 0:
        raise DataError("loss mask selects no pixels")
    return ad.sum(x * mask.astype(x.dtype)) * (1.0 / count)


def forward_diff(x: Tensor, axis: int) -> Tensor:
    """``x[i+1] - x[i]`` along ``axis`` (length shrinks by one)."""
    n = x.shape[axis]
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
    return x[tuple(hi)] - x[tuple(lo)]


def replicate_diff(x: Tensor, axis: int) -> Tensor:
    """Forward difference with the last slice repeated, so the shape is unchanged."""
    d = forward_diff(x, axis)
    last = [slice(None)] * x.ndim
    last[axis] = slice(d.shape[axis] - 1, d.shape[axis])
    return ad.concat([d, d[tuple(last)]], axis=axis)


# ---------------------------------------------------------------------------
# semantics


def check_labels(labels: np.ndarray, num_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    labels = np.asarray(labels)
    bad = (labels != ignore_index) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise DataError(f"label {int(labels[bad].flat[0])} outside [0, {num_classes}) and not ignore {ignore_index}")
    return labels


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64,
            ignore_index: int = IGNORE_INDEX) -> tuple[np.ndarray, np.ndarray]:
    """``B x H x W`` labels -> (``B x K x H x W`` one-hot, ``B x 1 x H x W`` valid mask)."""
    labels = check_labels(labels, num_classes, ignore_index)
    valid = labels != ignore_index
    safe = np.where(valid, labels, 0)
    oh = (safe[:, None] == np.arange(num_classes)[None, :, None, None]) & valid[:, None]
    return oh.astype(dtype), valid[:, None]


def cross_entropy(logits: Tensor, labels, ignore_index: int = IGNORE_INDEX) -> Tensor:
    oh, valid = one_hot(labels, logits.shape[1], logits.dtype, ignore_index)
    count = float(valid.sum())
    if count == 0:
        raise DataError("no labelled pixels")
    return -ad.sum(ad.log_softmax(logits, axis=1) * oh) * (1.0 / count)


def dice_loss(logits: Tensor, labels, eps: float = 1.0, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """``1 - mean_k (2 sum p y + eps) / (sum p + sum y + eps)`` over all classes."""
    oh, valid = one_hot(labels, logits.shape[1], logits.dtype, ignore_index)
    p = ad.softmax(logits, axis=1) * valid.astype(logits.dtype)
    inter = ad.sum(p * oh, axis=(0, 2, 3))
    denom = ad.sum(p, axis=(0, 2, 3)) + oh.sum(axis=(0, 2, 3)) + eps
    score = (inter * 2.0 + eps) / denom
    return 1.0 - ad.mean(score)


def seg_loss(logits: Tensor, labels, alpha: float = 0.5, beta: float = 0.75, eps: float = 1.0,
             ignore_index: int = IGNORE_INDEX) -> Tensor:
    return cross_entropy(logits, labels, ignore_index) * alpha + dice_loss(logits, labels, eps, ignore_index) * beta


# ---------------------------------------------------------------------------
# depth


def huber(r: Tensor, delta: float = 1.0) -> Tensor:
    """Elementwise Huber: ``r^2/2`` inside ``|r| <= delta``, ``delta (|r| - delta/2)`` outside."""
    a = ad.abs(r)
    q = ad.minimum(a, delta)
    return q * q * 0.5 + (a - q) * delta


def gradient_penalty(r: Tensor, mask: np.ndarray) -> Tensor:
    """Mean squared forward difference of ``r`` along columns plus along rows.

    Only differences whose two pixels are both valid count.
    """
    total = None
    for axis in (-1, -2):
        d = forward_diff(r, axis)
        lo = [slice(None)] * r.ndim
        hi = [slice(None)] * r.ndim
        n = r.shape[axis]
        lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
        m = mask[tuple(lo)] & mask[tuple(hi)]
        if not m.any():
            continue
        term = _masked_mean(d * d, m)
        total = term if total is None else total + term
    return total if total is not None else ad.sum(r * 0.0)


def _depth_inputs(p: Tensor, y) -> tuple[np.ndarray, np.ndarray]:
    y = _as_map(y, p).astype(p.dtype, copy=False)
    mask = y > 0
    if not mask.any():
        raise DataError("depth target has no valid (positive) pixels")
    return y, mask


def depth_loss_indoor(p: Tensor, y, delta: float = 1.0, lambda_grad: float = 1.0) -> Tensor:
    """Huber on valid pixels (``y > 0``) plus ``lambda_grad`` times the gradient-matching term."""
    y, mask = _depth_inputs(p, y)
    r = p - y
    return _masked_mean(huber(r, delta), mask) + gradient_penalty(r, mask) * lambda_grad


def scale_invariant(g: Tensor, mask: np.ndarray) -> Tensor:
    """``mean(g^2) - mean(g)^2`` over the mask (variance of the log error)."""
    m = _masked_mean(g, mask)
    return _masked_mean(g * g, mask) - m * m


def depth_loss_outdoor(p: Tensor, y, lambda_grad: float = 1.0) -> Tensor:
    """Scale-invariant log loss plus gradient matching on log depth."""
    y, mask = _depth_inputs(p, y)
    if (p.data[mask] <= 0).any():
        raise DomainError("outdoor depth loss needs strictly positive predictions")
    safe_p = p * mask + (~mask).astype(p.dtype)  # keep log finite on masked pixels
    g = ad.log(safe_p) - np.log(np.where(mask, y, 1.0))
    return scale_invariant(g, mask) + gradient_penalty(g, mask) * lambda_grad


# ---------------------------------------------------------------------------
# normals and edges


def normals_mask(n_gt: np.ndarray) -> np.ndarray:
    """Valid where the ground-truth vector is not (near) zero; ``B x 1 x H x W``."""
    return (np.linalg.norm(n_gt, axis=1, keepdims=True) > 0.5)


def normals_loss(n_pred: Tensor, n_gt, mask: Optional[np.ndarray] = None) -> Tensor:
    n_gt = np.asarray(n_gt, dtype=n_pred.dtype)
    if n_gt.shape != tuple(n_pred.shape):
        raise DimensionError(f"normal target {n_gt.shape} vs prediction {n_pred.shape}")
    valid = normals_mask(n_gt)
    if mask is not None:
        valid = valid & _as_map(mask, Tensor(valid)).astype(bool)
    cos = ad.sum(n_pred * n_gt, axis=1, keepdims=True)
    return _masked_mean(1.0 - cos, valid)


def edge_pos_weight(e_gt: np.ndarray, cap: float = 20.0) -> float:
    pos = float(np.sum(e_gt > 0.5))
    neg = float(e_gt.size - pos)
    if pos == 0:
        return 1.0
    return min(neg / pos, cap)


def edges_loss(e_logits: Tensor, e_gt, pos_weight: Optional[float] = None, cap: float = 20.0) -> Tensor:
    """Mean BCE-with-logits; ``pos_weight=None`` uses the batch's neg/pos ratio capped at ``cap``."""
    y = _as_map(e_gt, e_logits).astype(e_logits.dtype, copy=False)
    w = edge_pos_weight(y, cap) if pos_weight is None else float(pos_weight)
    per_pixel = ad.softplus(-e_logits) * (y * w) + ad.softplus(e_logits) * (1.0 - y)
    return ad.mean(per_pixel)


# ---------------------------------------------------------------------------
# cross-task consistency


def normals_from_depth(d: Tensor) -> Tensor:
    """Unit ``(-dx d, -dy d, 1)`` per pixel for ``B x 1 x H x W`` depth."""
    dx = replicate_diff(d, -1)
    dy = replicate_diff(d, -2)
    ones = Tensor(np.ones(d.shape, dtype=d.dtype))
    return ad.l2_normalize(ad.concat([-dx, -dy, ones], axis=1), axis=1)


def xdn_loss(n_pred: Tensor, depth_pred: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean ``1 - cos(n_pred, n_depth)`` with ``n_depth`` derived from depth differences."""
    n_depth = normals_from_depth(depth_pred)
    cos = ad.sum(n_pred * n_depth, axis=1, keepdims=True)
    if mask is None:
        return ad.mean(1.0 - cos)
    return _masked_mean(1.0 - cos, _as_map(mask, cos).astype(bool))


def boundary_strength(probs: Tensor) -> Tensor:
    """Per-pixel ``min(1, sum_c (|fwd| + |bwd| differences along rows and cols) / 2)``.

    Every pixel touching a label change in a one-hot map gets exactly 1,
    interior pixels 0. Output ``B x 1 x H x W``.
    """
    total = None
    for axis in (-1, -2):
        a = ad.abs(forward_diff(probs, axis))
        fwd = [(0, 0)] * probs.ndim
        bwd = [(0, 0)] * probs.ndim
        fwd[axis], bwd[axis] = (0, 1), (1, 0)
        s = ad.pad(a, fwd) + ad.pad(a, bwd)
        total = s if total is None else total + s
    return ad.minimum(ad.sum(total, axis=1, keepdims=True) * 0.5, 1.0)


def xes_loss(seg_logits: Tensor, e_pred: Tensor, probs: bool = False) -> Tensor:
    """Mean ``|strength(softmax(S)) - E|``; ``probs=True`` takes ``S`` as probabilities already."""
    p = seg_logits if probs else ad.softmax(seg_logits, axis=1)
    strength = boundary_strength(p)
    e = e_pred if isinstance(e_pred, Tensor) else Tensor(_as_map(e_pred, strength).astype(strength.dtype))
    return ad.mean(ad.abs(strength - e))


# ---------------------------------------------------------------------------
# dynamic weight averaging


def dwa_weights(ratios: Sequence[float], temperature: float = 2.0) -> np.ndarray:
    """``N softmax(r / T)``."""
    r = np.asarray(ratios, dtype=np.float64) / temperature
    e = np.exp(r - r.max())
    return len(r) * e / e.sum()


@dataclass
class DwaState:
    """Loss history and the weights to use at the next step.

    The first two steps use unit weights; afterwards the ratio of the last two
    recorded losses drives :func:`dwa_weights`. A zero earlier loss gives ratio 1.
    With ``ema > 0`` the recorded losses are exponentially smoothed first.
    """

    num_tasks: int = 4
    temperature: float = 2.0
    ema: float = 0.0
    history: list = field(default_factory=list)
    smoothed: Optional[np.ndarray] = None
    weights: np.ndarray = None
    steps: int = 0

    def __post_init__(self) -> None:
        if self.weights is None:
            self.weights = np.ones(self.num_tasks)

    def update(self, losses: Sequence[float]) -> np.ndarray:
        losses = np.asarray(losses, dtype=np.float64)
        if losses.shape != (self.num_tasks,):
            raise DimensionError(f"expected {self.num_tasks} losses, got {losses.shape}")
        if self.ema > 0:
            self.smoothed = losses if self.smoothed is None else self.ema * self.smoothed + (1 - self.ema) * losses
            losses = self.smoothed
        self.history = (self.history + [losses.copy()])[-2:]
        self.steps += 1
        if len(self.history) < 2:
            self.weights = np.ones(self.num_tasks)
        else:
            prev2, prev1 = self.history
            ratios = np.where(prev2 > 0, prev1 / np.where(prev2 > 0, prev2, 1.0), 1.0)
            self.weights = dwa_weights(ratios, self.temperature)
        return self.weights

    def to_dict(self) -> dict:
        return {"num_tasks": self.num_tasks, "temperature": self.temperature, "ema": self.ema,
                "history": [h.tolist() for h in self.history],
                "smoothed": None if self.smoothed is None else self.smoothed.tolist(),
                "weights": self.weights.tolist(), "steps": self.steps}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DwaState":
        s = cls(int(d["num_tasks"]), float(d["temperature"]), float(d["ema"]))
        s.history = [np.asarray(h, dtype=np.float64) for h in d["history"]]
        s.smoothed = None if d["smoothed"] is None else np.asarray(d["smoothed"], dtype=np.float64)
        s.weights = np.asarray(d["weights"], dtype=np.float64)
        s.steps = int(d["steps"])
        return s


def dwa_update(state: DwaState, losses: Sequence[float], temperature: Optional[float] = None) -> DwaState:
    if temperature is not None:
        state.temperature = temperature
    state.update(losses)
    return state


# ---------------------------------------------------------------------------
# total


@dataclass
class LossBreakdown:
    seg: float
    depth: float
    normals: float
    edges: float
    xdn: float
    xes: float
    weights: np.ndarray  # DWA weights applied, LOSS_TASKS order
    w_consistency: float
    alpha: float
    beta: float
    total: float

    def task_losses(self) -> np.ndarray:
        return np.array([self.seg, self.depth, self.normals, self.edges])


def total_loss(preds, targets: Mapping[str, np.ndarray], cfg: LossConfig, state: DwaState,
               phase: str) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the four task losses, plus consistency terms when fine-tuning.

    ``preds`` is a :class:`~m2h.ggfm.Predictions`; ``targets`` holds ``labels``,
    ``depth``, ``normals`` and ``edges``. The DWA weights used are
    ``state.weights``; the state is not advanced here.
    """
    alpha, beta = cfg.seg_weights(phase)
    l_seg = seg_loss(preds.seg, targets["labels"], alpha, beta, cfg.dice_eps, cfg.ignore_index)
    if cfg.outdoor:
        l_depth = depth_loss_outdoor(preds.depth, targets["depth"], cfg.lambda_grad)
    else:
        l_depth = depth_loss_indoor(preds.depth, targets["depth"], cfg.huber_delta, cfg.lambda_grad)
    l_norm = normals_loss(preds.normals, targets["normals"])
    l_edge = edges_loss(preds.edges, targets["edges"], cap=cfg.edge_pos_weight_cap)
    w = np.asarray(state.weights, dtype=np.float64)
    parts = (l_seg, l_depth, l_norm, l_edge)
    total = parts[0] * float(w[0])
    for wi, li in zip(w[1:], parts[1:]):
        total = total + li * float(wi)
    xdn = xes = 0.0
    wx = 0.0
    if phase == "finetune":
        wx = cfg.consistency_weight
        l_xdn = xdn_loss(preds.normals, preds.depth)
        l_xes = xes_loss(preds.seg, ad.sigmoid(preds.edges))
        total = total + (l_xdn + l_xes) * wx
        xdn, xes = l_xdn.item(), l_xes.item()
    breakdown = LossBreakdown(l_seg.item(), l_depth.item(), l_norm.item(), l_edge.item(), xdn, xes,
                              w.copy(), wx, alpha, beta, total.item())
    return total, breakdown


__all__ = [
    "IGNORE_INDEX", "LOSS_TASKS", "TASKS", "DwaState", "LossBreakdown", "boundary_strength", "check_labels",
    "cross_entropy", "depth_loss_indoor", "depth_loss_outdoor", "dice_loss", "dwa_update", "dwa_weights",
    "edge_pos_weight", "edges_loss", "forward_diff", "gradient_penalty", "huber", "normals_from_depth",
    "normals_loss", "one_hot", "replicate_diff", "scale_invariant", "seg_loss", "total_loss", "xdn_loss",
    "xes_loss",
]
