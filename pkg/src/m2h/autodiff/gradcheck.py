"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, detect_anomaly, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int
    worst: str = ""
    error: Optional[str] = None
    per_tensor: dict[str, float] = field(default_factory=dict)


def _loc(i: int, shape: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(int(v) for v in np.unravel_index(i, shape))


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def noise_floor(f0: float, h: float, tol: float, dtype=np.float64) -> float:
    """Denominator floor for :func:`rel_error`.

    Central differences of ``f`` carry roundoff of about ``eps |f| / h``; a
    gradient that is truly zero (e.g. a bias that softmax is invariant to) then
    looks like pure noise. With this floor a discrepancy of 10x that noise
    scores at most ``tol``.
    """
    noise = 10.0 * np.finfo(dtype).eps * max(1.0, abs(f0)) / h
    return max(1e-8, noise / tol)


def grad_check(
    f: Callable[..., Tensor],
    x: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_elems: Optional[int] = None,
    seed: int = 0,
    grad_scale: float = 1.0,
    names: Optional[Sequence[str]] = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(x)`` against central differences.

    ``x`` is a tensor or a list of tensors (e.g. an input plus parameters);
    ``f`` is called as ``f(x)`` with the same object. The step for element
    ``x_i`` is ``h * max(1, |x_i|)``. When ``max_elems`` is given, at most that
    many randomly chosen elements per tensor are probed. ``grad_scale`` multiplies
    the analytic gradient before comparison, which lets callers confirm the
    detector trips on a corrupted backward pass.
    """
    tensors = [x] if isinstance(x, Tensor) else list(x)
    names = list(names) if names is not None else [t.name or f"arg{i}" for i, t in enumerate(tensors)]
    rng = np.random.default_rng(seed)

    for t in tensors:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
        t.requires_grad = True
    try:
        with detect_anomaly():
            out = f(x)
            if out.size != 1:
                return GradCheckReport(np.inf, False, 0, error=f"f returned shape {out.shape}, need scalar")
            f0 = float(out.data)
            out.backward()
    except FloatingPointError as exc:
        return GradCheckReport(np.inf, False, 0, error=f"forward/backward: {exc}")

    worst_err, worst_loc, checked = 0.0, "", 0
    floor = noise_floor(f0, h, tol, tensors[0].data.dtype)
    per_tensor: dict[str, float] = {}
    for t, name in zip(tensors, names):
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad * grad_scale
        if not np.all(np.isfinite(analytic)):
            bad = np.argwhere(~np.isfinite(analytic))[0]
            return GradCheckReport(np.inf, False, checked, error=f"non-finite analytic grad at {name}{tuple(bad)}")
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idx = np.sort(rng.choice(flat.size, size=max_elems, replace=False))
        a_flat = analytic.reshape(-1)
        tensor_worst = 0.0
        with no_grad():
            for i in idx:
                orig = flat[i]
                step = h * max(1.0, abs(float(orig)))
                flat[i] = orig + step
                fp = float(f(x).data)
                flat[i] = orig - step
                fm = float(f(x).data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    loc = f"{name}{_loc(i, t.shape)}"
                    return GradCheckReport(np.inf, False, checked, error=f"non-finite f near {loc}")
                num = (fp - fm) / (2 * step)
                err = float(rel_error(np.asarray(a_flat[i]), np.asarray(num), floor))
                checked += 1
                tensor_worst = max(tensor_worst, err)
                if err > worst_err:
                    worst_err = err
                    worst_loc = f"{name}{_loc(i, t.shape)}: analytic={a_flat[i]:.6e} numeric={num:.6e}"
        per_tensor[name] = tensor_worst
    return GradCheckReport(worst_err, worst_err <= tol, checked, worst_loc, per_tensor=per_tensor)
