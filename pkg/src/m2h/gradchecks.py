"""Finite-difference gradient checks of every building block at fixed toy shapes (64-bit)."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tensor, grad_check
from .config import ModelConfig
from .encoder import MEViTBlock, TokenSet
from .ggfm import GGFM, Head, ggfm_fuse_unique
from .model import M2H
from .nn import Module
from .reassembly import MSF, MSTR, TaskBundle
from .wmca import WMCA

BLOCKS = ("ops", "encoder", "mstr", "wmca", "ggfm", "heads", "losses", "model")
CSV_COLUMNS = ("block", "check", "max_rel_err", "checked", "passed", "seconds", "detail")


@dataclass
class CheckResult:
    block: str
    check: str
    max_rel_err: float
    checked: int
    passed: bool
    seconds: float
    detail: str = ""


def _weighted_sum(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Fixed random projection ``sum(out * R)`` so every output element matters."""
    r = rng.normal(size=out.shape)
    return lambda y: ad.sum(y * r)


def _module_check(module: Module, inputs: list[Tensor], forward: Callable[..., Tensor],
                  max_elems: Optional[int], grad_scale: float, tol: float, seed: int):
    rng = np.random.default_rng(seed)
    named = list(module.named_parameters())
    params = [p for _, p in named]
    names = [f"input{i}" for i in range(len(inputs))] + [n for n, _ in named]
    with ad.no_grad():
        proj = _weighted_sum(forward(*inputs), rng)
    tensors = list(inputs) + params
    return grad_check(lambda ts: proj(forward(*ts[: len(inputs)])), tensors, max_elems=max_elems,
                      grad_scale=grad_scale, tol=tol, seed=seed, names=names)


def _fn_check(fn: Callable[..., Tensor], tensors: list[Tensor], grad_scale: float, tol: float,
              max_elems: Optional[int] = None, seed: int = 0):
    return grad_check(lambda ts: fn(*ts), tensors, max_elems=max_elems, grad_scale=grad_scale, tol=tol,
                      seed=seed, names=[f"arg{i}" for i in range(len(tensors))])


def _t(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


# ---------------------------------------------------------------------------
# per-block check lists; each yields (name, thunk returning GradCheckReport)


def _ops_checks(rng, gs, tol):
    a, b = _t(rng, 4, 5), _t(rng, 5, 3)
    yield "matmul", lambda: _fn_check(lambda x, y: ad.sum(ad.matmul(x, y) * np.arange(12.0).reshape(4, 3)),
                                      [a, b], gs, tol)
    x, w = _t(rng, 2, 3, 7, 5), _t(rng, 4, 3, 3, 3)
    r = rng.normal(size=(2, 4, 4, 3))
    yield "conv2d_s2_p1", lambda: _fn_check(lambda u, v: ad.sum(ad.conv2d(u, v, stride=2, pad=1) * r), [x, w], gs, tol)
    r1 = rng.normal(size=(2, 4, 7, 5))
    yield "conv2d_s1_p1", lambda: _fn_check(lambda u, v: ad.sum(ad.conv2d(u, v, pad=1) * r1), [x, w], gs, tol)
    wd = _t(rng, 3, 1, 3, 3)
    r2 = rng.normal(size=(2, 3, 7, 5))
    yield "conv2d_depthwise", lambda: _fn_check(lambda u, v: ad.sum(ad.conv2d(u, v, pad=1, groups=3) * r2),
                                                [x, wd], gs, tol)
    xt, wt = _t(rng, 2, 3, 3, 2), _t(rng, 3, 2, 2, 2)
    r3 = rng.normal(size=(2, 2, 6, 4))
    yield "conv_transpose2d", lambda: _fn_check(lambda u, v: ad.sum(ad.conv_transpose2d(u, v, stride=2) * r3),
                                                [xt, wt], gs, tol)
    s = _t(rng, 3, 6)
    rs = rng.normal(size=(3, 6))
    yield "softmax", lambda: _fn_check(lambda u: ad.sum(ad.softmax(u, axis=-1) * rs), [s], gs, tol)
    ln_x, g, bta = _t(rng, 4, 8), _t(rng, 8), _t(rng, 8)
    rl = rng.normal(size=(4, 8))
    yield "layer_norm", lambda: _fn_check(lambda u, gg, bb: ad.sum(ad.layer_norm(u, gg, bb) * rl),
                                          [ln_x, g, bta], gs, tol)
    e = _t(rng, 2, 3, 4, 4)
    re = rng.normal(size=(2, 3, 4, 4))
    yield "elementwise", lambda: _fn_check(
        lambda u: ad.sum((ad.sigmoid(u) * ad.relu(u + 0.1) + ad.gelu(u) + ad.log(ad.abs(u) + 1.0)) * re)
        + ad.sum(ad.global_avg_pool(u)), [e], gs, tol)
    up = _t(rng, 1, 2, 3, 4)
    ru = rng.normal(size=(1, 2, 7, 5))
    yield "resize_bilinear", lambda: _fn_check(lambda u: ad.sum(ad.resize_bilinear(u, (7, 5)) * ru), [up], gs, tol)


def _encoder_checks(rng, gs, tol, max_elems):
    block = MEViTBlock(8, 2, 2, rng)
    x = _t(rng, 2, 6, 8)
    yield "mevit_block", lambda: _module_check(block, [x], lambda t: block(TokenSet(t, (2, 3))).tokens,
                                               max_elems, gs, tol, 1)


def _mstr_checks(rng, gs, tol, max_elems):
    cfg = ModelConfig(patch=4, emb_dim=8, encoder_blocks=4, encoder_heads=2, image_size=16, channels=8,
                      window=4, wmca_heads=2)
    mstr, msf = MSTR(cfg, rng), MSF(cfg, rng)
    taps = [_t(rng, 1, 4, 8) for _ in range(4)]

    class Both(Module):
        def __init__(self):
            self.mstr, self.msf = mstr, msf

    yield "mstr_msf", lambda: _module_check(Both(), taps,
                                            lambda *ts: msf(mstr([TokenSet(t, (2, 2)) for t in ts])),
                                            max_elems, gs, tol, 2)


def _wmca_checks(rng, gs, tol, max_elems):
    cfg = ModelConfig(channels=8, window=4, wmca_heads=2, emb_dim=8, encoder_heads=2)
    wmca = WMCA(cfg, rng)
    maps = [_t(rng, 1, 8, 8, 8) for _ in range(4)]

    def fwd(*ms):
        out = wmca(TaskBundle(*ms))
        return ad.concat(list(out), axis=1)

    yield "wmca", lambda: _module_check(wmca, maps, fwd, max_elems, gs, tol, 3)


def _ggfm_checks(rng, gs, tol, max_elems):
    g = GGFM(8, 4, rng)
    f, u = _t(rng, 2, 8, 4, 4), _t(rng, 2, 8, 4, 4)
    yield "ggfm", lambda: _module_check(g, [f, u], lambda a, b: ggfm_fuse_unique(g(a), b), max_elems, gs, tol, 4)


def _heads_checks(rng, gs, tol, max_elems):
    cfg = ModelConfig(channels=8, emb_dim=8, encoder_heads=2, wmca_heads=2, head_stem=2, num_classes=3)
    for task in ("semantics", "depth", "normals", "edges"):
        head = Head(task, cfg, rng)
        f, stem = _t(rng, 1, 8, 3, 3), _t(rng, 1, 2, 6, 6)
        yield f"head_{task}", (lambda h=head, a=f, s=stem: _module_check(
            h, [a, s], lambda x, y: h(x, (6, 6), y), max_elems, gs, tol, 5))


def _loss_checks(rng, gs, tol):
    logits = _t(rng, 2, 3, 4, 4)
    labels = rng.integers(0, 3, size=(2, 4, 4))
    labels[0, 0, 0] = L.IGNORE_INDEX
    yield "seg_loss", lambda: _fn_check(lambda x: L.seg_loss(x, labels), [logits], gs, tol)
    y = rng.uniform(1.0, 3.0, size=(2, 1, 4, 5))
    y[0, 0, 1, 1] = 0.0  # invalid pixel
    p = Tensor(y + rng.normal(size=y.shape) * 0.8, requires_grad=True)
    yield "depth_indoor", lambda: _fn_check(lambda x: L.depth_loss_indoor(x, y), [p], gs, tol)
    po = Tensor(rng.uniform(0.5, 4.0, size=y.shape), requires_grad=True)
    yield "depth_outdoor", lambda: _fn_check(lambda x: L.depth_loss_outdoor(x, y), [po], gs, tol)
    n_gt = rng.normal(size=(2, 3, 4, 4))
    n_gt /= np.linalg.norm(n_gt, axis=1, keepdims=True)
    n_raw = _t(rng, 2, 3, 4, 4)
    yield "normals_loss", lambda: _fn_check(lambda x: L.normals_loss(ad.l2_normalize(x, axis=1), n_gt),
                                            [n_raw], gs, tol)
    e = _t(rng, 2, 1, 4, 4)
    e_gt = (rng.random(size=(2, 4, 4)) < 0.2).astype(np.float64)
    yield "edges_loss", lambda: _fn_check(lambda x: L.edges_loss(x, e_gt), [e], gs, tol)
    d = Tensor(rng.uniform(1.0, 2.0, size=(1, 1, 5, 4)), requires_grad=True)
    yield "xdn_loss", lambda: _fn_check(lambda a, b: L.xdn_loss(ad.l2_normalize(a, axis=1), b),
                                        [_t(rng, 1, 3, 5, 4), d], gs, tol)
    s = _t(rng, 1, 3, 5, 5, scale=0.3)
    ep = _t(rng, 1, 1, 5, 5)
    yield "xes_loss", lambda: _fn_check(lambda a, b: L.xes_loss(a, ad.sigmoid(b)), [s, ep], gs, tol)


def _model_checks(rng, gs, tol, max_elems):
    cfg = ModelConfig(patch=4, emb_dim=8, encoder_blocks=2, encoder_heads=2, image_size=8, channels=8,
                      window=2, wmca_heads=2, head_stem=2, num_classes=3)
    model = M2H(cfg, seed=7)
    image = _t(rng, 1, 3, 8, 8, scale=0.5)

    def fwd(x):
        p = model(x)
        return ad.concat([p.seg, p.depth, p.normals, p.edges], axis=1)

    yield "m2h_forward", lambda: _module_check(model, [image], fwd, max(2, (max_elems or 4) // 4), gs, tol, 6)


def iter_checks(blocks: Iterable[str], grad_scale: float = 1.0, tol: float = 1e-4, max_elems: int = 12,
                seed: int = 0):
    for block in blocks:
        rng = np.random.default_rng(seed + BLOCKS.index(block))
        if block == "ops":
            gen = _ops_checks(rng, grad_scale, tol)
        elif block == "losses":
            gen = _loss_checks(rng, grad_scale, tol)
        else:
            gen = {"encoder": _encoder_checks, "mstr": _mstr_checks, "wmca": _wmca_checks, "ggfm": _ggfm_checks,
                   "heads": _heads_checks, "model": _model_checks}[block](rng, grad_scale, tol, max_elems)
        for name, thunk in gen:
            yield block, name, thunk


def run_gradchecks(block: str = "all", grad_scale: float = 1.0, tol: float = 1e-4, max_elems: int = 12,
                   seed: int = 0, progress: Optional[Callable[[CheckResult], None]] = None) -> list[CheckResult]:
    """Run the checks for ``block`` (or every block for ``"all"``) in float64.

    ``grad_scale != 1`` corrupts every analytic gradient; used to confirm
    the harness reports failures.
    """
    if block != "all" and block not in BLOCKS:
        raise ValueError(f"unknown block {block!r}; choose from all, {', '.join(BLOCKS)}")
    blocks = BLOCKS if block == "all" else (block,)
    results = []
    with ad.default_dtype(np.float64):
        for blk, name, thunk in iter_checks(blocks, grad_scale, tol, max_elems, seed):
            start = time.perf_counter()
            rep = thunk()
            res = CheckResult(blk, name, rep.max_rel_err, rep.checked, rep.passed, time.perf_counter() - start,
                              rep.error or rep.worst)
            results.append(res)
            if progress is not None:
                progress(res)
    return results


def write_results(path: str | Path, results: list[CheckResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in results:
            w.writerow([r.block, r.check, repr(float(r.max_rel_err)), r.checked, int(r.passed),
                        f"{r.seconds:.3f}", r.detail])
