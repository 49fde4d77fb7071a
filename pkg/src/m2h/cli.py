"""Command-line entry point: ``m2h {gen,train,eval,gradcheck,bench}``.

Exit codes: 0 success, 1 gradient check failure, 2 usage / IO / config error,
3 non-finite training loss, 4 checkpoint and config/data mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError, DataError, DatasetIOError, M2HError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_NAN, EXIT_MISMATCH = 0, 1, 2, 3, 4

log = logging.getLogger("m2h")


def _sizes(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="m2h", description="Multi-task dense prediction toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--shapes", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--config", required=True, help="flat key = value config file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, help="override the configured step count")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config", help="expected config; a mismatch with the checkpoint exits with 4")
    e.add_argument("--out", help="directory for report.csv and prediction maps")
    e.add_argument("--batch-size", type=int, default=8)
    e.add_argument("--gt-as-prediction", action="store_true",
                   help="score the ground truth against itself (harness check)")

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--block", default="all")
    c.add_argument("--out", help="CSV file for per-check results")
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--inject-bug", action="store_true", help="corrupt analytic gradients (detector test)")

    b = sub.add_parser("bench", help="attention multiply-add counts and timings")
    b.add_argument("--mode", choices=("wmca", "global"), default="wmca")
    b.add_argument("--sizes", type=_sizes, default=[14, 28])
    b.add_argument("--window", type=int, default=7)
    b.add_argument("--channels", type=int, default=32)
    b.add_argument("--heads", type=int, default=2)
    b.add_argument("--out", help="CSV file (printed to stdout as well)")
    return ap


def cmd_gen(args) -> int:
    from .data import generate_dataset

    index = generate_dataset(args.out, args.count, args.size, args.classes, args.seed, args.shapes)
    print(f"wrote {args.count} scenes to {index.parent}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import load_config
    from .data import SceneDataset
    from .training import TrainingDiverged, train

    cfg = load_config(args.config)
    if args.steps is not None:
        cfg.steps = args.steps
    dataset = SceneDataset(args.data)
    h, w = dataset[0].size
    cfg.model.check_image(h, w)

    def progress(row):
        if row["step"] % 50 == 0 or row["step"] == cfg.steps - 1:
            log.info("step %d %s lr=%.3e total=%.5f", row["step"], row["phase"], row["lr"], row["total"])

    try:
        result = train(cfg, dataset, args.out, progress=progress)
    except TrainingDiverged as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    print(f"trained {cfg.steps} steps in {result.wall_s:.1f}s; final total loss {result.log[-1]['total']:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import CheckpointError, load_model
    from .config import load_config
    from .data import SceneDataset
    from .evaluation import evaluate, write_report

    expect = load_config(args.config).model if args.config else None
    try:
        model, ckpt = load_model(args.checkpoint, expect)
        dataset = SceneDataset(args.data)
        h, w = dataset[0].size
        model.cfg.check_image(h, w)
    except (CheckpointError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = evaluate(model, dataset, model.cfg.num_classes, args.batch_size, args.gt_as_prediction,
                      pred_dir=(out / "predictions") if out is not None else None)
    if out is not None:
        write_report(out / "report.csv", report)
    for k, v in report.summary().items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradchecks import run_gradchecks, write_results

    def show(r):
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.block}/{r.check} max_rel_err={r.max_rel_err:.3e} n={r.checked} ({r.seconds:.2f}s)")

    results = run_gradchecks(args.block, grad_scale=1.01 if args.inject_bug else 1.0, tol=args.tol, progress=show)
    if args.out:
        write_results(args.out, results)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_bench, write_bench

    rows = run_bench(args.mode, args.sizes, args.window, args.channels, args.heads)
    sys.stdout.write(write_bench(args.out, rows))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, DatasetIOError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except M2HError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
