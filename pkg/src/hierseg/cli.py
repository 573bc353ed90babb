"""Command-line entry point: ``hierseg {gen-data,train,eval,gradcheck,experiment}``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .diffnet import CheckpointError
from .hierarchy import HierarchyError, bundled_tree, leaf_cut, load_hierarchy, validate_cut
from .losses import LOSSES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _tree(path):
    return bundled_tree() if path in (None, "bundled") else load_hierarchy(path)


def cmd_gen_data(args) -> int:
    from .synthdata import default_appearance, generate_dataset, shift_appearance

    tree = _tree(args.tree)
    if args.cut == "leaves" and "leaves" not in tree.names:
        cut = leaf_cut(tree)
    else:
        cut = validate_cut(tree, args.cut)
    appearance = default_appearance(tree)
    if args.appearance_shift:
        appearance = shift_appearance(appearance, args.shift_seed, args.appearance_shift)
    manifest = generate_dataset(tree, cut, appearance, args.seed, args.images, args.size, args.out,
                                name=args.name or Path(args.out).name)
    print(f"wrote {manifest.image_count} images of {manifest.patch_size}x{manifest.patch_size} "
          f"with cut [{', '.join(manifest.cut)}] to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import Schedule, evaluate, run_schedule

    schedule = Schedule.load(args.schedule)
    result = run_schedule(schedule, resume=args.resume, out_dir=args.out)
    print(f"trained {result.steps} steps over {len(schedule.episodes)} episode(s); checkpoint {result.checkpoint}")
    for path in schedule.evaluate:
        ev = evaluate(result.net, path, "test")
        print(f"  {ev.dataset} test mean PQ {ev.mean_pq:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import evaluate
    from .synthdata import load_dataset

    if args.checkpoint is None and not args.ground_truth:
        raise UsageError("eval: --checkpoint is required unless --ground-truth is given")
    ds = load_dataset(args.data)
    predictions = [ds.masks[i] for i in ds.indices(args.split)] if args.ground_truth else None
    result = evaluate(args.checkpoint, ds, args.split, predictions=predictions, report_path=args.report)
    for name, c in zip(result.class_names, result.pooled.per_class):
        pq = "n/a" if c.pq is None else f"{c.pq:.4f}"
        print(f"  {name:22s} tp {c.tp:4d} fp {c.fp:4d} fn {c.fn:4d} pq {pq}")
    print(f"{ds.name} {args.split}: mean PQ {result.mean_pq:.4f}" + (f"; report {args.report}" if args.report else ""))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    tree = _tree(args.tree)
    losses = [args.loss] if args.loss else ["ce", "mce", "ft", "mft"]
    start = time.time()
    report = run_gradcheck(tree, losses, n_batches=args.batches, h=args.h, seed=args.seed,
                           tol_loss=args.tol_loss, tol_net=args.tol_net, network=not args.loss or args.network)
    for line in report.lines():
        print(line)
    print(f"{'passed' if report.passed else 'FAILED'} in {time.time() - start:.1f}s")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_experiment(args) -> int:
    from .experiments import ExperimentConfig, experiment_generalization, experiment_pretrain_finetune

    cfg = ExperimentConfig.load(args.config)
    runner = experiment_pretrain_finetune if args.kind == "finetune" else experiment_generalization
    try:
        comp = runner(cfg, seeds=args.seeds, out_dir=args.out)
    except (ValueError, OSError) as exc:
        print(f"error: experiment failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for arm, seed, test, pq in comp.rows:
        print(f"  {arm:8s} seed {seed}  {test:8s} mean PQ {pq:.4f}")
    print(comp.summary())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hierseg", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--tree", help="hierarchy JSON (default: bundled nucleus tree)")
    g.add_argument("--cut", required=True, help="comma-separated class names, or 'leaves' for the leaf cut")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--images", type=int, required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--out", required=True)
    g.add_argument("--name")
    g.add_argument("--appearance-shift", type=float, default=0.0, help="strength of a stain-like colour shift")
    g.add_argument("--shift-seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run a training schedule")
    t.add_argument("--schedule", required=True)
    t.add_argument("--resume")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="panoptic quality of a checkpoint on a dataset split")
    e.add_argument("--checkpoint")
    e.add_argument("--data", required=True, help="dataset manifest or its directory")
    e.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    e.add_argument("--report")
    e.add_argument("--ground-truth", action="store_true", help="score the ground truth against itself")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--tree")
    c.add_argument("--loss", choices=[n for n in LOSSES if n != "combined"])
    c.add_argument("--network", action="store_true", help="with --loss, also check the network")
    c.add_argument("--batches", type=int, default=100)
    c.add_argument("--h", type=float, default=1e-5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol-loss", type=float, default=1e-4)
    c.add_argument("--tol-net", type=float, default=1e-3)
    c.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("experiment", help="two-arm comparison over seeds")
    x.add_argument("--kind", choices=["finetune", "generalize"], required=True)
    x.add_argument("--config", required=True)
    x.add_argument("--seeds", type=int, default=3)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    from .experiments import ExperimentError
    from .losses import LossError
    from .metrics import MaskError
    from .netpbm import NetpbmError
    from .pipeline import ScheduleError, TrainingError
    from .synthdata import DataError

    data_errors = (HierarchyError, DataError, ScheduleError, CheckpointError, MaskError, NetpbmError, LossError,
                   ExperimentError, json.JSONDecodeError, FileNotFoundError)

    try:
        args = build_parser().parse_args(argv)
        if args.command == "gradcheck" and not 1e-7 <= args.h <= 1e-1:
            raise UsageError("gradcheck: --h must lie in [1e-7, 1e-1]")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except data_errors as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
