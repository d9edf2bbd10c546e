"""Command-line front end.

Exit codes: 0 success (or property holds), 1 property fails / no feasible
holding config, 2 any error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import bounds, datasets, engine, metrics, tuner
from ._textio import dumps, write_json

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("cnfpreserve")


class CliError(Exception):
    pass


def _dims(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"invalid layer dims {text!r}")
    return dims


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _load_config(path: str | None) -> engine.DistillConfig:
    return engine.DistillConfig() if path is None else engine.DistillConfig.from_file(path)


def _emit(obj: dict, out: str | None) -> None:
    if out:
        write_json(out, obj)
    else:
        sys.stdout.write(dumps(obj, indent=2) + "\n")


# --------------------------------------------------------------------------
# Subcommands


def cmd_audit(args) -> int:
    ds = datasets.load_paired(args.input, args.split)
    report = metrics.audit(ds, args.kappa, args.gamma, args.ece_bins, args.bot_policy)
    _emit(report.to_dict(), args.out)
    return EXIT_OK if report.holds else EXIT_FAIL


def cmd_histogram(args) -> int:
    ds = datasets.load_paired(args.input)
    dist = metrics.distributions(ds, args.gamma, args.bins)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    dist.teacher.to_csv(f"{prefix}_teacher.csv")
    dist.student.to_csv(f"{prefix}_student.csv")
    dist.delta.to_csv(f"{prefix}_delta.csv")
    write_json(
        f"{prefix}_summary.json",
        {"n_total": dist.n_total, "n_bot": dist.n_bot, "n_delta": dist.delta.total, "bins": args.bins,
         "gamma": args.gamma},
    )
    return EXIT_OK


def cmd_bound(args) -> int:
    ds = datasets.load_paired(args.input)
    if args.loss == "auto":
        loss = None
    else:
        try:
            loss = float(args.loss)
        except ValueError:
            raise CliError(f"--loss must be a number or 'auto', got {args.loss!r}") from None
    report = bounds.verify_chain(ds, args.gamma, args.alpha, loss, args.tol)
    _emit(report.to_dict(), args.out)
    return EXIT_OK if report.all_hold else EXIT_FAIL


def cmd_gen_data(args) -> int:
    points = datasets.gen_synthetic(args.task, args.n, args.noise, args.seed)
    if args.eval_out:
        train, evl = datasets.split(points, args.eval_fraction, args.seed)
        datasets.save_points(train, args.out)
        datasets.save_points(evl, args.eval_out)
    else:
        datasets.save_points(points, args.out)
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    cfg = _load_config(args.config)
    data = datasets.load_points(args.data)
    model, tlog = engine.train_teacher(data, args.dims, cfg)
    engine.save_model(model, args.out)
    if args.log:
        tlog.save(args.log)
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = _load_config(args.config)
    teacher = engine.load_model(args.teacher)
    data = datasets.load_points(args.data)
    student, tlog = engine.distill(teacher, data, args.dims, cfg)
    engine.save_model(student, args.out)
    if args.log:
        tlog.save(args.log)
    if args.emit_pairs:
        datasets.save_paired(engine.export_pairs(teacher, student, data, args.split), args.emit_pairs)
    return EXIT_OK


def cmd_tune(args) -> int:
    baseline = _load_config(args.config)
    if args.seed is not None:
        baseline = dataclasses.replace(baseline, seed=args.seed)
    grid = tuner.TuneGrid.from_file(args.grid, args.tune_stage1) if args.grid else tuner.TuneGrid(
        tune_stage1=args.tune_stage1
    )
    teacher = engine.load_model(args.teacher)
    train = datasets.load_points(args.data)
    evl = datasets.load_points(args.eval)
    outcome = tuner.tune(
        teacher, train, evl, args.dims, grid, args.kappa, args.max_acc_drop, baseline,
        max_trials=args.max_trials, workers=args.workers,
    )
    outcome.save(args.out)
    return EXIT_OK if outcome.found else EXIT_FAIL


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="cnfpreserve",
        description="Confidence-preservation audit for teacher/student classifier pairs.",
        formatter_class=fmt,
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="increase log verbosity")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="sigma, verdict, accuracy and ECE for a paired-logits file",
                       formatter_class=fmt)
    p.add_argument("--input", required=True, help="paired-logits JSONL file")
    p.add_argument("--kappa", type=_positive, default=metrics.DEFAULT_KAPPA, help="sigma threshold")
    p.add_argument("--gamma", type=_positive, default=metrics.DEFAULT_GAMMA, help="softmax inverse temperature")
    p.add_argument("--ece-bins", type=int, default=metrics.DEFAULT_ECE_BINS, help="equal-width ECE bins")
    p.add_argument("--bot-policy", choices=metrics.BOT_POLICIES, default="zero",
                   help="how argmax disagreements enter sigma")
    p.add_argument("--split", choices=datasets.SPLIT_TAGS, default="train", help="split tag for the report")
    p.add_argument("--out", default=None, help="report file (stdout if omitted)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("histogram", help="confidence and pairwise-difference histograms as CSV",
                       formatter_class=fmt)
    p.add_argument("--input", required=True, help="paired-logits JSONL file")
    p.add_argument("--bins", type=int, default=50, help="number of bins")
    p.add_argument("--gamma", type=_positive, default=metrics.DEFAULT_GAMMA, help="softmax inverse temperature")
    p.add_argument("--out-prefix", required=True,
                   help="writes PREFIX_teacher.csv, PREFIX_student.csv, PREFIX_delta.csv, PREFIX_summary.json")
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("bound", help="check the sigma/loss bound chain", formatter_class=fmt)
    p.add_argument("--input", required=True, help="paired-logits JSONL file")
    p.add_argument("--alpha", type=float, default=0.0, help="cross-entropy weight in the loss")
    p.add_argument("--gamma", type=_positive, default=1.0, help="softmax inverse temperature")
    p.add_argument("--loss", required=True,
                   help="sum-form total loss, or 'auto' to recompute it from the file")
    p.add_argument("--tol", type=float, default=bounds.DEFAULT_TOL, help="absolute tolerance per step")
    p.add_argument("--out", default=None, help="report file (stdout if omitted)")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("gen-data", help="generate a synthetic 2-D task", formatter_class=fmt)
    p.add_argument("--task", choices=datasets.TASKS, required=True)
    p.add_argument("--n", type=int, default=1000, help="number of points")
    p.add_argument("--noise", type=float, default=0.1, help="Gaussian noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="labeled-points JSONL (train part when --eval-out is given)")
    p.add_argument("--eval-out", default=None, help="also split off an eval file here")
    p.add_argument("--eval-fraction", type=float, default=0.2, help="eval share when --eval-out is given")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train a teacher MLP on cross-entropy", formatter_class=fmt)
    p.add_argument("--data", required=True, help="labeled-points JSONL")
    p.add_argument("--dims", type=_dims, default=engine.TEACHER_DIMS, help="layer sizes, comma separated")
    p.add_argument("--config", default=None, help="key = value config (uses lr_stg1, epochs_stg1)")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--log", default=None, help="optional per-epoch training log")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="two-stage distillation into a student MLP", formatter_class=fmt)
    p.add_argument("--teacher", required=True, help="teacher model file")
    p.add_argument("--data", required=True, help="labeled-points JSONL (training data)")
    p.add_argument("--dims", type=_dims, default=engine.STUDENT_MILD_DIMS, help="student layer sizes")
    p.add_argument("--config", default=None, help="key = value config")
    p.add_argument("--out", required=True, help="student model file")
    p.add_argument("--emit-pairs", default=None, help="also write paired logits on --data")
    p.add_argument("--split", choices=datasets.SPLIT_TAGS, default="train", help="split tag for emitted pairs")
    p.add_argument("--log", default=None, help="optional per-epoch training log")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("tune", help="grid search for a config where the property holds", formatter_class=fmt)
    p.add_argument("--teacher", required=True, help="teacher model file")
    p.add_argument("--data", required=True, help="training labeled-points JSONL")
    p.add_argument("--eval", required=True, help="eval labeled-points JSONL")
    p.add_argument("--dims", type=_dims, default=engine.STUDENT_AGGRESSIVE_DIMS, help="student layer sizes")
    p.add_argument("--grid", default=None, help="grid file (key = comma-separated list); desk default if omitted")
    p.add_argument("--config", default=None, help="baseline config file")
    p.add_argument("--kappa", type=_positive, default=metrics.DEFAULT_KAPPA)
    p.add_argument("--max-acc-drop", type=float, default=tuner.DEFAULT_MAX_ACC_DROP,
                   help="largest allowed eval accuracy drop (absolute fraction)")
    p.add_argument("--seed", type=int, default=None, help="override the baseline seed")
    p.add_argument("--tune-stage1", action="store_true", help="also search lr_stg1 / epochs_stg1")
    p.add_argument("--max-trials", type=int, default=None, help="run only the first N grid configs")
    p.add_argument("--workers", type=int, default=1, help="parallel trial processes")
    p.add_argument("--out", required=True, help="outcome file")
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 for --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError, TypeError, engine.DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
