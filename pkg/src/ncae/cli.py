"""Command-line interface: ``ncae {train,evaluate,recommend,split,generate}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags. Log records are JSON lines on stdout;
diagnostics go to stderr with a non-zero exit status.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from threadpoolctl import threadpool_limits

from . import synthetic
from .data import load_ratings, split, write_ratings
from .errors import CompatibilityError, ConfigError, NCAEError, UnknownUserError
from .evaluation import write_reports
from .pipeline import RunConfig, evaluate_part, recommend, restore, run_train

EXIT_USAGE = 2
EXIT_FAILURE = 1

# flag name -> RunConfig field, for flags that feed the run configuration
RUN_FLAGS = (
    "data", "sep", "mode", "orientation", "hidden", "q", "alpha", "beta", "weight_decay",
    "batch_size", "epochs", "learning_rate", "c0", "omega", "epsilon", "drop_ratio",
    "min_remaining", "augment", "sr_epochs", "dr_epochs", "v_epochs", "pretrain", "split",
    "fractions", "cutoffs", "seed", "threads",
)


class UsageError(NCAEError):
    pass


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="ratings file: user, item, rating[, timestamp] per line")
    p.add_argument("--sep", help="field separator: 'tab' (default) or '::'")
    p.add_argument("--mode", choices=["explicit", "implicit"])
    p.add_argument("--split", choices=["ratio", "leave-one-out"])
    p.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file with run settings; flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_flags(t)
    t.add_argument("--checkpoint", required=True, help="output checkpoint path")
    t.add_argument("--orientation", choices=["user", "item"])
    t.add_argument("--hidden", type=int, nargs="+", help="hidden layer widths, e.g. 500 500")
    t.add_argument("--q", type=float, help="input dropout ratio")
    t.add_argument("--alpha", type=float, help="weight on dropped observed entries")
    t.add_argument("--beta", type=float, help="weight on kept observed entries")
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--epochs", type=int, help="fine-tuning epochs")
    t.add_argument("--learning-rate", "--lr", type=float)
    t.add_argument("--c0", type=float, help="implicit: total confidence on unobserved items")
    t.add_argument("--omega", type=float, help="implicit: popularity exponent")
    t.add_argument("--epsilon", type=float, help="implicit: augmentation density threshold")
    t.add_argument("--drop-ratio", type=float, help="implicit: augmentation drop ratio p")
    t.add_argument("--min-remaining", type=int)
    t.add_argument("--augment", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--pretrain", action=argparse.BooleanOptionalAction, default=None)
    t.add_argument("--sr-epochs", type=int)
    t.add_argument("--dr-epochs", type=int)
    t.add_argument("--v-epochs", type=int)
    t.add_argument("--cutoffs", type=int, nargs="+", help="implicit: ranking cutoffs M")
    t.add_argument("--threads", type=int, help="BLAS worker threads (default 1)")
    t.add_argument("--log", help="write log records here instead of stdout")

    e = sub.add_parser("evaluate", help="score a checkpoint on its held-out data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="dataset path, if it moved since training")
    e.add_argument("--part", choices=["test", "valid"], default="test")
    e.add_argument("--metric", choices=["rmse", "hr", "ndcg"], action="append")
    e.add_argument("--cutoffs", type=int, nargs="+")
    e.add_argument("--output", help="report file (default stdout)")
    e.add_argument("--per-user", action="store_true", help="also dump per-user values")

    r = sub.add_parser("recommend", help="top-M items for one user")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--user", required=True, help="user id as it appears in the data")
    r.add_argument("-M", "--top", type=int, default=10)
    r.add_argument("--data")

    s = sub.add_parser("split", help="write train/valid/test files")
    _add_data_flags(s)
    s.add_argument("--out-dir", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("kind", choices=["explicit", "implicit"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    return parser


def resolve_run(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """Merge defaults, config file and flags; return the config and the set
    of keys the user set explicitly."""
    settings: dict = {}
    if getattr(args, "config", None):
        try:
            settings.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    for name in RUN_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    if settings.get("sep") in ("tab", "\\t"):
        settings["sep"] = "\t"
    try:
        run = RunConfig.from_dict(settings)
        run.validate(set(settings))
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    if run.data is None:
        raise UsageError("--data is required")
    if not Path(run.data).is_file():
        raise UsageError(f"dataset not found: {run.data}")
    return run, set(settings)


def _check_writable(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write to {path}")


def cmd_train(args) -> None:
    run, _ = resolve_run(args)
    _check_writable(args.checkpoint)
    out = open(args.log, "w", encoding="utf-8") if args.log else sys.stdout
    try:
        def emit(rec: dict) -> None:
            out.write(json.dumps(rec) + "\n")
            out.flush()

        with threadpool_limits(run.threads):
            run_train(run, args.checkpoint, emit)
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_evaluate(args) -> None:
    ck, run, prep = restore(args.checkpoint, args.data)
    metrics = set(args.metric or [])
    if run.mode == "explicit" and (metrics - {"rmse"} or args.cutoffs):
        raise UsageError("explicit checkpoints are evaluated with RMSE only")
    if run.mode == "implicit" and "rmse" in metrics:
        raise UsageError("implicit checkpoints are evaluated with HR/NDCG only")
    with threadpool_limits(run.threads):
        reports = evaluate_part(ck.params, prep, run, args.part, args.cutoffs)
    if metrics:
        reports = [r for r in reports if r.metric in metrics]
    if args.output:
        _check_writable(args.output)
        with open(args.output, "w", encoding="utf-8") as fh:
            write_reports(reports, fh, args.per_user)
    else:
        write_reports(reports, sys.stdout, args.per_user)


def cmd_recommend(args) -> None:
    if args.top < 1:
        raise UsageError("-M must be positive")
    ck, run, prep = restore(args.checkpoint, args.data)
    for item, score in recommend(ck, run, prep, args.user, args.top):
        sys.stdout.write(json.dumps({"item": item, "score": score}) + "\n")


def cmd_split(args) -> None:
    run, _ = resolve_run(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = split(load_ratings(run.data, run.sep), run.split_spec())
    for name, part in zip(("train", "valid", "test"), parts[:3]):
        write_ratings(part, out / f"{name}.tsv")
    sys.stdout.write(json.dumps({
        "event": "split", "train": parts.train.nnz, "valid": parts.valid.nnz,
        "test": parts.test.nnz, "excluded_users": parts.excluded_users,
    }) + "\n")


def cmd_generate(args) -> None:
    if args.kind == "explicit":
        m, _ = synthetic.low_rank_explicit(seed=args.seed)
    else:
        m, _ = synthetic.clustered_implicit(seed=args.seed)
    write_ratings(m, args.out)


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "split": cmd_split,
    "generate": cmd_generate,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ncae {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnknownUserError, CompatibilityError, NCAEError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ncae {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
