"""Command-line interface.

Subcommands: figure1, train-lm, retrofit, theory-sweep, dump-weights,
verify.  Exit codes: 0 success, 1 verification failure, 2 configuration
error.  ``GRNLAB_THREADS`` caps verify-suite parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .runs import (dump_weights, figure1_config, run_figure1, run_retrofit,
                   run_toy_lm, toylm_config)
from .theory import figure4_sweep, sweep_to_csv
from .verify import format_report, run_verify, save_report


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "out", None) is not None:
        config.out_dir = args.out
    if getattr(args, "arch", None) is not None:
        config.arch = args.arch
    if getattr(args, "k", None) is not None:
        config.model.k = args.k
    if getattr(args, "steps", None) is not None:
        config.steps = args.steps
    config.validate()
    return config


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--arch", help="override the architecture")
    p.add_argument("--k", type=int, help="first/last-k stack truncation")
    p.add_argument("--steps", type=int, help="override the step count")


def _cmd_figure1(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        task = ("linear_random_map" if args.task == "random-map"
                else "linear_identity")
        config = figure1_config(task, args.arch or "resnet",
                                args.seed if args.seed is not None else 1,
                                args.out or "runs/figure1")
    config = _apply_overrides(config, args)
    out = run_figure1(config)
    print(f"wrote {out / 'metrics.jsonl'}")
    return 0


def _cmd_train_lm(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        if not args.corpus:
            raise ConfigError("train-lm needs --config or --corpus")
        config = toylm_config(args.arch or "transformer",
                              args.seed if args.seed is not None else 1,
                              args.out or "runs/toy_lm", args.corpus)
    config = _apply_overrides(config, args)
    out = run_toy_lm(config)
    print(f"wrote {out / 'metrics.jsonl'}")
    return 0


def _cmd_retrofit(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
    else:
        if not args.corpus:
            raise ConfigError("retrofit needs --config or --corpus")
        config = toylm_config("dca", args.seed if args.seed is not None else 1,
                              args.out or "runs/retrofit", args.corpus)
        config.arch = "dca"
    config = _apply_overrides(config, args)
    out = run_retrofit(config, args.checkpoint)
    print(f"wrote {out / 'retrofit.json'}")
    return 0


def _cmd_theory_sweep(args) -> int:
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        d_grid = doc["d"]
        r_grid = doc["r_star"]
        pairs = [tuple(p) for p in doc["lambda_pairs"]]
    else:
        # stock grids: rank sweep at (5, 10), plus a kappa sweep at r* = 50
        d_grid = [100, 500]
        r_grid = list(range(10, 91, 10))
        pairs = [(5.0, 10.0)]
    rows = figure4_sweep(d_grid, r_grid, pairs)
    if not args.config:
        rows += figure4_sweep([100, 500], [50],
                              [(k / 10.0 * 10.0, 10.0) for k in range(1, 10)])
    csv_text = sweep_to_csv(rows)
    out = Path(args.out or "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def _cmd_dump_weights(args) -> int:
    rows = dump_weights(args.checkpoint, args.out or "weights.csv")
    print(f"wrote {args.out or 'weights.csv'} ({len(rows)} records)")
    return 0


def _cmd_verify(args) -> int:
    report = run_verify(args.suite, threads=args.threads)
    print(format_report(report))
    if args.out:
        save_report(report, args.out)
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grnlab",
        description="Generalized residual networks, deep cross-attention, "
                    "and the excess-risk theory engine.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("figure1", help="low-rank linear identity/random-map runs")
    _common_flags(p)
    p.add_argument("--task", choices=("identity", "random-map"),
                   default="identity")
    p.set_defaults(func=_cmd_figure1)

    p = sub.add_parser("train-lm", help="train the toy byte-level LM")
    _common_flags(p)
    p.add_argument("--corpus", help="byte corpus file")
    p.set_defaults(func=_cmd_train_lm)

    p = sub.add_parser("retrofit", help="wrap a trained baseline in DCA and continue")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True, help="baseline GRNCKPT1 file")
    p.add_argument("--corpus", help="byte corpus file")
    p.set_defaults(func=_cmd_retrofit)

    p = sub.add_parser("theory-sweep", help="emit the gain/threshold CSV")
    p.add_argument("--config", help="JSON grids: {d, r_star, lambda_pairs}")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=_cmd_theory_sweep)

    p = sub.add_parser("dump-weights", help="combine-weight statistics CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=_cmd_dump_weights)

    p = sub.add_parser("verify", help="run oracle verification suites")
    p.add_argument("suite", nargs="?", default="all",
                   choices=("all", "grads", "theory", "stein", "equivalence"))
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--threads", type=int, help="suite parallelism cap")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
