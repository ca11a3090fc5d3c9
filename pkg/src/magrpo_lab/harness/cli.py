"""``magrpo-lab`` command line: train, eval, analyze-game, export.

Exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..core import ContractError
from .config import ConfigError, parse_config, with_overrides
from .run import (
    CHECKPOINT_NAME,
    RunFailed,
    analyze_game,
    evaluate,
    export_plot_data,
    run_experiment,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _load(args):
    return with_overrides(parse_config(args.config), **{
        "seed": getattr(args, "seed", None),
        "train.episodes": getattr(args, "episodes", None),
        "eval.samples": getattr(args, "samples", None),
    })


def cmd_train(args) -> int:
    cfg = _load(args)
    res = run_experiment(cfg, args.out, record_time=args.wall_clock)
    print(f"wrote {res.episodes} episode records to {res.log_path}")
    print(f"checkpoint: {res.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / CHECKPOINT_NAME
    report = evaluate(ckpt, cfg)
    print(json.dumps(report.to_record(), indent=2) if args.json else report.format_text())
    return EXIT_OK


def cmd_analyze(args) -> int:
    report = analyze_game(_load(args))
    print(json.dumps(report.to_record(), indent=2) if args.json else report.format_table())
    return EXIT_OK


def cmd_export(args) -> int:
    window = args.moving_average
    if window is None and args.config:
        window = parse_config(args.config).export.moving_average
    summary = export_plot_data(args.log, args.out, window)
    for w in summary.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {summary.rows} rows to {args.out} (skipped {summary.skipped})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magrpo-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config and write logs + checkpoint")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--wall-clock", action="store_true",
                   help="record elapsed seconds per episode (logs stop being reproducible)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("config")
    p.add_argument("checkpoint", help="checkpoint file or run directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-game", help="equilibria vs joint optimum of a matrix game")
    p.add_argument("config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export", help="metrics log to CSV plot data")
    p.add_argument("log")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="take the moving-average window from this config")
    p.add_argument("--moving-average", type=int)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except RunFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ContractError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
