"""Command-line entry point.

Subcommands: run, ttt, ablate-k, sweep, plotdata, theory. Exit codes:
0 success, 1 failed theory check, 2 divergence detected, 3 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, theory
from .config import load_config
from .errors import ConfigError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def _collect_logs(logs_arg):
    paths = []
    for entry in logs_arg:
        p = Path(entry)
        if p.is_dir():
            paths.extend(sorted(p.rglob("*.log")))
        else:
            paths.append(p)
    if not paths:
        raise ConfigError(f"no log files under {logs_arg}")
    return paths


def _cmd_run(args):
    cfg = load_config(args.config)
    result = harness.run_comparison(cfg, args.out)
    for path in result["logs"]:
        print(path)
    if result["diverged"]:
        print("divergence detected; partial logs retained", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_ttt(args):
    logs = _collect_logs(args.logs)
    name = args.name or Path(args.logs[0]).name
    if args.thresholds:
        thresholds = [float(x) for x in args.thresholds.split(",")]
        text = harness.threshold_sweep(logs, thresholds)
        out = Path(args.out) / "tables" / f"{name}-threshold-sweep.txt"
    else:
        table = harness.time_to_threshold(logs, threshold=args.threshold)
        text = harness.format_ttt(table, name=name)
        out = Path(args.out) / "tables" / f"{name}-time-to-threshold.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_ablate_k(args):
    cfg = load_config(args.config)
    ks = [int(x) for x in args.ks.split(",")]
    result = harness.k_ablation(cfg, ks=ks, out_root=args.out)
    text = harness.format_ttt(result["table"], name=result["name"])
    out = Path(args.out) / "tables" / f"{result['name']}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    return EXIT_DIVERGED if result["diverged"] else EXIT_OK


def _cmd_sweep(args):
    cfg = load_config(args.config)
    etas = [float(x) for x in args.etas.split(",")]
    ms = [int(x) for x in args.ms.split(",")]
    result = harness.sensitivity_sweep(cfg, etas, ms, out_root=args.out)
    text = harness.format_sweep(result)
    out = Path(args.out) / "tables" / f"{result['name']}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    return EXIT_DIVERGED if result["diverged"] else EXIT_OK


def _cmd_plotdata(args):
    logs = _collect_logs(args.logs)
    name = args.name or Path(args.logs[0]).name
    out = Path(args.out) / "figures-data" / f"{name}-loss.tsv"
    harness.emit_plot_data(logs, out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_theory(args):
    reports = theory.run_theory_suite(seed=args.seed)
    out_dir = Path(args.out) / "logs" / "theory"
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / "reports.jsonl"
    with open(out, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")
    failed = 0
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        failed += not rep.passed
        print(f"[{status}] {rep.check}")
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK if failed == 0 else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cao",
        description="Curvature-adaptive optimizer benchmark harness",
    )
    parser.add_argument("--out", default=".", help="output root directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a multi-optimizer comparison from a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ttt", help="time-to-threshold table from logs")
    p.add_argument("--logs", nargs="+", required=True,
                   help="log files or directories")
    p.add_argument("--threshold", type=float, default=None,
                   help="override the threshold recorded in the logs")
    p.add_argument("--thresholds", default=None,
                   help="comma-separated grid; emits one row per threshold")
    p.add_argument("--name", default=None)
    p.set_defaults(func=_cmd_ttt)

    p = sub.add_parser("ablate-k", help="re-run the config across sketch ranks")
    p.add_argument("--config", required=True)
    p.add_argument("--ks", default="0,1,3,5")
    p.set_defaults(func=_cmd_ablate_k)

    p = sub.add_parser("sweep", help="damping x refresh-interval sensitivity grid")
    p.add_argument("--config", required=True)
    p.add_argument("--etas", default="1e-3,1e-2,1e-1")
    p.add_argument("--ms", default="200,400,800")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plotdata", help="emit loss-vs-step mean/std bands from logs")
    p.add_argument("--logs", nargs="+", required=True)
    p.add_argument("--name", default=None)
    p.set_defaults(func=_cmd_plotdata)

    p = sub.add_parser("theory", help="run the analysis checks and report pass/fail")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_theory)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
