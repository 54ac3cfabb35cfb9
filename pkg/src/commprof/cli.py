"""Command-line entry points: `run` drives experiment series, `report`
computes metrics over written profiles and emits CSV and figure files."""

from __future__ import annotations

import argparse
import sys

from . import analysis, runner
from .model import ExperimentError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commprof",
        description="Communication-region profiling over a simulated message-passing runtime.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scaling experiment series")
    run_p.add_argument("--config", required=True, help="experiment JSON file")
    run_p.add_argument("--out", default=None, help="output directory (default: spec's output_dir)")
    run_p.add_argument("--trace", action="store_true",
                       help="write a per-run event trace (.trace.jsonl) next to each profile")
    run_p.add_argument("--per-rank", action="store_true",
                       help="retain per-rank region records in the profiles")
    run_p.add_argument("--concurrent", action="store_true",
                       help="run ranks on free-running threads (waives determinism)")
    run_p.add_argument("--override-rank-cap", action="store_true",
                       help="allow more than 512 simulated ranks")

    rep_p = sub.add_parser("report", help="analyze a set of profiles")
    rep_p.add_argument("--in", dest="source", required=True,
                       help="profile directory, glob, or file")
    rep_p.add_argument("--metric", required=True,
                       choices=["bytes-per-sec", "msgs-per-sec", "time-per-rank",
                                "bytes-per-level", "src-ranks-per-level"])
    rep_p.add_argument("--region", action="append", default=None,
                       help="region name (repeatable for time-per-rank)")
    rep_p.add_argument("--csv", default=None, help="write the table as CSV")
    rep_p.add_argument("--svg", default=None, help="render the table as a figure")
    rep_p.add_argument("--allow-mixed", action="store_true",
                       help="permit profiles from different benchmarks")
    rep_p.add_argument("--include-idle-ranks", action="store_true",
                       help="average src-ranks-per-level over all ranks, not just receivers")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        spec = runner.load_experiment(args.config)
        report = runner.run_experiment(
            spec,
            out_dir=args.out,
            trace=args.trace,
            per_rank=args.per_rank,
            deterministic=not args.concurrent,
            rank_cap=None if args.override_rank_cap else runner.sim.DEFAULT_RANK_CAP,
            log=print,
        )
    except (ExperimentError, runner.RunnerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{len(report.entries)} run(s) completed, {len(report.failures)} failed")
    return 0 if report.ok else 1


def _default_region(metric: str) -> list[str]:
    if metric in ("bytes-per-sec", "msgs-per-sec"):
        return ["halo_exchange"]
    return ["main"]


def _cmd_report(args: argparse.Namespace) -> int:
    regions = args.region or _default_region(args.metric)
    try:
        pset = analysis.load_profiles(args.source, allow_mixed=args.allow_mixed)
        for path, why in pset.rejected:
            print(f"warning: skipped {path}: {why}", file=sys.stderr)
        if args.metric == "bytes-per-sec":
            table = analysis.metric_bytes_per_sec(pset, regions[0])
        elif args.metric == "msgs-per-sec":
            table = analysis.metric_msgs_per_sec(pset, regions[0])
        elif args.metric == "time-per-rank":
            table = analysis.metric_avg_time_per_rank(pset, regions)
        elif args.metric == "bytes-per-level":
            table = analysis.metric_per_level(pset, "bytes_sent")
        else:
            table = analysis.metric_per_level(pset, "src_ranks_avg",
                                              include_idle=args.include_idle_ranks)
    except analysis.AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(analysis.format_table(table))
    if args.csv:
        print(f"csv written to {analysis.emit_csv(table, args.csv)}")
    if args.svg:
        from . import charts

        print(f"figure written to {charts.render_table(table, args.svg)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
