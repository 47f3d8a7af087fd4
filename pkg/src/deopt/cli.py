"""Command line front end.

run drives a fuzzing campaign against an engine, reduce shrinks a saved
report, stats derives summary tables from a campaign directory.  Exit
codes: 0 clean, 2 bugs were found, 1 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from collections import defaultdict
from pathlib import Path

from .generator import GenConfig
from .harness import CampaignConfig, reduce_report, run_campaign
from .refengine import BUG_CATALOG


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deopt")
    sub = parser.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run", help="fuzz an engine")
    run_p.add_argument("--engine", required=True, help="engine spec file or 'embedded'")
    run_p.add_argument("--inject", default="", help="comma-separated bug ids (embedded)")
    run_p.add_argument("--max-rules", type=int, default=100)
    run_p.add_argument("--max-att", default="inf")
    run_p.add_argument("--p-empty", type=float, default=0.1)
    run_p.add_argument("--p-head", type=float, default=0.02)
    run_p.add_argument("--max-iter", type=int, default=100)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--iterations", type=int)
    run_p.add_argument("--duration", type=float, help="seconds")
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument("--mode", choices=["ire", "strip"], default="ire")
    run_p.add_argument("--baseline", choices=["random"])
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--cycle-flags", action="store_true",
                       help="walk all optimization flag combinations across iterations")

    reduce_p = sub.add_parser("reduce", help="shrink a saved report")
    reduce_p.add_argument("--report", required=True)

    stats_p = sub.add_parser("stats", help="derive summary tables")
    stats_p.add_argument("--out", required=True)
    return parser


def _cmd_run(args) -> int:
    try:
        if (args.iterations is None) == (args.duration is None):
            raise ValueError("give exactly one of --iterations and --duration")
        max_att = float("inf") if args.max_att == "inf" else float(args.max_att)
        if max_att != float("inf") and (max_att < 1 or max_att != int(max_att)):
            raise ValueError("--max-att must be a positive integer or 'inf'")
        inject = tuple(b for b in args.inject.split(",") if b)
        for bug in inject:
            if bug not in BUG_CATALOG:
                raise ValueError(
                    f"unknown bug id {bug!r}; known: {', '.join(sorted(BUG_CATALOG))}"
                )
        gen = GenConfig(
            max_rules=args.max_rules,
            max_att=max_att,
            p_empty=args.p_empty,
            p_head=args.p_head,
            max_iter=args.max_iter,
            seed=args.seed,
        )
        cfg = CampaignConfig(
            gen=gen,
            engine_source=args.engine,
            inject=inject,
            mode="ire_plus_strip" if args.mode == "strip" else "ire",
            iterations=args.iterations,
            duration_s=args.duration,
            workers=args.workers,
            out_dir=args.out,
            baseline=args.baseline,
            cycle_flags=args.cycle_flags,
        )
        stats = run_campaign(cfg)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    total = sum(stats.iterations.values())
    bugs = sum(stats.bug_kinds.values())
    print(f"{total} iterations, {bugs} bug reports -> {stats.out_dir}")
    for kind, count in sorted(stats.bug_kinds.items()):
        print(f"  {kind}: {count}")
    return 2 if stats.found_bugs else 0


def _cmd_reduce(args) -> int:
    rdir = Path(args.report)
    if not (rdir / "report.json").exists():
        print(f"error: no report.json under {rdir}", file=sys.stderr)
        return 1
    data = reduce_report(rdir)
    if not data["reproducible"]:
        print("not reproducible from scratch; report flagged")
        return 0
    reduced = data["reduced"]
    n_rules = len(reduced["rules"]) + len(reduced["subsumptions"])
    print(f"reduced to {n_rules} rules -> {rdir / 'reduced.dl'}")
    return 0


def _cmd_stats(args) -> int:
    out = Path(args.out)
    stats_file = out / "stats.csv"
    if not stats_file.exists():
        print(f"error: no stats.csv under {out}", file=sys.stderr)
        return 1
    with stats_file.open() as fh:
        rows = list(csv.DictReader(fh))
    derived = out / "stats_derived"
    derived.mkdir(exist_ok=True)

    by_arm: dict[str, list[dict]] = defaultdict(list)
    for row in rows:
        by_arm[row["arm"]].append(row)
    arm_rows = []
    for arm in sorted(by_arm):
        group = by_arm[arm]
        n = len(group)
        retained = sum(int(r["retained"]) for r in group)
        nonempty = sum(int(r["output_nonempty"]) for r in group)
        bugs = sum(1 for r in group if r["bug_kind"])
        cycles = sum(int(r["cycle_count"]) for r in group)
        arm_rows.append(
            {
                "arm": arm,
                "iterations": n,
                "retained_total": retained,
                "retained_mean": repr(retained / n if n else 0.0),
                "nonempty": nonempty,
                "bug_reports": bugs,
                "cycle_count_mean": repr(cycles / n if n else 0.0),
            }
        )
    with (derived / "by_arm.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=[
                "arm", "iterations", "retained_total", "retained_mean",
                "nonempty", "bug_reports", "cycle_count_mean",
            ],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(arm_rows)

    hist: dict[int, int] = defaultdict(int)
    for row in rows:
        hist[int(row["retained"])] += 1
    with (derived / "rules_histogram.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["retained_rules", "iterations"])
        for k in sorted(hist):
            writer.writerow([k, hist[k]])

    kinds: dict[str, int] = defaultdict(int)
    for row in rows:
        if row["bug_kind"]:
            kinds[row["bug_kind"]] += 1
    with (derived / "bug_kinds.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "count"])
        for k in sorted(kinds):
            writer.writerow([k, kinds[k]])

    summary_path = out / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        print(json.dumps(summary, sort_keys=True, indent=2))
    print(f"derived tables -> {derived}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.cmd == "run":
        return _cmd_run(args)
    if args.cmd == "reduce":
        return _cmd_reduce(args)
    return _cmd_stats(args)


if __name__ == "__main__":
    sys.exit(main())
