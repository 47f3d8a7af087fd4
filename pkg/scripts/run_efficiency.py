#!/usr/bin/env python3
"""Time-boxed comparison of the incremental pipeline against the blind
random baseline: same per-iteration seeds, same wall-clock budget per arm,
count who produces more non-empty-output test cases."""
from __future__ import annotations

import argparse
from pathlib import Path

from deopt.generator import FeatureProbs, GenConfig
from deopt.harness import CampaignConfig, run_campaign


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--minutes", type=float, default=5.0, help="budget per arm")
    parser.add_argument("--max-rules", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--p-head",
        type=float,
        default=0.15,
        help="head-reuse probability; high values force cross-rule structure",
    )
    parser.add_argument("--negation", type=float, default=0.4)
    parser.add_argument("--out", default="efficiency_out")
    args = parser.parse_args(argv)

    cfg = CampaignConfig(
        gen=GenConfig(
            max_rules=args.max_rules,
            seed=args.seed,
            p_head=args.p_head,
            p_empty=0.0,
            max_att=50,
            features=FeatureProbs(negation=args.negation),
        ),
        engine_source="embedded",
        iterations=None,
        duration_s=args.minutes * 60.0,
        workers=1,
        out_dir=args.out,
        baseline="random",
    )
    stats = run_campaign(cfg)

    ire = stats.nonempty.get("ire", 0)
    rand = stats.nonempty.get("random", 0)
    ratio = ire / rand if rand else float("inf")
    print(
        f"budget: {args.minutes:g} min per arm, max_rules={args.max_rules}, "
        f"p_head={args.p_head:g}, negation={args.negation:g}, seed={args.seed}"
    )
    print(
        f"incremental: {stats.iterations.get('ire', 0)} iterations, "
        f"{ire} non-empty test cases, {stats.retained.get('ire', 0)} rules retained"
    )
    print(
        f"random:      {stats.iterations.get('random', 0)} iterations, "
        f"{rand} non-empty test cases, {stats.retained.get('random', 0)} rules retained"
    )
    print(f"non-empty ratio: {ratio:.2f}x")
    print(f"stats: {Path(args.out) / 'stats.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
