#!/usr/bin/env python3
"""Grow an engine's semantic-error catalog from deliberate trigger runs.

Each probe program provokes one error class (division by zero, modulo by
zero, negation inside recursion).  Errors the adapter already recognizes
are reported as cataloged; unrecognized failures produce suggested regex
patterns, and --out writes the merged catalog JSON for the engine."""
from __future__ import annotations

import argparse
import json
import re
import tempfile
from pathlib import Path

from deopt.adapters import (
    CrashOutcome,
    FactsOutcome,
    SemanticErrorOutcome,
    build_adapter,
    load_engine_spec,
)
from deopt.datalog_ir import Arith, Atom, Const, Program, RelationDecl, Rule, Value, Var


def unary(name: str, **kw) -> RelationDecl:
    return RelationDecl(name, (("x0", "int"),), **kw)


def probe_arith(op: str) -> Program:
    p = Program(
        decls={"base": unary("base", is_input=True), "out": unary("out")},
        facts=[("base", (Value.of_int(1),))],
    )
    p.rules.append(
        Rule(0, Atom("out", (Arith(op, (Var("A"), Const(Value.of_int(0)))),)),
             (Atom("base", (Var("A"),)),))
    )
    p.output_rel = "out"
    return p


def probe_unstratifiable() -> Program:
    p = Program(
        decls={"base": unary("base", is_input=True), "p": unary("p"), "q": unary("q")},
        facts=[("base", (Value.of_int(1),))],
    )
    x = Var("X")
    p.rules.append(Rule(0, Atom("p", (x,)), (Atom("base", (x,)), Atom("q", (x,), negated=True))))
    p.rules.append(Rule(1, Atom("q", (x,)), (Atom("p", (x,)),)))
    p.output_rel = "p"
    return p


PROBES = [
    ("div_zero", lambda: probe_arith("/")),
    ("mod_zero", lambda: probe_arith("%")),
    ("negation_in_recursion", probe_unstratifiable),
]


def suggest_pattern(outcome: CrashOutcome) -> str | None:
    for line in (outcome.stderr + "\n" + outcome.stdout).splitlines():
        line = line.strip()
        if line:
            return re.escape(line[:80])
    return None


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--engine", default="embedded", help="engine spec file or 'embedded'")
    parser.add_argument("--out", help="write the merged catalog JSON here")
    args = parser.parse_args(argv)

    spec = load_engine_spec(args.engine)
    suggestions: list[str] = []
    with tempfile.TemporaryDirectory(prefix="probe_") as tmp:
        adapter = build_adapter(spec, Path(tmp))
        for name, build in PROBES:
            outcome = adapter.run(build(), role="optimized", tag=f"probe_{name}")
            if isinstance(outcome, SemanticErrorOutcome):
                status = (
                    f"cataloged as {outcome.matched!r}"
                    if outcome.matched
                    else f"semantic error, no pattern: {outcome.message[:70]!r}"
                )
            elif isinstance(outcome, CrashOutcome):
                pattern = suggest_pattern(outcome)
                if pattern:
                    suggestions.append(pattern)
                    status = f"uncataloged failure; suggest pattern {pattern!r}"
                else:
                    status = f"silent failure, exit {outcome.returncode}"
            elif isinstance(outcome, FactsOutcome):
                status = "no error raised (engine tolerates this probe)"
            else:
                status = type(outcome).__name__
            print(f"{name:24s} {status}")

    merged = sorted(set(spec.error_catalog) | set(suggestions))
    if args.out:
        Path(args.out).write_text(
            json.dumps(
                {"comment": f"probed catalog for {spec.dialect_name}", "patterns": merged},
                indent=2,
            )
            + "\n"
        )
        print(f"\nwrote {len(merged)} patterns ({len(suggestions)} new) -> {args.out}")
    elif suggestions:
        print(f"\n{len(suggestions)} new patterns found; pass --out to write the catalog")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
