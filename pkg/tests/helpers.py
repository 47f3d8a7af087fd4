"""Shared fixture programs and small builders used across the test files.

The regression programs here each pin one injected bug: the shape is the
smallest one where the optimized evaluation path diverges from naive
evaluation when that bug is switched on, and agrees otherwise.
"""
from __future__ import annotations

from deopt.datalog_ir import (
    Arith,
    Atom,
    Const,
    Constraint,
    Program,
    RelationDecl,
    Rule,
    SubsumptionRule,
    Value,
    Var,
    WILDCARD,
)

I = Value.of_int
U = Value.of_uint
F = Value.of_float
S = Value.of_symbol


def decl(name: str, kinds, **kw) -> RelationDecl:
    return RelationDecl(name, tuple((f"x{i}", k) for i, k in enumerate(kinds)), **kw)


def show(store, rel: str) -> list:
    return store.sorted_tuples(rel)


def two_hop_self_join() -> Program:
    """Shared-delta regression: two rules feed `edge` in the same round and
    the two-hop join over it only sees both when the per-relation delta is
    built from every contributing rule.  Correct output {0, 1}; the
    semi-naive delta bug yields {1}."""
    return Program(
        decls={
            "inp": decl("inp", ("int",), is_input=True),
            "node": decl("node", ("int",)),
            "edge": decl("edge", ("int", "int")),
            "result": decl("result", ("int",)),
        },
        facts=[("inp", (I(1),))],
        rules=[
            Rule(0, Atom("node", (Var("X"),)), (Atom("inp", (Var("X"),)),)),
            Rule(1, Atom("edge", (Var("X"), Var("X"))), (Atom("node", (Var("X"),)),)),
            Rule(2, Atom("edge", (Const(I(0)), Var("X"))), (Atom("node", (Var("X"),)),)),
            Rule(
                3,
                Atom("result", (Var("C"),)),
                (Atom("edge", (Var("C"), Var("A"))), Atom("edge", (Var("A"), WILDCARD))),
            ),
        ],
        output_rel="result",
    )


def survivor_filter() -> Program:
    """Subsumption regression: keep only the largest `eo` value.  Correct
    survivors {7}; skipping the deletion pass leaves {3, 6, 7}."""
    return Program(
        decls={
            "buy": decl("buy", ("int",), is_input=True),
            "eo": decl("eo", ("int",)),
        },
        facts=[("buy", (I(6),)), ("buy", (I(7),)), ("buy", (I(3),))],
        rules=[Rule(0, Atom("eo", (Var("E"),)), (Atom("buy", (Var("E"),)),))],
        subsumptions=[
            SubsumptionRule(
                1,
                "eo",
                (Var("E1"),),
                (Var("E2"),),
                (Constraint("<", Var("E1"), Var("E2")),),
            )
        ],
        output_rel="eo",
    )


def keep_max_per_key() -> Program:
    """Facts-only subsumption: for each key keep the row with the largest
    second column.  {(1,-2),(1,9)} collapses to {(1,9)}."""
    return Program(
        decls={"kdof": decl("kdof", ("int", "int"), is_input=True)},
        facts=[("kdof", (I(1), I(-2))), ("kdof", (I(1), I(9)))],
        subsumptions=[
            SubsumptionRule(
                0,
                "kdof",
                (Var("B"), Var("A1")),
                (Var("B"), Var("A2")),
                (Constraint("<", Var("A1"), Var("A2")),),
            )
        ],
        output_rel="kdof",
    )


def signed_zero_join() -> Program:
    """Signed-zero regression: `A >= 0.0` under the bit-level total order
    excludes -0.0; the injected rewrite compares numerically inside
    generated filter rules and lets the extra (-0.0, "x") tuple through."""
    return Program(
        decls={
            "a": decl("a", ("float", "symbol"), is_input=True),
            "filt": decl("filt", ("float", "symbol")),
            "key": decl("key", ("symbol",)),
            "joinr": decl("joinr", ("float", "symbol")),
            "out2": decl("out2", ("float", "symbol")),
        },
        facts=[("a", (F(-0.0), S("x"))), ("a", (F(0.0), S("x")))],
        rules=[
            Rule(
                0,
                Atom("filt", (Var("A"), Var("B"))),
                (Atom("a", (Var("A"), Var("B"))), Constraint(">=", Var("A"), Const(F(0.0)))),
            ),
            Rule(1, Atom("key", (Var("F"),)), (Atom("a", (WILDCARD, Var("F"))),)),
            Rule(
                2,
                Atom("joinr", (Var("F"), Var("C"))),
                (Atom("key", (Var("C"),)), Atom("filt", (Var("F"), Var("C")))),
            ),
            Rule(3, Atom("out2", (Var("A"), Var("B"))), (Atom("joinr", (Var("A"), Var("B"))),)),
        ],
        output_rel="out2",
    )


def chained_filter() -> Program:
    """Inlining regression: `b` restricts `a` by membership in `x` and `c`
    copies `b`.  Inlining `b` into `c` must keep both body literals; the
    drop-literal bug loses the `x` test and lets {2} through."""
    return Program(
        decls={
            "a": decl("a", ("int",), is_input=True),
            "x": decl("x", ("int",), is_input=True),
            "b": decl("b", ("int",)),
            "c": decl("c", ("int",)),
        },
        facts=[("a", (I(1),)), ("a", (I(2),)), ("x", (I(1),))],
        rules=[
            Rule(0, Atom("b", (Var("X"),)), (Atom("a", (Var("X"),)), Atom("x", (Var("X"),)))),
            Rule(1, Atom("c", (Var("X"),)), (Atom("b", (Var("X"),)),)),
        ],
        output_rel="c",
    )


def guided_recursion() -> Program:
    """The worked oracle example: a negation stratum feeds a two-rule
    positive cycle.  Strata come out as [{3}, {0}, {1, 2}], the cycle
    reaches its fixpoint in round 2 with c = d = {3}, and the oracle view
    of `b` is {1, 2}."""
    return Program(
        decls={
            "a": decl("a", ("int",), is_input=True),
            "b": decl("b", ("int",), is_input=True),
            "c": decl("c", ("int",)),
            "d": decl("d", ("int",)),
        },
        facts=[
            ("a", (I(1),)),
            ("a", (I(2),)),
            ("a", (I(3),)),
            ("b", (I(1),)),
        ],
        rules=[
            Rule(
                0,
                Atom("c", (Var("X"),)),
                (Atom("a", (Var("X"),)), Atom("b", (Var("X"),), negated=True)),
            ),
            Rule(1, Atom("d", (Var("X"),)), (Atom("c", (Var("X"),)),)),
            Rule(2, Atom("c", (Var("X"),)), (Atom("d", (Var("X"),)),)),
            Rule(3, Atom("b", (Var("X"),)), (Atom("a", (Var("X"),)), Constraint("=", Var("X"), Const(I(2))))),
        ],
        output_rel="b",
    )


def divergent_pair() -> Program:
    """Mutual recursion that never closes: each round feeds A+1 back in, so
    the fact set grows forever and the round cap has to fire."""
    return Program(
        decls={
            "seed": decl("seed", ("int",), is_input=True),
            "a": decl("a", ("int",)),
            "b": decl("b", ("int",)),
        },
        facts=[("seed", (I(0),))],
        rules=[
            Rule(0, Atom("b", (Var("A"),)), (Atom("seed", (Var("A"),)),)),
            Rule(1, Atom("a", (Arith("+", (Var("A"), Const(I(1)))),)), (Atom("b", (Var("A"),)),)),
            Rule(2, Atom("b", (Var("A"),)), (Atom("a", (Var("A"),)),)),
        ],
        output_rel="a",
    )


def transitive_closure() -> Program:
    return Program(
        decls={
            "edge": decl("edge", ("int", "int"), is_input=True),
            "path": decl("path", ("int", "int")),
        },
        facts=[("edge", (I(1), I(2))), ("edge", (I(2), I(3)))],
        rules=[
            Rule(0, Atom("path", (Var("X"), Var("Y"))), (Atom("edge", (Var("X"), Var("Y"))),)),
            Rule(
                1,
                Atom("path", (Var("X"), Var("Z"))),
                (Atom("path", (Var("X"), Var("Y"))), Atom("edge", (Var("Y"), Var("Z")))),
            ),
        ],
        output_rel="path",
    )


def state_for(program: Program):
    """Iteration state seeded with a program's declarations and facts but
    none of its rules; candidates are then fed in one at a time."""
    import random

    from deopt.generator import TestIterationState
    from deopt.oracle import StableFacts
    from deopt.stratify import PrecedenceGraph

    base = Program(decls=dict(program.decls), facts=list(program.facts))
    state = TestIterationState(
        program=base,
        graph=PrecedenceGraph(),
        stable=StableFacts(edb=base.edb_store()),
    )
    return state, random.Random(0)


def drive_fixture(program: Program, engine, p_empty: float = 1.0, max_iter: int = 100):
    """Replay a fixture through the incremental pipeline: extend rule by
    rule against the engine's reference runs, then check each grown prefix's
    optimized run against the oracle.  Returns (rule_index, bug_dict, state)
    for the first discrepancy, or (None, None, state) when the whole
    program passes."""
    from deopt.generator import GenConfig, try_extend
    from deopt.harness import check_discrepancy

    cfg = GenConfig(p_empty=p_empty, max_iter=max_iter)
    state, rng = state_for(program)
    for node in program.all_rule_nodes():
        res = try_extend(state, cfg, engine, rng, candidate=(node, {}))
        assert res.kind == "retained", (node.rule_id, res.kind, res.detail)
        outcome = engine.run(state.program, role="optimized")
        bug = check_discrepancy(res.oracle, outcome, state.program)
        if bug is not None:
            return node.rule_id, bug, state
    return None, None, state
