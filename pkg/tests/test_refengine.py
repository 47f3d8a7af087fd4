"""Embedded engine: both evaluation paths, rewrites, injected bugs, budgets."""
import random

import pytest

from deopt.datalog_ir import (
    Atom,
    Const,
    Constraint,
    Program,
    Rule,
    SubsumptionRule,
    Var,
    diff_fact_sets,
)
from deopt.generator import GenConfig, gen_candidate_rule, gen_skeleton
from deopt.refengine import (
    BUG_INLINE_DROP_LITERAL,
    BUG_MAGIC_NEGZERO,
    BUG_SEMINAIVE_DELTA,
    BUG_SUBSUME_UNDER_MAGIC,
    EvalTimeout,
    MAX_BINDINGS,
    MAX_SUBSUMPTION_FACTS,
    OptConfig,
    Unstratifiable,
    evaluate,
    evaluate_naive,
    inline_rewrite,
    magic_rewrite,
    relation_strata,
)
from helpers import (
    F,
    I,
    S,
    chained_filter,
    decl,
    guided_recursion,
    keep_max_per_key,
    show,
    signed_zero_join,
    survivor_filter,
    transitive_closure,
    two_hop_self_join,
)

ALL_COMBOS = [
    OptConfig(bool(bits & 1), bool(bits & 2), bool(bits & 4)) for bits in range(8)
]


# --- core semantics ---------------------------------------------------------

def test_transitive_closure_both_paths():
    p = transitive_closure()
    expected = [(I(1), I(2)), (I(1), I(3)), (I(2), I(3))]
    assert show(evaluate_naive(p, p.edb_store()), "path") == expected
    for opt in ALL_COMBOS:
        assert show(evaluate(p, p.edb_store(), opt), "path") == expected


def test_stratified_negation():
    p = Program(
        decls={
            "a": decl("a", ("int",), is_input=True),
            "b": decl("b", ("int",), is_input=True),
            "c": decl("c", ("int",)),
        },
        facts=[("a", (I(1),)), ("a", (I(2),)), ("a", (I(3),)), ("b", (I(1),)), ("b", (I(2),))],
        rules=[
            Rule(
                0,
                Atom("c", (Var("X"),)),
                (Atom("a", (Var("X"),)), Atom("b", (Var("X"),), negated=True)),
            )
        ],
    )
    assert show(evaluate_naive(p, p.edb_store()), "c") == [(I(3),)]
    assert show(evaluate(p, p.edb_store(), OptConfig(True, True, True)), "c") == [(I(3),)]


def test_negation_inside_recursion_rejected():
    p = Program(
        decls={
            "c": decl("c", ("int",)),
            "d": decl("d", ("int",)),
            "e": decl("e", ("int",), is_input=True),
        },
        facts=[("e", (I(1),))],
        rules=[
            Rule(0, Atom("d", (Var("X"),)), (Atom("c", (Var("X"),)),)),
            Rule(
                1,
                Atom("c", (Var("X"),)),
                (
                    Atom("e", (Var("X"),)),
                    Atom("c", (Var("X"),)),
                    Atom("d", (Var("X"),), negated=True),
                ),
            ),
        ],
    )
    with pytest.raises(Unstratifiable):
        evaluate_naive(p, p.edb_store())
    with pytest.raises(Unstratifiable):
        evaluate(p, p.edb_store(), OptConfig())


def test_relation_strata_respects_negation():
    layers = relation_strata(guided_recursion())
    pos = {rel: i for i, layer in enumerate(layers) for rel in layer}
    assert pos["b"] < pos["c"]
    assert pos["c"] <= pos["d"] and pos["d"] <= pos["c"]


def test_input_relation_may_also_be_derived():
    # EDB facts for b plus a rule feeding it coexist
    p = guided_recursion()
    store = evaluate_naive(p, p.edb_store())
    assert show(store, "b") == [(I(1),), (I(2),)]
    assert show(store, "c") == [(I(3),)]
    assert show(store, "d") == [(I(3),)]


def test_guided_recursion_all_combos_agree():
    p = guided_recursion()
    want = evaluate_naive(p, p.edb_store())
    for opt in ALL_COMBOS:
        assert evaluate(p, p.edb_store(), opt) == want


# --- shared-delta regression ------------------------------------------------

def test_shared_delta_regression():
    p = two_hop_self_join()
    expected = [(I(0),), (I(1),)]
    assert show(evaluate_naive(p, p.edb_store()), "result") == expected
    assert show(evaluate(p, p.edb_store(), OptConfig()), "result") == expected
    bad = evaluate(
        p, p.edb_store(), OptConfig(injected_bugs=frozenset({BUG_SEMINAIVE_DELTA}))
    )
    assert show(bad, "result") == [(I(1),)]


def test_shared_delta_bug_inert_without_sibling_rules():
    # a single rule per relation leaves nothing for the delta bug to drop
    p = transitive_closure()
    bad = evaluate(
        p, p.edb_store(), OptConfig(injected_bugs=frozenset({BUG_SEMINAIVE_DELTA}))
    )
    assert bad == evaluate_naive(p, p.edb_store())


# --- subsumption ------------------------------------------------------------

def test_subsumption_keeps_maximum():
    p = survivor_filter()
    assert show(evaluate_naive(p, p.edb_store()), "eo") == [(I(7),)]
    assert show(evaluate(p, p.edb_store(), OptConfig()), "eo") == [(I(7),)]


def test_subsumption_on_facts_only_relation():
    p = keep_max_per_key()
    assert show(evaluate_naive(p, p.edb_store()), "kdof") == [(I(1), I(9))]
    assert show(evaluate(p, p.edb_store(), OptConfig(True, True, True)), "kdof") == [
        (I(1), I(9))
    ]


def test_subsumption_skipped_under_magic_bug():
    p = survivor_filter()
    buggy = evaluate(
        p,
        p.edb_store(),
        OptConfig(
            enable_magic=True,
            enable_subsumption=True,
            injected_bugs=frozenset({BUG_SUBSUME_UNDER_MAGIC}),
        ),
    )
    assert show(buggy, "eo") == [(I(3),), (I(6),), (I(7),)]


def test_subsume_bug_dormant_when_magic_cannot_fire():
    # no defining rules for the output: the magic rewrite is the identity,
    # so the buggy skip condition never triggers.  This is what keeps
    # single-rule reference programs immune.
    p = Program(
        decls={"eo": decl("eo", ("int",), is_input=True)},
        facts=[("eo", (I(6),)), ("eo", (I(7),)), ("eo", (I(3),))],
        subsumptions=[
            SubsumptionRule(
                0,
                "eo",
                (Var("E1"),),
                (Var("E2"),),
                (Constraint("<", Var("E1"), Var("E2")),),
            )
        ],
        output_rel="eo",
    )
    buggy = evaluate(
        p,
        p.edb_store(),
        OptConfig(
            enable_magic=True,
            enable_subsumption=True,
            injected_bugs=frozenset({BUG_SUBSUME_UNDER_MAGIC}),
        ),
    )
    assert show(buggy, "eo") == [(I(7),)]


# --- signed zero ------------------------------------------------------------

def test_signed_zero_regression():
    p = signed_zero_join()
    expected = [(F(0.0), S("x"))]
    assert show(evaluate_naive(p, p.edb_store()), "out2") == expected
    assert show(evaluate(p, p.edb_store(), OptConfig(enable_magic=True)), "out2") == expected
    bad = evaluate(
        p, p.edb_store(), OptConfig(injected_bugs=frozenset({BUG_MAGIC_NEGZERO}))
    )
    assert show(bad, "out2") == [(F(-0.0), S("x")), (F(0.0), S("x"))]
    d = diff_fact_sets(evaluate_naive(p, p.edb_store()), bad, "out2")
    assert d.only_in_b == ((F(-0.0), S("x")),)


def test_signed_zero_bug_dormant_in_single_rule_program():
    p = Program(
        decls={
            "a": decl("a", ("float", "symbol"), is_input=True),
            "filt": decl("filt", ("float", "symbol")),
        },
        facts=[("a", (F(-0.0), S("x"))), ("a", (F(0.0), S("x")))],
        rules=[
            Rule(
                0,
                Atom("filt", (Var("A"), Var("B"))),
                (Atom("a", (Var("A"), Var("B"))), Constraint(">=", Var("A"), Const(F(0.0)))),
            )
        ],
        output_rel="filt",
    )
    r = evaluate(p, p.edb_store(), OptConfig(injected_bugs=frozenset({BUG_MAGIC_NEGZERO})))
    assert show(r, "filt") == [(F(0.0), S("x"))]


# --- inlining ---------------------------------------------------------------

def test_inline_regression():
    p = chained_filter()
    assert show(evaluate_naive(p, p.edb_store()), "c") == [(I(1),)]
    ok = evaluate(p, p.edb_store(), OptConfig(enable_inline=True))
    assert show(ok, "c") == [(I(1),)]
    bad = evaluate(
        p,
        p.edb_store(),
        OptConfig(enable_inline=True, injected_bugs=frozenset({BUG_INLINE_DROP_LITERAL})),
    )
    assert show(bad, "c") == [(I(1),), (I(2),)]


def test_inline_bug_needs_inlining_enabled():
    p = chained_filter()
    off = evaluate(
        p, p.edb_store(), OptConfig(injected_bugs=frozenset({BUG_INLINE_DROP_LITERAL}))
    )
    assert off == evaluate_naive(p, p.edb_store())


def test_inline_rewrite_preserves_semantics_when_correct():
    p = chained_filter()
    q = inline_rewrite(p)
    assert show(evaluate_naive(q, p.edb_store()), "c") == [(I(1),)]


# --- magic rewrite ----------------------------------------------------------

def test_magic_rewrite_fires_and_preserves_results():
    p = Program(
        decls={
            "inr": decl("inr", ("int",), is_input=True),
            "out": decl("out", ("int",)),
        },
        facts=[("inr", (I(1),))],
        rules=[Rule(0, Atom("out", (Var("X"),)), (Atom("inr", (Var("X"),)),))],
        output_rel="out",
    )
    rw = magic_rewrite(p)
    assert rw is not p
    assert any(d.internal for d in rw.decls.values())
    assert evaluate(p, p.edb_store(), OptConfig(enable_magic=True)) == evaluate_naive(
        p, p.edb_store()
    )


def test_magic_rewrite_identity_without_output():
    assert magic_rewrite(transitive_closure()) is not None
    p = transitive_closure()
    p.output_rel = None
    assert magic_rewrite(p) is p


def test_internal_relations_never_escape():
    p = signed_zero_join()
    store = evaluate(p, p.edb_store(), OptConfig(enable_magic=True))
    assert not any(rel.startswith("mg_") for rel in store.data)


# --- injected bug bookkeeping ----------------------------------------------

def test_unknown_bug_id_rejected():
    with pytest.raises(ValueError):
        OptConfig(injected_bugs=frozenset({"BUG_DOES_NOT_EXIST"}))


def test_strip_disables_rewrites_but_not_subsumption():
    stripped = OptConfig(True, True, True, frozenset({BUG_MAGIC_NEGZERO})).with_optimizations_stripped()
    assert not stripped.enable_magic and not stripped.enable_inline
    assert stripped.enable_subsumption
    assert BUG_MAGIC_NEGZERO in stripped.injected_bugs


def test_stripped_run_hides_flag_gated_bugs():
    # stripping turns off the flag-gated rewrites, so their bugs go dormant
    for p, bug in (
        (survivor_filter(), BUG_SUBSUME_UNDER_MAGIC),
        (chained_filter(), BUG_INLINE_DROP_LITERAL),
    ):
        opt = OptConfig(True, True, True, frozenset({bug})).with_optimizations_stripped()
        assert evaluate(p, p.edb_store(), opt) == evaluate_naive(p, p.edb_store())


def test_strip_cannot_hide_an_always_on_pass():
    # the signed-zero fault models a rewrite the engine applies on its own,
    # flag or no flag, so stripping does not neutralize it; single-rule
    # reference programs stay immune because the rewrite has nothing to do
    # there (see the dormant test above)
    p = signed_zero_join()
    opt = OptConfig(True, True, True, frozenset({BUG_MAGIC_NEGZERO})).with_optimizations_stripped()
    assert evaluate(p, p.edb_store(), opt) != evaluate_naive(p, p.edb_store())


# --- resource budgets -------------------------------------------------------

def test_join_binding_budget_trips():
    n = 30  # 30**4 candidate bindings comfortably exceeds the cap
    p = Program(
        decls={
            "e": decl("e", ("int",), is_input=True),
            "big": decl("big", ("int", "int", "int", "int")),
        },
        facts=[("e", (I(i),)) for i in range(n)],
        rules=[
            Rule(
                0,
                Atom("big", (Var("A"), Var("B"), Var("C"), Var("D"))),
                (
                    Atom("e", (Var("A"),)),
                    Atom("e", (Var("B"),)),
                    Atom("e", (Var("C"),)),
                    Atom("e", (Var("D"),)),
                ),
            )
        ],
    )
    assert n**4 > MAX_BINDINGS
    with pytest.raises(EvalTimeout):
        evaluate(p, p.edb_store(), OptConfig())
    with pytest.raises(EvalTimeout):
        evaluate_naive(p, p.edb_store())


def test_subsumption_fact_budget_trips():
    n = 50  # n*n derived pairs exceed the subsumption cap
    p = Program(
        decls={
            "e": decl("e", ("int",), is_input=True),
            "pairs": decl("pairs", ("int", "int")),
        },
        facts=[("e", (I(i),)) for i in range(n)],
        rules=[
            Rule(
                0,
                Atom("pairs", (Var("A"), Var("B"))),
                (Atom("e", (Var("A"),)), Atom("e", (Var("B"),))),
            )
        ],
        subsumptions=[
            SubsumptionRule(
                1,
                "pairs",
                (Var("A"), Var("B1")),
                (Var("A"), Var("B2")),
                (Constraint("<", Var("B1"), Var("B2")),),
            )
        ],
    )
    assert n * n > MAX_SUBSUMPTION_FACTS
    with pytest.raises(EvalTimeout):
        evaluate_naive(p, p.edb_store())


# --- equivalence sweep on generated programs --------------------------------

def test_generated_programs_evaluate_like_naive():
    # small version of the campaign-scale equivalence check: random programs
    # built rule by rule, no oracle involved, all combos against naive
    for seed in range(25):
        rng = random.Random(seed)
        cfg = GenConfig(seed=seed)
        program = gen_skeleton(cfg, rng)
        for rid in range(5):
            node, new_decls = gen_candidate_rule(program, rid, cfg, rng)
            program.decls.update(new_decls)
            if hasattr(node, "dominated"):
                program.subsumptions.append(node)
            else:
                program.rules.append(node)
        program.validate()
        try:
            want = evaluate_naive(program, program.edb_store())
        except Unstratifiable:
            continue
        except EvalTimeout:
            continue
        for opt in ALL_COMBOS:
            assert evaluate(program, program.edb_store(), opt) == want, (seed, opt)
