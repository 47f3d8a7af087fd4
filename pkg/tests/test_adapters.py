"""Dialects, rendering, parsing, engine specs, subprocess orchestration."""
import json
import os
import stat
import textwrap
from pathlib import Path

import pytest

from deopt.adapters import (
    COZO_LIKE,
    CrashOutcome,
    DIALECTS,
    EMBEDDED,
    EmbeddedAdapter,
    EngineSpawnError,
    EngineSpec,
    FactsOutcome,
    MUZ_LIKE,
    ParseFailureOutcome,
    SemanticErrorOutcome,
    SOUFFLE_LIKE,
    SubprocessAdapter,
    TimeoutOutcome,
    build_adapter,
    default_catalog,
    dialect_violations,
    grammar_check,
    invoke_engine,
    load_engine_spec,
    outcome_kind,
    parse_facts,
    program_from_json,
    program_to_json,
    render_program,
    render_value,
    store_from_json,
    store_to_json,
)
from deopt.datalog_ir import (
    Arith,
    Atom,
    Const,
    FactStore,
    Program,
    RelationDecl,
    Rule,
    Var,
)
from deopt.refengine import BUG_INLINE_DROP_LITERAL, OptConfig
from helpers import (
    F,
    I,
    S,
    U,
    chained_filter,
    decl,
    divergent_pair,
    guided_recursion,
    keep_max_per_key,
    show,
    signed_zero_join,
    survivor_filter,
    two_hop_self_join,
)

ALL_FIXTURES = [
    two_hop_self_join,
    survivor_filter,
    keep_max_per_key,
    signed_zero_join,
    chained_filter,
    guided_recursion,
    divergent_pair,
]


# --- dialect capabilities ---------------------------------------------------

def test_dialect_registry_covers_four_families():
    assert set(DIALECTS) == {"souffle_like", "cozo_like", "muz_like", "embedded"}


def test_dialect_violations_subsumption():
    p = survivor_filter()
    assert dialect_violations(p, SOUFFLE_LIKE) == []
    assert dialect_violations(p, EMBEDDED) == []
    assert any("subsumption" in v for v in dialect_violations(p, COZO_LIKE))


def test_dialect_violations_float_support():
    p = signed_zero_join()
    assert dialect_violations(p, SOUFFLE_LIKE) == []
    assert dialect_violations(p, MUZ_LIKE) != []


def test_annotations_are_hints_outside_supporting_dialects():
    # annotations steer optimizers, never results, so a dialect without
    # them renders the same program minus the hints instead of rejecting it
    p = chained_filter()
    p.decls["b"] = RelationDecl(
        "b", p.decls["b"].attrs, annotations=frozenset({"inline"})
    )
    assert dialect_violations(p, SOUFFLE_LIKE) == []
    assert dialect_violations(p, COZO_LIKE) == []
    assert "inline" not in render_program(p, COZO_LIKE)["program.cozo"]


# --- value rendering --------------------------------------------------------

def test_render_value_spellings():
    assert render_value(I(-3), quoted_symbols=False) == "-3"
    assert render_value(U(7), quoted_symbols=False) == "7"
    assert render_value(F(-0.0), quoted_symbols=False) == "-0"
    assert render_value(F(float("nan")), quoted_symbols=False) == "nan"
    assert render_value(S("ab"), quoted_symbols=True) == '"ab"'
    assert render_value(S("ab"), quoted_symbols=False) == "ab"
    assert render_value(S('a"b\\c'), quoted_symbols=True) == '"a\\"b\\\\c"'


# --- JSON round-trips -------------------------------------------------------

def test_program_json_roundtrip_all_fixtures():
    for make in ALL_FIXTURES:
        p = make()
        blob = json.dumps(program_to_json(p), sort_keys=True)
        q = program_from_json(json.loads(blob))
        assert program_to_json(q) == program_to_json(p)
        assert q.decls == p.decls
        assert q.rules == p.rules
        assert q.subsumptions == p.subsumptions
        assert sorted(q.facts, key=str) == sorted(p.facts, key=str)
        assert q.output_rel == p.output_rel


def test_program_json_preserves_multi_output():
    p = guided_recursion()
    p.output_rels = ("c", "d")
    q = program_from_json(program_to_json(p))
    assert q.output_rels == ("c", "d")


def test_program_json_preserves_annotations_and_arith():
    p = divergent_pair()
    p.decls["a"] = RelationDecl("a", p.decls["a"].attrs, annotations=frozenset({"magic"}))
    q = program_from_json(program_to_json(p))
    assert q.decls["a"].annotations == frozenset({"magic"})
    head_term = q.rules[1].head.terms[0]
    assert isinstance(head_term, Arith) and head_term.op == "+"


def test_store_json_roundtrip_keeps_float_bits():
    s = FactStore()
    s.add("r", (F(-0.0), S("x")))
    s.add("r", (F(float("nan")), S("y")))
    s.add("q", (I(-5),))
    t = store_from_json(store_to_json(s))
    assert t == s


# --- rendering --------------------------------------------------------------

def test_souffle_render_golden():
    artifacts = render_program(survivor_filter(), SOUFFLE_LIKE)
    assert artifacts["program.dl"] == textwrap.dedent(
        """\
        .decl buy(x0:number)
        .input buy
        .decl eo(x0:number)
        .output eo
        eo(E) :- buy(E).
        eo(E1) <= eo(E2) :- E1 < E2.
        """
    )
    assert artifacts["facts/buy.facts"] == "3\n6\n7\n"


def test_souffle_negative_and_arith_terms():
    p = divergent_pair()
    text = render_program(p, SOUFFLE_LIKE)["program.dl"]
    assert "a((A+1)) :- b(A)." in text
    p2 = two_hop_self_join()
    p2.rules[2] = Rule(
        2, Atom("edge", (Const(I(-4)), Var("X"))), (Atom("node", (Var("X"),)),)
    )
    text2 = render_program(p2, SOUFFLE_LIKE)["program.dl"]
    assert "edge(-4, X) :- node(X)." in text2


def test_souffle_facts_render_signed_zero_explicitly():
    artifacts = render_program(signed_zero_join(), SOUFFLE_LIKE)
    assert artifacts["facts/a.facts"] == "-0\tx\n0\tx\n"


def test_souffle_annotations_by_role():
    p = chained_filter()
    p.decls["b"] = RelationDecl(
        "b", p.decls["b"].attrs, annotations=frozenset({"inline"})
    )
    opt = render_program(p, SOUFFLE_LIKE, role="optimized")["program.dl"]
    assert ".decl b(x0:number) inline" in opt
    ref = render_program(p, SOUFFLE_LIKE, role="reference")["program.dl"]
    assert "inline" not in ref
    stripped = render_program(p, SOUFFLE_LIKE, role="optimized", strip_annotations=True)[
        "program.dl"
    ]
    assert "inline" not in stripped


def test_cozo_render_golden():
    artifacts = render_program(chained_filter(), COZO_LIKE)
    assert artifacts["program.cozo"] == textwrap.dedent(
        """\
        a[A0] <- [[1], [2]]
        x[A0] <- [[1]]
        b[X] := a[X], x[X]
        c[X] := b[X]
        ?[Q0] := c[Q0]
        """
    )


def test_muz_render_golden():
    artifacts = render_program(chained_filter(), MUZ_LIKE)
    assert artifacts["program.datalog"] == textwrap.dedent(
        """\
        Z 64

        a(x0 : Z) input
        x(x0 : Z) input
        b(x0 : Z)
        c(x0 : Z) printtuples

        a(1).
        a(2).
        x(1).
        b(X) :- a(X), x(X).
        c(X) :- b(X).
        """
    )


def test_render_rejects_out_of_dialect_programs():
    with pytest.raises(ValueError):
        render_program(survivor_filter(), COZO_LIKE)
    with pytest.raises(ValueError):
        render_program(signed_zero_join(), MUZ_LIKE)


def test_embedded_render_is_sorted_json():
    artifacts = render_program(two_hop_self_join(), EMBEDDED)
    data = json.loads(artifacts["program.json"])
    assert program_to_json(program_from_json(data)) == program_to_json(two_hop_self_join())


# --- grammar checks ---------------------------------------------------------

def test_rendered_programs_pass_their_grammar():
    cases = [
        (SOUFFLE_LIKE, "program.dl", [two_hop_self_join, survivor_filter, signed_zero_join, guided_recursion]),
        (COZO_LIKE, "program.cozo", [chained_filter, two_hop_self_join]),
        (MUZ_LIKE, "program.datalog", [chained_filter, two_hop_self_join, guided_recursion]),
    ]
    for dialect, key, makers in cases:
        for make in makers:
            text = render_program(make(), dialect)[key]
            assert grammar_check(dialect, text) == [], (dialect.name, make.__name__)


def test_grammar_check_flags_garbage():
    assert grammar_check(SOUFFLE_LIKE, ".decl ok(x:number)\nthis is not datalog\n") == [
        "this is not datalog"
    ]
    assert grammar_check(EMBEDDED, "anything goes") == []


# --- output parsing ---------------------------------------------------------

def test_parse_tsv_typed_rows():
    decls = {"r": decl("r", ("int", "float", "symbol"))}
    store = parse_facts({"r.csv": "1\t-0\thello\n-2\tnan\tx\n"}, decls, ["r"], SOUFFLE_LIKE)
    assert store.get("r") == {
        (I(1), F(-0.0), S("hello")),
        (I(-2), F(float("nan")), S("x")),
    }


def test_parse_tsv_missing_file_is_empty():
    decls = {"r": decl("r", ("int",))}
    store = parse_facts({}, decls, ["r"], SOUFFLE_LIKE)
    assert store.get("r") == set()


def test_parse_tsv_nullary_relation():
    decls = {"r": decl("r", ())}
    assert parse_facts({"r.csv": "()\n"}, decls, ["r"], SOUFFLE_LIKE).get("r") == {()}
    assert parse_facts({"r.csv": ""}, decls, ["r"], SOUFFLE_LIKE).get("r") == set()


def test_parse_tsv_arity_mismatch_raises():
    decls = {"r": decl("r", ("int", "int"))}
    with pytest.raises(ValueError):
        parse_facts({"r.csv": "1\n"}, decls, ["r"], SOUFFLE_LIKE)


def test_parse_bracket_rows():
    decls = {"r": decl("r", ("int", "symbol"))}
    out = parse_facts(
        {"stdout": 'header noise\n[1, "a b"]\n[2, "c"]\n'}, decls, ["r"], COZO_LIKE
    )
    assert out.get("r") == {(I(1), S("a b")), (I(2), S("c"))}


def test_parse_named_rows():
    decls = {"r": decl("r", ("int", "int")), "s": decl("s", ("int",))}
    out = parse_facts(
        {"stdout": "r(1, 2).\ns(3).\nignored(9).\n"}, decls, ["r", "s"], MUZ_LIKE
    )
    assert out.get("r") == {(I(1), I(2))}
    assert out.get("s") == {(I(3),)}


# --- engine specs -----------------------------------------------------------

def test_embedded_spec_by_name():
    spec = load_engine_spec("embedded")
    assert spec.dialect_name == "embedded"
    assert spec.error_catalog == default_catalog("embedded")


def test_spec_from_toml(tmp_path):
    cfg = tmp_path / "engine.toml"
    cfg.write_text(
        textwrap.dedent(
            """\
            [engine]
            dialect = "souffle_like"
            executable = "/usr/bin/true"
            timeout_s = 12.5
            args = ["{program}", "-F", "{factdir}", "-D", "{outdir}", "-j1"]
            """
        )
    )
    spec = load_engine_spec(str(cfg))
    assert spec.dialect_name == "souffle_like"
    assert spec.timeout_s == 12.5
    assert spec.args_template[-1] == "-j1"
    # catalog falls back to the packaged per-dialect file
    assert spec.error_catalog == default_catalog("souffle_like")


def test_spec_from_json(tmp_path):
    cfg = tmp_path / "engine.json"
    cfg.write_text(
        json.dumps(
            {
                "dialect": "muz_like",
                "executable": "/usr/bin/true",
                "error_catalog": ["my error"],
            }
        )
    )
    spec = load_engine_spec(str(cfg))
    assert spec.dialect_name == "muz_like"
    assert spec.error_catalog == ("my error",)


def test_spec_requires_executable_for_subprocess_dialects(tmp_path):
    cfg = tmp_path / "engine.toml"
    cfg.write_text('[engine]\ndialect = "souffle_like"\n')
    with pytest.raises(ValueError):
        load_engine_spec(str(cfg))


def test_spec_rejects_unknown_dialect(tmp_path):
    cfg = tmp_path / "engine.toml"
    cfg.write_text('[engine]\ndialect = "mystery"\nexecutable = "/usr/bin/true"\n')
    with pytest.raises(ValueError):
        load_engine_spec(str(cfg))


def test_spec_json_roundtrip():
    spec = load_engine_spec("embedded")
    assert EngineSpec.from_json(spec.to_json()) == spec


def test_default_catalogs_load_for_every_dialect():
    for name in DIALECTS:
        patterns = default_catalog(name)
        assert patterns, name


# --- embedded adapter -------------------------------------------------------

def test_embedded_adapter_returns_facts():
    p = two_hop_self_join()
    out = EmbeddedAdapter(OptConfig()).run(p)
    assert isinstance(out, FactsOutcome)
    assert show(out.store, "result") == [(I(0),), (I(1),)]


def test_embedded_adapter_maps_unstratifiable():
    p = Program(
        decls={
            "e": decl("e", ("int",), is_input=True),
            "p": decl("p", ("int",)),
            "q": decl("q", ("int",)),
        },
        facts=[("e", (I(1),))],
        rules=[
            Rule(0, Atom("p", (Var("X"),)), (Atom("e", (Var("X"),)), Atom("q", (Var("X"),), negated=True))),
            Rule(1, Atom("q", (Var("X"),)), (Atom("e", (Var("X"),)), Atom("p", (Var("X"),), negated=True))),
        ],
    )
    out = EmbeddedAdapter(OptConfig()).run(p)
    assert isinstance(out, SemanticErrorOutcome)
    assert out.matched == "unstratifiable"
    assert outcome_kind(out) == "semantic_error"


def test_embedded_adapter_maps_division_by_zero():
    p = Program(
        decls={"e": decl("e", ("int",), is_input=True), "h": decl("h", ("int",))},
        facts=[("e", (I(3),))],
        rules=[
            Rule(
                0,
                Atom("h", (Arith("/", (Var("X"), Const(I(0)))),)),
                (Atom("e", (Var("X"),)),),
            )
        ],
    )
    out = EmbeddedAdapter(OptConfig()).run(p)
    assert isinstance(out, SemanticErrorOutcome)
    assert out.matched == "div_zero"


def test_embedded_adapter_maps_budget_trips_to_timeout():
    n = 30
    p = Program(
        decls={
            "e": decl("e", ("int",), is_input=True),
            "big": decl("big", ("int",) * 4),
        },
        facts=[("e", (I(i),)) for i in range(n)],
        rules=[
            Rule(
                0,
                Atom("big", tuple(Var(c) for c in "ABCD")),
                tuple(Atom("e", (Var(c),)) for c in "ABCD"),
            )
        ],
    )
    out = EmbeddedAdapter(OptConfig()).run(p)
    assert isinstance(out, TimeoutOutcome)
    assert outcome_kind(out) == "timeout"


def test_embedded_adapter_strip_mode_shields_references():
    p = chained_filter()
    opt = OptConfig(enable_inline=True, injected_bugs=frozenset({BUG_INLINE_DROP_LITERAL}))
    adapter = EmbeddedAdapter(opt, strip_for_reference=True)
    buggy = adapter.run(p, role="optimized")
    clean = adapter.run(p, role="reference")
    assert show(buggy.store, "c") == [(I(1),), (I(2),)]
    assert show(clean.store, "c") == [(I(1),)]


# --- subprocess adapter -----------------------------------------------------

def fake_engine(tmp_path: Path, body: str) -> str:
    path = tmp_path / "engine.sh"
    path.write_text("#!/bin/sh\n# $1 program  $3 factdir  $5 outdir\n" + body)
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return str(path)


def spec_for(tmp_path: Path, body: str, timeout_s: float = 10.0) -> EngineSpec:
    return EngineSpec(
        dialect_name="souffle_like",
        executable=fake_engine(tmp_path, body),
        args_template=("{program}", "-F", "{factdir}", "-D", "{outdir}"),
        timeout_s=timeout_s,
        error_catalog=default_catalog("souffle_like"),
    )


def output_copy_program() -> Program:
    return Program(
        decls={"src": decl("src", ("int",), is_input=True), "dst": decl("dst", ("int",))},
        facts=[("src", (I(1),)), ("src", (I(2),))],
        rules=[Rule(0, Atom("dst", (Var("X"),)), (Atom("src", (Var("X"),)),))],
        output_rel="dst",
    )


def test_subprocess_success_parses_and_cleans_up(tmp_path):
    spec = spec_for(tmp_path, 'cp "$3/src.facts" "$5/dst.csv"\n')
    adapter = SubprocessAdapter(spec, tmp_path / "work")
    out = adapter.run(output_copy_program(), tag="t1")
    assert isinstance(out, FactsOutcome)
    assert out.store.get("dst") == {(I(1),), (I(2),)}
    assert list((tmp_path / "work").iterdir()) == []  # success workdir removed


def test_subprocess_crash_keeps_workdir(tmp_path):
    spec = spec_for(tmp_path, 'echo "segfault" >&2\nexit 7\n')
    adapter = SubprocessAdapter(spec, tmp_path / "work")
    out = adapter.run(output_copy_program(), tag="t1")
    assert isinstance(out, CrashOutcome)
    assert out.returncode == 7
    assert "segfault" in out.stderr
    kept = list((tmp_path / "work").iterdir())
    assert len(kept) == 1
    assert (kept[0] / "program.dl").exists()


def test_subprocess_semantic_error_matches_catalog(tmp_path):
    spec = spec_for(tmp_path, 'echo "Error: Division by zero" >&2\nexit 1\n')
    adapter = SubprocessAdapter(spec, tmp_path / "work")
    out = adapter.run(output_copy_program())
    assert isinstance(out, SemanticErrorOutcome)
    assert out.matched is not None


def test_subprocess_timeout(tmp_path):
    spec = spec_for(tmp_path, "sleep 5\n", timeout_s=0.3)
    adapter = SubprocessAdapter(spec, tmp_path / "work")
    out = adapter.run(output_copy_program())
    assert isinstance(out, TimeoutOutcome)
    assert out.seconds == 0.3


def test_subprocess_malformed_output_is_parse_failure(tmp_path):
    spec = spec_for(tmp_path, 'printf "1\\t2\\t3\\n" > "$5/dst.csv"\n')
    adapter = SubprocessAdapter(spec, tmp_path / "work")
    out = adapter.run(output_copy_program())
    assert isinstance(out, ParseFailureOutcome)
    assert "dst" in out.detail


def test_subprocess_missing_binary_is_config_error(tmp_path):
    spec = EngineSpec(
        dialect_name="souffle_like",
        executable=str(tmp_path / "does_not_exist"),
        error_catalog=("x",),
    )
    adapter = SubprocessAdapter(spec, tmp_path / "work")
    with pytest.raises(EngineSpawnError):
        adapter.run(output_copy_program())


def test_invoke_engine_refuses_dirty_workdir(tmp_path):
    wd = tmp_path / "dirty"
    wd.mkdir()
    (wd / "leftover").write_text("x")
    spec = spec_for(tmp_path, "exit 0\n")
    with pytest.raises(ValueError):
        invoke_engine(spec, {"program.dl": ""}, wd, [], {})


def test_build_adapter_picks_by_dialect(tmp_path):
    assert isinstance(build_adapter(EngineSpec(), tmp_path), EmbeddedAdapter)
    spec = EngineSpec(
        dialect_name="souffle_like", executable="/usr/bin/true", error_catalog=("x",)
    )
    assert isinstance(build_adapter(spec, tmp_path), SubprocessAdapter)
