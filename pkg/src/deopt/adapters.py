"""Dialect rendering, engine invocation, and result parsing.

Programs render to deterministic text per dialect; external engines run as
subprocesses with a wall-clock timeout and their results classify into
facts, expected semantic error, crash, timeout, or parse failure.  The
embedded adapter short-circuits all of that and evaluates in process, which
is what the acceptance suite runs against.

Reference programs run with the engine's optimizer fully live: a single
rule gives cross-rule optimizations nothing to chew on, which is the whole
detection idea.  The separate strip mode additionally removes optimization
annotations (and disables the embedded rewrites) for reference runs only.
"""
from __future__ import annotations

import json
import re
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from .datalog_ir import (
    INT,
    UINT,
    FLOAT,
    SYMBOL,
    Arith,
    Atom,
    Const,
    Constraint,
    FactStore,
    Program,
    RelationDecl,
    Rule,
    SubsumptionRule,
    Value,
    Var,
    WILDCARD,
    Wildcard,
    format_float,
    parse_value,
)
from .refengine import (
    EvalTimeout,
    OptConfig,
    SemanticError,
    Unstratifiable,
    evaluate,
)

# --- Dialects ---------------------------------------------------------------


@dataclass(frozen=True)
class Dialect:
    name: str
    supports_negation_in_recursion: bool
    supports_subsumption: bool
    supports_annotations: bool
    requires_decls: bool
    requires_stratification: bool
    fact_channel: str  # "files" or "inline"


SOUFFLE_LIKE = Dialect("souffle_like", False, True, True, True, True, "files")
COZO_LIKE = Dialect("cozo_like", False, False, False, False, True, "inline")
MUZ_LIKE = Dialect("muz_like", True, False, False, True, False, "inline")
EMBEDDED = Dialect("embedded", False, True, True, True, True, "inline")

DIALECTS = {d.name: d for d in (SOUFFLE_LIKE, COZO_LIKE, MUZ_LIKE, EMBEDDED)}


def dialect_violations(program: Program, dialect: Dialect) -> list[str]:
    """Feature-set check before rendering."""
    out = []
    if program.subsumptions and not dialect.supports_subsumption:
        out.append("subsumption rules unsupported")
    if dialect.name == "muz_like":
        for decl in program.decls.values():
            for kind in decl.kinds:
                if kind not in (INT, UINT):
                    out.append(f"{decl.name}: kind {kind} unsupported")
    return out


# --- Run outcomes -----------------------------------------------------------


@dataclass
class FactsOutcome:
    store: FactStore
    stdout: str = ""
    stderr: str = ""


@dataclass
class SemanticErrorOutcome:
    message: str
    matched: str | None = None


@dataclass
class CrashOutcome:
    returncode: int
    stdout: str = ""
    stderr: str = ""


@dataclass
class TimeoutOutcome:
    seconds: float


@dataclass
class ParseFailureOutcome:
    detail: str


RunOutcome = (
    FactsOutcome
    | SemanticErrorOutcome
    | CrashOutcome
    | TimeoutOutcome
    | ParseFailureOutcome
)


def outcome_kind(outcome: RunOutcome) -> str:
    return {
        FactsOutcome: "facts",
        SemanticErrorOutcome: "semantic_error",
        CrashOutcome: "crash",
        TimeoutOutcome: "timeout",
        ParseFailureOutcome: "parse_failure",
    }[type(outcome)]


# --- Engine specification ---------------------------------------------------

_EMBEDDED_CATALOG = ("div_zero", "mod_zero", "unstratifiable")


@dataclass
class EngineSpec:
    dialect_name: str = "embedded"
    executable: str | None = None
    args_template: tuple = ()
    timeout_s: float = 30.0
    strip_exec_options: tuple = ()
    error_catalog: tuple = ()

    @property
    def dialect(self) -> Dialect:
        return DIALECTS[self.dialect_name]

    def to_json(self) -> dict:
        return {
            "dialect": self.dialect_name,
            "executable": self.executable,
            "args_template": list(self.args_template),
            "timeout_s": self.timeout_s,
            "strip_exec_options": list(self.strip_exec_options),
            "error_catalog": list(self.error_catalog),
        }

    @staticmethod
    def from_json(d: dict) -> "EngineSpec":
        return EngineSpec(
            dialect_name=d.get("dialect", "embedded"),
            executable=d.get("executable"),
            args_template=tuple(d.get("args_template", ())),
            timeout_s=float(d.get("timeout_s", 30.0)),
            strip_exec_options=tuple(d.get("strip_exec_options", ())),
            error_catalog=tuple(d.get("error_catalog", ())),
        )


def default_catalog(dialect_name: str) -> tuple:
    """Error-message patterns shipped with the package, grown by probe runs
    against each engine (scripts/probe_semantic_errors.py)."""
    path = Path(__file__).parent / "catalogs" / f"{dialect_name}.json"
    if path.exists():
        return tuple(json.loads(path.read_text())["patterns"])
    return ()


def load_engine_spec(source: str) -> EngineSpec:
    """'embedded', or a path to a TOML/JSON engine description."""
    if source == "embedded":
        return EngineSpec(error_catalog=default_catalog("embedded"))
    path = Path(source)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # 3.10: stdlib tomllib arrived in 3.11
            import tomli as tomllib

        data = tomllib.loads(text)
    eng = data.get("engine", data)
    spec = EngineSpec(
        dialect_name=eng.get("dialect", "souffle_like"),
        executable=eng.get("executable"),
        args_template=tuple(eng.get("args", ["{program}", "-F", "{factdir}", "-D", "{outdir}"])),
        timeout_s=float(eng.get("timeout_s", 30.0)),
        strip_exec_options=tuple(eng.get("strip_exec_options", ())),
        error_catalog=tuple(eng.get("error_catalog", ())),
    )
    if not spec.error_catalog:
        spec = EngineSpec(
            dialect_name=spec.dialect_name,
            executable=spec.executable,
            args_template=spec.args_template,
            timeout_s=spec.timeout_s,
            strip_exec_options=spec.strip_exec_options,
            error_catalog=default_catalog(spec.dialect_name),
        )
    if spec.dialect_name not in DIALECTS:
        raise ValueError(f"unknown dialect {spec.dialect_name!r}")
    if spec.dialect_name != "embedded" and not spec.executable:
        raise ValueError("engine spec needs an executable")
    return spec


# --- Value and term rendering ----------------------------------------------


def render_value(v: Value, quoted_symbols: bool) -> str:
    if v.kind == FLOAT:
        return format_float(v.payload)  # type: ignore[arg-type]
    if v.kind == SYMBOL:
        if quoted_symbols:
            s = str(v.payload).replace("\\", "\\\\").replace('"', '\\"')
            return f'"{s}"'
        return str(v.payload)
    return str(v.payload)


def _render_term(t, quoted_symbols: bool = True) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Wildcard):
        return "_"
    if isinstance(t, Const):
        return render_value(t.value, quoted_symbols)
    assert isinstance(t, Arith)
    if t.op == "neg":
        return f"(-{_render_term(t.args[0], quoted_symbols)})"
    lhs = _render_term(t.args[0], quoted_symbols)
    rhs = _render_term(t.args[1], quoted_symbols)
    return f"({lhs}{t.op}{rhs})"


# --- IR serialization (round-trip channel for the embedded dialect) ---------


def value_to_json(v: Value) -> dict:
    return {"k": v.kind, "v": v.payload}


def value_from_json(d: dict) -> Value:
    if d["k"] == FLOAT:
        return Value.of_float_bits(d["v"])
    if d["k"] == SYMBOL:
        return Value.of_symbol(d["v"])
    return Value(d["k"], d["v"])


def term_to_json(t) -> dict:
    if isinstance(t, Var):
        return {"var": t.name}
    if isinstance(t, Wildcard):
        return {"wild": True}
    if isinstance(t, Const):
        return {"const": value_to_json(t.value)}
    assert isinstance(t, Arith)
    return {"op": t.op, "args": [term_to_json(a) for a in t.args]}


def term_from_json(d: dict):
    if "var" in d:
        return Var(d["var"])
    if "wild" in d:
        return WILDCARD
    if "const" in d:
        return Const(value_from_json(d["const"]))
    return Arith(d["op"], tuple(term_from_json(a) for a in d["args"]))


def _literal_to_json(lit) -> dict:
    if isinstance(lit, Atom):
        return {
            "rel": lit.rel,
            "terms": [term_to_json(t) for t in lit.terms],
            "neg": lit.negated,
        }
    return {"cmp": lit.op, "lhs": term_to_json(lit.lhs), "rhs": term_to_json(lit.rhs)}


def _literal_from_json(d: dict):
    if "rel" in d:
        return Atom(d["rel"], tuple(term_from_json(t) for t in d["terms"]), d["neg"])
    return Constraint(d["cmp"], term_from_json(d["lhs"]), term_from_json(d["rhs"]))


def program_to_json(program: Program) -> dict:
    return {
        "decls": [
            {
                "name": d.name,
                "attrs": [[a, k] for a, k in d.attrs],
                "annotations": sorted(d.annotations),
                "input": d.is_input,
                "internal": d.internal,
            }
            for d in program.decls.values()
        ],
        "facts": [
            [rel, [value_to_json(v) for v in tup]] for rel, tup in program.facts
        ],
        "rules": [
            {
                "id": r.rule_id,
                "head": _literal_to_json(r.head),
                "body": [_literal_to_json(l) for l in r.body],
                "magic": r.magic_generated,
            }
            for r in program.rules
        ],
        "subsumptions": [
            {
                "id": s.rule_id,
                "rel": s.rel,
                "dominated": [term_to_json(t) for t in s.dominated],
                "dominating": [term_to_json(t) for t in s.dominating],
                "cond": [_literal_to_json(c) for c in s.condition],
            }
            for s in program.subsumptions
        ],
        "output_rel": program.output_rel,
        "output_rels": list(program.output_rels),
    }


def program_from_json(d: dict) -> Program:
    decls = {}
    for dd in d["decls"]:
        decls[dd["name"]] = RelationDecl(
            name=dd["name"],
            attrs=tuple((a, k) for a, k in dd["attrs"]),
            annotations=frozenset(dd["annotations"]),
            is_input=dd["input"],
            internal=dd["internal"],
        )
    rules = []
    for rd in d["rules"]:
        head = _literal_from_json(rd["head"])
        rules.append(
            Rule(
                rd["id"],
                head,
                tuple(_literal_from_json(l) for l in rd["body"]),
                rd["magic"],
            )
        )
    subs = []
    for sd in d["subsumptions"]:
        subs.append(
            SubsumptionRule(
                sd["id"],
                sd["rel"],
                tuple(term_from_json(t) for t in sd["dominated"]),
                tuple(term_from_json(t) for t in sd["dominating"]),
                tuple(_literal_from_json(c) for c in sd["cond"]),
            )
        )
    return Program(
        decls=decls,
        facts=[
            (rel, tuple(value_from_json(v) for v in tup)) for rel, tup in d["facts"]
        ],
        rules=rules,
        subsumptions=subs,
        output_rel=d["output_rel"],
        output_rels=tuple(d.get("output_rels", ())),
    )


def store_to_json(store: FactStore) -> dict:
    return {
        rel: [[value_to_json(v) for v in tup] for tup in store.sorted_tuples(rel)]
        for rel in store.rels()
        if store.get(rel)
    }


def store_from_json(d: dict) -> FactStore:
    store = FactStore()
    for rel, rows in d.items():
        for row in rows:
            store.add(rel, tuple(value_from_json(v) for v in row))
    return store


# --- Rendering --------------------------------------------------------------

_SOUFFLE_KIND = {INT: "number", UINT: "unsigned", FLOAT: "float", SYMBOL: "symbol"}


def _souffle_rule(rule: Rule) -> str:
    head = f"{rule.head.rel}({', '.join(_render_term(t) for t in rule.head.terms)})"
    lits = []
    for lit in rule.body:
        if isinstance(lit, Atom):
            args = ", ".join(_render_term(t) for t in lit.terms)
            lits.append(f"{'!' if lit.negated else ''}{lit.rel}({args})")
        else:
            lits.append(f"{_render_term(lit.lhs)} {lit.op} {_render_term(lit.rhs)}")
    return f"{head} :- {', '.join(lits)}."


def _render_souffle(program: Program, role: str, strip_annotations: bool) -> dict:
    lines = []
    outputs = program.all_outputs()
    for decl in program.decls.values():
        attrs = ", ".join(f"{a}:{_SOUFFLE_KIND[k]}" for a, k in decl.attrs)
        anns = sorted(decl.annotations)
        if strip_annotations:
            anns = []
        elif role == "reference":
            # inline on input/output relations is rejected by this family
            anns = [a for a in anns if a != "inline"]
        suffix = (" " + " ".join(anns)) if anns else ""
        lines.append(f".decl {decl.name}({attrs}){suffix}")
        if decl.is_input:
            lines.append(f".input {decl.name}")
    for rel in outputs:
        lines.append(f".output {rel}")
    for rule in program.rules:
        lines.append(_souffle_rule(rule))
    for sub in program.subsumptions:
        dom = ", ".join(_render_term(t) for t in sub.dominated)
        ding = ", ".join(_render_term(t) for t in sub.dominating)
        cond = ", ".join(
            f"{_render_term(c.lhs)} {c.op} {_render_term(c.rhs)}" for c in sub.condition
        )
        lines.append(f"{sub.rel}({dom}) <= {sub.rel}({ding}) :- {cond}.")
    artifacts = {"program.dl": "\n".join(lines) + "\n"}
    for rel in sorted({r for r, _ in program.facts}):
        decl = program.decls[rel]
        rows = sorted(
            (tup for r2, tup in program.facts if r2 == rel),
            key=lambda t: tuple(v.sort_key() for v in t),
        )
        body = "\n".join(
            "\t".join(render_value(v, quoted_symbols=False) for v in tup)
            for tup in rows
        )
        artifacts[f"facts/{rel}.facts"] = body + ("\n" if body else "")
    return artifacts


def _cozo_atom(atom: Atom) -> str:
    args = ", ".join(_render_term(t) for t in atom.terms)
    body = f"{atom.rel}[{args}]"
    return f"not {body}" if atom.negated else body


def _render_cozo(program: Program) -> dict:
    lines = []
    fact_rels = sorted({r for r, _ in program.facts})
    for rel in fact_rels:
        decl = program.decls[rel]
        rows = sorted(
            (tup for r2, tup in program.facts if r2 == rel),
            key=lambda t: tuple(v.sort_key() for v in t),
        )
        rows_text = ", ".join(
            "[" + ", ".join(render_value(v, quoted_symbols=True) for v in tup) + "]"
            for tup in rows
        )
        head_vars = ", ".join(f"A{i}" for i in range(decl.arity))
        lines.append(f"{rel}[{head_vars}] <- [{rows_text}]")
    for rule in program.rules:
        head_args = ", ".join(_render_term(t) for t in rule.head.terms)
        lits = []
        for lit in rule.body:
            if isinstance(lit, Atom):
                lits.append(_cozo_atom(lit))
            else:
                lits.append(f"{_render_term(lit.lhs)} {lit.op} {_render_term(lit.rhs)}")
        lines.append(f"{rule.head.rel}[{head_args}] := {', '.join(lits)}")
    for rel in program.all_outputs():
        decl = program.decls[rel]
        vs = ", ".join(f"Q{i}" for i in range(decl.arity))
        lines.append(f"?[{vs}] := {rel}[{vs}]")
    return {"program.cozo": "\n".join(lines) + "\n"}


def _render_muz(program: Program) -> dict:
    lines = ["Z 64", ""]
    outputs = set(program.all_outputs())
    for decl in program.decls.values():
        attrs = ", ".join(f"{a} : Z" for a, _k in decl.attrs)
        markers = []
        if decl.is_input:
            markers.append("input")
        if decl.name in outputs:
            markers.append("printtuples")
        suffix = (" " + " ".join(markers)) if markers else ""
        lines.append(f"{decl.name}({attrs}){suffix}")
    lines.append("")
    for rel in sorted({r for r, _ in program.facts}):
        rows = sorted(
            (tup for r2, tup in program.facts if r2 == rel),
            key=lambda t: tuple(v.sort_key() for v in t),
        )
        for tup in rows:
            args = ", ".join(render_value(v, quoted_symbols=False) for v in tup)
            lines.append(f"{rel}({args}).")
    for rule in program.rules:
        lines.append(_souffle_rule(rule))
    return {"program.datalog": "\n".join(lines) + "\n"}


def render_program(
    program: Program,
    dialect: Dialect,
    role: str = "optimized",
    strip_annotations: bool = False,
) -> dict:
    """Deterministic text artifact set for a program.  role=reference with
    strip_annotations removes optimization annotations entirely."""
    bad = dialect_violations(program, dialect)
    if bad:
        raise ValueError(f"program outside {dialect.name} feature set: {bad}")
    if dialect.name == "embedded":
        return {
            "program.json": json.dumps(
                program_to_json(program), sort_keys=True, indent=2
            )
            + "\n"
        }
    if dialect.name == "souffle_like":
        return _render_souffle(program, role, strip_annotations)
    if dialect.name == "cozo_like":
        return _render_cozo(program)
    if dialect.name == "muz_like":
        return _render_muz(program)
    raise ValueError(f"no renderer for {dialect.name}")


# --- Grammar checks ---------------------------------------------------------

_SOUFFLE_LINE = re.compile(
    r"^($"
    r"|\.decl \w+\([^()]*\)( \w+)*$"
    r"|\.input \w+$"
    r"|\.output \w+$"
    r"|\w+\([^:]*\) <= \w+\([^:]*\) :- .+\.$"
    r"|\w+\(.*\)( :- .+)?\.$"
    r"|//.*$)"
)
_COZO_LINE = re.compile(
    r"^($"
    r"|\w+\[[^\]]*\] <- \[.*\]$"
    r"|(\w+|\?)\[[^\]]*\] := .+$)"
)
_MUZ_LINE = re.compile(
    r"^($"
    r"|Z \d+$"
    r"|\w+\([^()]*\)( \w+)*$"
    r"|\w+\(.*\)( :- .+)?\.$)"
)


def grammar_check(dialect: Dialect, text: str) -> list[str]:
    """Per-dialect syntactic validation of rendered program text; returns
    the offending lines."""
    pattern = {
        "souffle_like": _SOUFFLE_LINE,
        "cozo_like": _COZO_LINE,
        "muz_like": _MUZ_LINE,
    }.get(dialect.name)
    if pattern is None:
        return []
    return [line for line in text.splitlines() if not pattern.match(line)]


# --- Parsing engine output --------------------------------------------------


def _parse_tsv(text: str, decl: RelationDecl) -> set:
    out = set()
    if decl.arity == 0:
        if text.strip():
            out.add(())
        return out
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != decl.arity:
            raise ValueError(f"{decl.name}: bad row {line!r}")
        out.add(tuple(parse_value(p, k) for p, k in zip(parts, decl.kinds)))
    return out


def _parse_bracket_rows(text: str, decl: RelationDecl) -> set:
    out = set()
    for line in text.splitlines():
        line = line.strip()
        if not line.startswith("["):
            continue
        inner = line[1:-1]
        parts = [p.strip() for p in inner.split(",")] if inner.strip() else []
        if len(parts) != decl.arity:
            raise ValueError(f"{decl.name}: bad row {line!r}")
        vals = []
        for p, k in zip(parts, decl.kinds):
            if k == SYMBOL and len(p) >= 2 and p[0] == '"':
                p = p[1:-1].replace('\\"', '"').replace("\\\\", "\\")
            vals.append(parse_value(p, k))
        out.add(tuple(vals))
    return out


def _parse_named_rows(text: str, decls: dict, outputs: list[str]) -> FactStore:
    store = FactStore()
    want = set(outputs)
    row = re.compile(r"^(\w+)\((.*)\)\.?$")
    for line in text.splitlines():
        m = row.match(line.strip())
        if not m or m.group(1) not in want:
            continue
        decl = decls[m.group(1)]
        parts = [p.strip() for p in m.group(2).split(",")] if m.group(2).strip() else []
        if len(parts) != decl.arity:
            raise ValueError(f"{decl.name}: bad row {line!r}")
        store.add(
            m.group(1), tuple(parse_value(p, k) for p, k in zip(parts, decl.kinds))
        )
    return store


def parse_facts(
    artifacts: dict, decls: dict, outputs: list[str], dialect: Dialect
) -> FactStore:
    """Typed parse of engine output artifacts.  Files channel reads one
    <rel>.csv per output relation; inline channels read stdout.  Floats keep
    their sign of zero; duplicate rows collapse."""
    if dialect.name == "embedded":
        return store_from_json(json.loads(artifacts["result.json"]))
    if dialect.name == "souffle_like":
        store = FactStore()
        for rel in outputs:
            text = artifacts.get(f"{rel}.csv", "")
            store.set_rel(rel, _parse_tsv(text, decls[rel]))
        return store
    if dialect.name == "cozo_like":
        store = FactStore()
        # a single query block means a single output relation
        for rel in outputs:
            store.set_rel(rel, _parse_bracket_rows(artifacts.get("stdout", ""), decls[rel]))
        return store
    if dialect.name == "muz_like":
        return _parse_named_rows(artifacts.get("stdout", ""), decls, outputs)
    raise ValueError(f"no parser for {dialect.name}")


# --- Invocation -------------------------------------------------------------


def _classify_error(spec: EngineSpec, stdout: str, stderr: str) -> str | None:
    blob = stdout + "\n" + stderr
    for pattern in spec.error_catalog:
        if re.search(pattern, blob):
            return pattern
    return None


def invoke_engine(spec: EngineSpec, artifacts: dict, workdir: str | Path, outputs: list[str], decls: dict) -> RunOutcome:
    """Write artifacts into a private workdir, run the engine, classify.
    The workdir must be empty; it is kept as-is for post-mortems when the
    outcome is anything but facts."""
    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    if any(wd.iterdir()):
        raise ValueError(f"workdir {wd} not empty")
    program_file = None
    for name, text in artifacts.items():
        path = wd / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        if name.startswith("program"):
            program_file = path
    outdir = wd / "out"
    outdir.mkdir()
    factdir = wd / "facts"
    factdir.mkdir(exist_ok=True)
    cmd = [spec.executable] + [
        a.format(program=program_file, factdir=factdir, outdir=outdir)
        for a in spec.args_template
    ]
    try:
        proc = subprocess.run(
            cmd, capture_output=True, text=True, timeout=spec.timeout_s, cwd=wd
        )
    except subprocess.TimeoutExpired:
        return TimeoutOutcome(spec.timeout_s)
    except OSError as e:
        raise EngineSpawnError(str(e)) from e
    if proc.returncode != 0:
        matched = _classify_error(spec, proc.stdout, proc.stderr)
        if matched is not None:
            return SemanticErrorOutcome(proc.stderr.strip() or proc.stdout.strip(), matched)
        return CrashOutcome(proc.returncode, proc.stdout, proc.stderr)
    out_artifacts = {"stdout": proc.stdout}
    for f in sorted(outdir.iterdir()):
        out_artifacts[f.name] = f.read_text()
    try:
        store = parse_facts(out_artifacts, decls, outputs, spec.dialect)
    except Exception as e:  # noqa: BLE001 - any malformed output is a parse failure
        return ParseFailureOutcome(f"{type(e).__name__}: {e}")
    return FactsOutcome(store, proc.stdout, proc.stderr)


class EngineSpawnError(Exception):
    """Engine binary missing or not runnable: a configuration error that
    aborts the campaign rather than producing a bug report."""


# --- Adapters ---------------------------------------------------------------


class EmbeddedAdapter:
    """In-process engine-under-test.  Reference programs run through the
    same evaluate() with the same configuration, injected bugs included;
    only strip mode turns the rewrites off for references."""

    def __init__(
        self,
        opt: OptConfig | None = None,
        timeout_s: float = 30.0,
        strip_for_reference: bool = False,
    ):
        self.spec = EngineSpec(timeout_s=timeout_s)
        self.opt = opt or OptConfig()
        self.strip_for_reference = strip_for_reference
        self.dialect = EMBEDDED

    def run(self, program: Program, role: str = "optimized", tag: str = "") -> RunOutcome:
        opt = self.opt
        if role == "reference" and self.strip_for_reference:
            opt = opt.with_optimizations_stripped()
        deadline = time.monotonic() + self.spec.timeout_s
        try:
            store = evaluate(program, program.edb_store(), opt, deadline=deadline)
            return FactsOutcome(store)
        except Unstratifiable as e:
            return SemanticErrorOutcome(str(e), matched="unstratifiable")
        except EvalTimeout:
            return TimeoutOutcome(self.spec.timeout_s)
        except SemanticError as e:
            matched = e.kind if e.kind in _EMBEDDED_CATALOG else None
            return SemanticErrorOutcome(str(e), matched)
        except Exception as e:  # noqa: BLE001 - engine internal error
            return CrashOutcome(-1, "", f"{type(e).__name__}: {e}")


class SubprocessAdapter:
    """Render, invoke, parse for an external engine binary."""

    def __init__(
        self,
        spec: EngineSpec,
        workdir_root: str | Path,
        strip_for_reference: bool = False,
    ):
        self.spec = spec
        self.dialect = spec.dialect
        self.workdir_root = Path(workdir_root)
        self.strip_for_reference = strip_for_reference
        self._counter = 0

    def run(self, program: Program, role: str = "optimized", tag: str = "") -> RunOutcome:
        strip = role == "reference" and self.strip_for_reference
        artifacts = render_program(program, self.dialect, role, strip_annotations=strip)
        self._counter += 1
        name = tag or f"case{self._counter:06d}"
        workdir = self.workdir_root / f"{name}_{role}_{self._counter:06d}"
        outcome = invoke_engine(
            self.spec, artifacts, workdir, program.all_outputs(), program.decls
        )
        if isinstance(outcome, FactsOutcome):
            import shutil

            shutil.rmtree(workdir, ignore_errors=True)
        return outcome


def build_adapter(
    spec: EngineSpec,
    workdir_root: str | Path,
    opt: OptConfig | None = None,
    strip_for_reference: bool = False,
):
    if spec.dialect_name == "embedded":
        return EmbeddedAdapter(
            opt=opt, timeout_s=spec.timeout_s, strip_for_reference=strip_for_reference
        )
    return SubprocessAdapter(spec, workdir_root, strip_for_reference)
