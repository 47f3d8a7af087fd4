"""Dialect-neutral abstract syntax and value model for Datalog programs.

Values are 64-bit signed/unsigned integers with wrap-around arithmetic,
IEEE-754 doubles identified by their bit pattern, and strings.  Keeping
floats as raw bits makes fact identity bitwise: -0.0 and 0.0 are distinct
tuples, and two NaNs are equal exactly when their bits are.  That is the
value model several production engines use internally, and it is what makes
sign-of-zero optimizer bugs expressible at all.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

MASK64 = (1 << 64) - 1
SIGN_BIT = 1 << 63

INT = "int"
UINT = "uint"
FLOAT = "float"
SYMBOL = "symbol"

KINDS = (INT, UINT, FLOAT, SYMBOL)
NUMERIC_KINDS = (INT, UINT, FLOAT)

_F64 = struct.Struct("<d")
_U64 = struct.Struct("<Q")


def float_to_bits(x: float) -> int:
    return _U64.unpack(_F64.pack(x))[0]


def bits_to_float(b: int) -> float:
    return _F64.unpack(_U64.pack(b & MASK64))[0]


def _total_order_key(bits: int) -> int:
    # IEEE-754 total order: flip all bits of negatives, set the sign bit of
    # positives; monotone map to unsigned, with -0.0 just below +0.0.
    if bits & SIGN_BIT:
        return ~bits & MASK64
    return bits ^ SIGN_BIT


def wrap_signed(x: int) -> int:
    return ((x + (1 << 63)) & MASK64) - (1 << 63)


def wrap_unsigned(x: int) -> int:
    return x & MASK64


class SemanticError(Exception):
    """Evaluation error an engine is expected to report (not a crash)."""

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}{': ' + detail if detail else ''}")
        self.kind = kind
        self.detail = detail


@dataclass(frozen=True, slots=True)
class Value:
    """One constant.  payload is an int for int/uint, raw bits for float,
    and a str for symbol."""

    kind: str
    payload: int | str

    @staticmethod
    def of_int(n: int) -> "Value":
        return Value(INT, wrap_signed(n))

    @staticmethod
    def of_uint(n: int) -> "Value":
        return Value(UINT, wrap_unsigned(n))

    @staticmethod
    def of_float(x: float) -> "Value":
        return Value(FLOAT, float_to_bits(x))

    @staticmethod
    def of_float_bits(b: int) -> "Value":
        return Value(FLOAT, b & MASK64)

    @staticmethod
    def of_symbol(s: str) -> "Value":
        if "\t" in s or "\n" in s or "\0" in s:
            raise ValueError(f"symbol contains a fact-file delimiter: {s!r}")
        return Value(SYMBOL, s)

    def as_float(self) -> float:
        assert self.kind == FLOAT
        return bits_to_float(self.payload)  # type: ignore[arg-type]

    def sort_key(self) -> tuple:
        if self.kind == FLOAT:
            return (self.kind, _total_order_key(self.payload))  # type: ignore[arg-type]
        return (self.kind, self.payload)

    def __repr__(self) -> str:
        if self.kind == FLOAT:
            return f"F({format_float(self.payload)})"  # type: ignore[arg-type]
        if self.kind == SYMBOL:
            return repr(self.payload)
        return str(self.payload)


def format_float(bits: int) -> str:
    """Shortest round-trip text for a float given as bits, with an explicit
    sign for negative zero and stable spellings for non-finite values."""
    x = bits_to_float(bits)
    if math.isnan(x):
        return "nan" if not (bits & SIGN_BIT) else "-nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:
        return "-0" if bits & SIGN_BIT else "0"
    return repr(x)


def parse_value(token: str, kind: str) -> Value:
    if kind == INT:
        return Value.of_int(int(token))
    if kind == UINT:
        return Value.of_uint(int(token))
    if kind == FLOAT:
        t = token.strip()
        if t in ("nan", "+nan"):
            return Value.of_float_bits(float_to_bits(math.nan))
        if t == "-nan":
            return Value.of_float_bits(float_to_bits(math.nan) | SIGN_BIT)
        return Value.of_float(float(t))
    if kind == SYMBOL:
        return Value.of_symbol(token)
    raise ValueError(f"unknown kind {kind!r}")


def sort_tuples(tuples) -> list:
    return sorted(tuples, key=lambda t: tuple(v.sort_key() for v in t))


# --- Terms -----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Wildcard:
    pass


WILDCARD = Wildcard()


@dataclass(frozen=True, slots=True)
class Const:
    value: Value


@dataclass(frozen=True, slots=True)
class Arith:
    """op is one of + - * / % ^ for binary nodes, or neg for unary."""

    op: str
    args: tuple


Term = Var | Wildcard | Const | Arith

ARITH_BINOPS = ("+", "-", "*", "/", "%", "^")


def term_vars(term: Term) -> list[str]:
    """Variable names in first-occurrence order."""
    out: list[str] = []

    def walk(t: Term) -> None:
        if isinstance(t, Var):
            if t.name not in out:
                out.append(t.name)
        elif isinstance(t, Arith):
            for a in t.args:
                walk(a)

    walk(term)
    return out


def _int_pow(base: int, exp: int, signed: bool) -> int:
    if exp < 0:
        # Repeated multiplication has no negative-exponent case; use the
        # truncating convention so the function stays total.
        if base == 1:
            return 1
        if base == -1 and signed:
            return -1 if exp % 2 else 1
        return 0
    r = pow(base & MASK64, exp, 1 << 64)
    return wrap_signed(r) if signed else r


def _float_binop(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            if a == 0.0 or math.isnan(a):
                return math.nan
            sign = math.copysign(1.0, a) * math.copysign(1.0, b)
            return math.inf if sign > 0 else -math.inf
        return a / b
    if op == "%":
        if b == 0.0 or math.isinf(a):
            return math.nan
        try:
            return math.fmod(a, b)
        except ValueError:
            return math.nan
    if op == "^":
        try:
            return math.pow(a, b)
        except OverflowError:
            return math.inf
        except ValueError:
            return math.nan
    raise ValueError(f"unknown float op {op!r}")


def eval_term(term: Term, binding: dict[str, Value]) -> Value:
    """Evaluate a ground term.  Integer arithmetic wraps modulo 2**64;
    division or modulo by integer zero raises SemanticError, matching what
    engines report.  Float arithmetic follows IEEE-754 (x/0 is inf, NaN
    results allowed)."""
    if isinstance(term, Const):
        return term.value
    if isinstance(term, Var):
        return binding[term.name]
    if isinstance(term, Wildcard):
        raise ValueError("wildcard cannot be evaluated")
    assert isinstance(term, Arith)
    if term.op == "neg":
        v = eval_term(term.args[0], binding)
        if v.kind == INT:
            return Value.of_int(-v.payload)  # type: ignore[operator]
        if v.kind == UINT:
            return Value.of_uint(-v.payload)  # type: ignore[operator]
        if v.kind == FLOAT:
            return Value.of_float_bits(v.payload ^ SIGN_BIT)  # type: ignore[operator]
        raise ValueError(f"cannot negate {v.kind}")
    a = eval_term(term.args[0], binding)
    b = eval_term(term.args[1], binding)
    if a.kind != b.kind:
        raise ValueError(f"mixed-kind arithmetic: {a.kind} {term.op} {b.kind}")
    op = term.op
    if a.kind == FLOAT:
        return Value.of_float(_float_binop(op, a.as_float(), b.as_float()))
    if a.kind not in (INT, UINT):
        raise ValueError(f"no arithmetic on {a.kind}")
    signed = a.kind == INT
    x, y = a.payload, b.payload
    if op == "+":
        r = x + y
    elif op == "-":
        r = x - y
    elif op == "*":
        r = x * y
    elif op == "/":
        if y == 0:
            raise SemanticError("div_zero")
        q = abs(x) // abs(y)
        r = -q if (x < 0) != (y < 0) else q
    elif op == "%":
        if y == 0:
            raise SemanticError("mod_zero")
        q = abs(x) // abs(y)
        q = -q if (x < 0) != (y < 0) else q
        r = x - q * y
    elif op == "^":
        return Value(a.kind, _int_pow(x, y, signed))  # type: ignore[arg-type]
    else:
        raise ValueError(f"unknown op {op!r}")
    return Value.of_int(r) if signed else Value.of_uint(r)


CMP_OPS = ("<", "<=", ">", ">=", "=", "!=")


def compare_values(op: str, a: Value, b: Value, float_numeric: bool = False) -> bool:
    """Ordering comparison.  Floats use the IEEE total order by default
    (-0.0 < 0.0, NaNs ordered by bits); float_numeric switches to plain
    IEEE numeric comparison, which is the semantics the injected magic-set
    bug applies."""
    if a.kind != b.kind:
        raise ValueError(f"mixed-kind comparison: {a.kind} {op} {b.kind}")
    if a.kind == FLOAT:
        if float_numeric:
            ka, kb = a.as_float(), b.as_float()
        else:
            ka, kb = _total_order_key(a.payload), _total_order_key(b.payload)  # type: ignore[arg-type]
    else:
        ka, kb = a.payload, b.payload
    if op == "<":
        return ka < kb
    if op == "<=":
        return ka <= kb
    if op == ">":
        return ka > kb
    if op == ">=":
        return ka >= kb
    if op == "=":
        return ka == kb
    if op == "!=":
        return ka != kb
    raise ValueError(f"unknown comparison {op!r}")


# --- Literals, rules, programs ---------------------------------------------


@dataclass(frozen=True, slots=True)
class Atom:
    rel: str
    terms: tuple
    negated: bool = False


@dataclass(frozen=True, slots=True)
class Constraint:
    op: str
    lhs: Term
    rhs: Term


Literal = Atom | Constraint


@dataclass(frozen=True, slots=True)
class RelationDecl:
    """attrs is a tuple of (attribute name, value kind).  is_input marks
    skeleton relations fed by facts; internal marks helper relations a
    rewrite introduced, which never appear in results."""

    name: str
    attrs: tuple
    annotations: frozenset = frozenset()
    is_input: bool = False
    internal: bool = False

    @property
    def arity(self) -> int:
        return len(self.attrs)

    @property
    def kinds(self) -> tuple:
        return tuple(k for _, k in self.attrs)


@dataclass(frozen=True, slots=True)
class Rule:
    rule_id: int
    head: Atom
    body: tuple
    magic_generated: bool = False

    def body_atoms(self) -> list[Atom]:
        return [l for l in self.body if isinstance(l, Atom)]

    def body_rels(self) -> list[str]:
        seen: list[str] = []
        for a in self.body_atoms():
            if a.rel not in seen:
                seen.append(a.rel)
        return seen


@dataclass(frozen=True, slots=True)
class SubsumptionRule:
    """dominated <= dominating :- condition.  A tuple matching the dominated
    pattern is deleted when a distinct tuple matches the dominating pattern
    under a shared binding and the condition holds."""

    rule_id: int
    rel: str
    dominated: tuple
    dominating: tuple
    condition: tuple


RuleLike = Rule | SubsumptionRule


def rule_head_rel(rule: RuleLike) -> str:
    return rule.rel if isinstance(rule, SubsumptionRule) else rule.head.rel


def rule_body_rels_with_polarity(rule: RuleLike) -> list[tuple[str, bool]]:
    """(relation, negated) pairs the rule reads, in occurrence order."""
    if isinstance(rule, SubsumptionRule):
        return [(rule.rel, False)]
    return [(a.rel, a.negated) for a in rule.body_atoms()]


class FactStore:
    """relation -> set of Value tuples, with set semantics per relation."""

    __slots__ = ("data", "_index")

    def __init__(self, data: dict | None = None):
        self.data: dict[str, set] = data if data is not None else {}
        # (rel, positions) -> (set object, size at build, key -> tuple list);
        # entries are validated by identity plus size, so in-place growth and
        # wholesale replacement both force a rebuild
        self._index: dict = {}

    def add(self, rel: str, tup: tuple) -> bool:
        s = self.data.setdefault(rel, set())
        if tup in s:
            return False
        s.add(tup)
        return True

    def add_many(self, rel: str, tuples) -> None:
        self.data.setdefault(rel, set()).update(tuples)

    def get(self, rel: str) -> set:
        return self.data.get(rel, set())

    def indexed(self, rel: str, positions: tuple) -> dict | None:
        """Tuples of rel hashed by the values at the given positions, or None
        for an empty relation.  Rebuilt lazily whenever the relation changed."""
        facts = self.data.get(rel)
        if not facts:
            return None
        cached = self._index.get((rel, positions))
        if cached is not None and cached[0] is facts and cached[1] == len(facts):
            return cached[2]
        mapping: dict = {}
        for tup in facts:
            mapping.setdefault(tuple(tup[i] for i in positions), []).append(tup)
        self._index[(rel, positions)] = (facts, len(facts), mapping)
        return mapping

    def set_rel(self, rel: str, tuples) -> None:
        self.data[rel] = set(tuples)

    def rels(self) -> list[str]:
        return sorted(self.data)

    def copy(self) -> "FactStore":
        return FactStore({r: set(s) for r, s in self.data.items()})

    def sorted_tuples(self, rel: str) -> list:
        return sort_tuples(self.get(rel))

    def total_size(self) -> int:
        return sum(len(s) for s in self.data.values())

    def nonempty(self) -> dict[str, set]:
        return {r: s for r, s in self.data.items() if s}

    def __eq__(self, other) -> bool:
        if not isinstance(other, FactStore):
            return NotImplemented
        return self.nonempty() == other.nonempty()

    def __repr__(self) -> str:
        parts = []
        for r in self.rels():
            if self.data[r]:
                parts.append(f"{r}={self.sorted_tuples(r)}")
        return "FactStore(" + ", ".join(parts) + ")"


@dataclass
class Program:
    decls: dict[str, RelationDecl] = field(default_factory=dict)
    facts: list[tuple[str, tuple]] = field(default_factory=list)
    rules: list[Rule] = field(default_factory=list)
    subsumptions: list[SubsumptionRule] = field(default_factory=list)
    output_rel: str | None = None
    # reference programs built from a recursive component observe every head
    # relation at once; output_rel stays the single relation under test
    output_rels: tuple[str, ...] = ()

    def all_outputs(self) -> list[str]:
        if self.output_rels:
            return list(self.output_rels)
        return [self.output_rel] if self.output_rel is not None else []

    def edb_store(self) -> FactStore:
        store = FactStore()
        for rel, tup in self.facts:
            store.add(rel, tup)
        return store

    def rules_for(self, rel: str) -> list[Rule]:
        return [r for r in self.rules if r.head.rel == rel]

    def subs_for(self, rel: str) -> list[SubsumptionRule]:
        return [s for s in self.subsumptions if s.rel == rel]

    def all_rule_nodes(self) -> list[RuleLike]:
        nodes: list[RuleLike] = list(self.rules) + list(self.subsumptions)
        nodes.sort(key=lambda r: r.rule_id)
        return nodes

    def rule_by_id(self, rule_id: int) -> RuleLike:
        for r in self.all_rule_nodes():
            if r.rule_id == rule_id:
                return r
        raise KeyError(rule_id)

    def clone(self) -> "Program":
        return Program(
            decls=dict(self.decls),
            facts=list(self.facts),
            rules=list(self.rules),
            subsumptions=list(self.subsumptions),
            output_rel=self.output_rel,
            output_rels=self.output_rels,
        )

    def validate(self) -> None:
        """Raise ValueError on a structurally broken program."""
        for rel, tup in self.facts:
            decl = self.decls.get(rel)
            if decl is None:
                raise ValueError(f"fact for undeclared relation {rel}")
            if len(tup) != decl.arity:
                raise ValueError(f"fact arity mismatch for {rel}: {tup}")
            for v, k in zip(tup, decl.kinds):
                if v.kind != k:
                    raise ValueError(f"fact kind mismatch for {rel}: {tup}")
        for rule in self.rules:
            for atom in [rule.head] + rule.body_atoms():
                decl = self.decls.get(atom.rel)
                if decl is None:
                    raise ValueError(
                        f"rule {rule.rule_id} uses undeclared relation {atom.rel}"
                    )
                if len(atom.terms) != decl.arity:
                    raise ValueError(
                        f"rule {rule.rule_id} arity mismatch on {atom.rel}"
                    )
            bad = check_safety(rule)
            if bad is not None:
                raise ValueError(f"rule {rule.rule_id} unsafe: variable {bad}")
        for sub in self.subsumptions:
            decl = self.decls.get(sub.rel)
            if decl is None:
                raise ValueError(f"subsumption on undeclared relation {sub.rel}")
            if len(sub.dominated) != decl.arity or len(sub.dominating) != decl.arity:
                raise ValueError(f"subsumption arity mismatch on {sub.rel}")
            pattern_vars = set()
            for t in sub.dominated + sub.dominating:
                pattern_vars.update(term_vars(t))
            for c in sub.condition:
                for name in term_vars(c.lhs) + term_vars(c.rhs):
                    if name not in pattern_vars:
                        raise ValueError(
                            f"subsumption condition variable {name} unbound"
                        )
        if self.output_rel is not None and self.output_rel not in self.decls:
            raise ValueError(f"output relation {self.output_rel} undeclared")
        for rel in self.output_rels:
            if rel not in self.decls:
                raise ValueError(f"output relation {rel} undeclared")


def check_safety(rule: Rule) -> str | None:
    """Return None when the rule is safe, else the first variable (in
    occurrence order, head first) that no positive body atom grounds.
    Only a variable standing directly in a positive atom argument counts
    as grounded; one buried in arithmetic does not bind anything."""
    grounded: set[str] = set()
    for lit in rule.body:
        if isinstance(lit, Atom) and not lit.negated:
            for t in lit.terms:
                if isinstance(t, Var):
                    grounded.add(t.name)

    needed: list[str] = []

    def need(names) -> None:
        for n in names:
            if n not in needed:
                needed.append(n)

    for t in rule.head.terms:
        if isinstance(t, Wildcard):
            return "_"
        need(term_vars(t))
    for lit in rule.body:
        if isinstance(lit, Atom):
            for t in lit.terms:
                if lit.negated:
                    need(term_vars(t))
                elif isinstance(t, Arith):
                    # computed argument: acts as a filter, cannot bind
                    need(term_vars(t))
        else:
            need(term_vars(lit.lhs) + term_vars(lit.rhs))
    for name in needed:
        if name not in grounded:
            return name
    return None


@dataclass(frozen=True, slots=True)
class Discrepancy:
    only_in_a: tuple
    only_in_b: tuple


def diff_fact_sets(a: FactStore, b: FactStore, rel: str) -> Discrepancy | None:
    """None when the two stores agree on rel, else the symmetric difference
    with each side sorted canonically."""
    sa, sb = a.get(rel), b.get(rel)
    if sa == sb:
        return None
    return Discrepancy(
        only_in_a=tuple(sort_tuples(sa - sb)),
        only_in_b=tuple(sort_tuples(sb - sa)),
    )
