"""Embedded bottom-up Datalog engine with injectable optimization bugs.

Two evaluators share one semantics: evaluate_naive re-derives everything
each round and ignores optimization settings entirely, while evaluate runs
delta-driven semi-naive rounds and optionally applies a magic-sets-like
demand rewrite and single-rule inlining first.  Bug-free they agree exactly,
which is property-tested; each entry in the bug catalog perturbs only the
whole-program path, so single-rule reference programs stay correct and the
differential harness can catch the bug.

Subsumption is treated as semantics, not an optimization: both evaluators
apply it as a post-fixpoint deletion pass per stratum.  The
enable_subsumption flag exists for configuration fidelity and changes
nothing while no bug is injected.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from .datalog_ir import (
    Arith,
    Atom,
    Const,
    Constraint,
    FactStore,
    Program,
    RelationDecl,
    Rule,
    SemanticError,
    SubsumptionRule,
    Term,
    Value,
    Var,
    Wildcard,
    compare_values,
    check_safety,
    eval_term,
    term_vars,
)
from .stratify import PrecedenceGraph, _tarjan_sccs

BUG_SEMINAIVE_DELTA = "BUG_SEMINAIVE_DELTA"
BUG_MAGIC_NEGZERO = "BUG_MAGIC_NEGZERO"
BUG_SUBSUME_UNDER_MAGIC = "BUG_SUBSUME_UNDER_MAGIC"
BUG_INLINE_DROP_LITERAL = "BUG_INLINE_DROP_LITERAL"

BUG_CATALOG = (
    BUG_SEMINAIVE_DELTA,
    BUG_MAGIC_NEGZERO,
    BUG_SUBSUME_UNDER_MAGIC,
    BUG_INLINE_DROP_LITERAL,
)


class EngineError(Exception):
    pass


class Unstratifiable(EngineError):
    pass


class EvalTimeout(EngineError):
    pass


# Deterministic resource budgets.  Runaway join products and fact blowups
# would exhaust memory long before any wall-clock deadline fires, and a
# count-based cutoff trips at the same point on every machine, which keeps
# rerun output stable.  Exceeding one is reported exactly like a timeout.
MAX_BINDINGS = 500_000
MAX_TOTAL_FACTS = 500_000
MAX_SUBSUMPTION_FACTS = 2_000


@dataclass(frozen=True)
class OptConfig:
    enable_magic: bool = False
    enable_inline: bool = False
    enable_subsumption: bool = False
    injected_bugs: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "injected_bugs", frozenset(self.injected_bugs))
        unknown = set(self.injected_bugs) - set(BUG_CATALOG)
        if unknown:
            raise ValueError(f"unknown bug ids: {sorted(unknown)}")

    def with_optimizations_stripped(self) -> "OptConfig":
        return OptConfig(
            enable_magic=False,
            enable_inline=False,
            enable_subsumption=self.enable_subsumption,
            injected_bugs=self.injected_bugs,
        )


# --- Relation-level stratification -----------------------------------------


def relation_strata(program: Program) -> list[list[str]]:
    """Strata of relation names, lowest first.  Raises Unstratifiable when
    a negated dependency sits inside a relation-level cycle, which is the
    class of programs this engine rejects."""
    names = sorted(program.decls)
    index = {n: i for i, n in enumerate(names)}
    g = PrecedenceGraph()
    g.nodes = set(range(len(names)))
    for rule in program.rules:
        head = index[rule.head.rel]
        for lit in rule.body:
            if isinstance(lit, Atom):
                g.add_edge(index[lit.rel], head, lit.negated)
    sccs = _tarjan_sccs(g)
    comp_of: dict[int, int] = {}
    for ci, comp in enumerate(sccs):
        for n in comp:
            comp_of[n] = ci
    for (s, d), neg in g.edges.items():
        if neg and comp_of[s] == comp_of[d]:
            raise Unstratifiable(
                f"negation inside recursion through {names[d]}"
            )
    # longest-path layering over the SCC DAG
    level = [0] * len(sccs)
    indeg = [0] * len(sccs)
    succs: dict[int, set[int]] = {i: set() for i in range(len(sccs))}
    for (s, d), _neg in g.edges.items():
        cs, cd = comp_of[s], comp_of[d]
        if cs != cd:
            succs[cs].add(cd)
    for cs, outs in succs.items():
        for cd in outs:
            indeg[cd] += 1
    queue = sorted(i for i in range(len(sccs)) if indeg[i] == 0)
    while queue:
        node = queue.pop(0)
        for d in sorted(succs[node]):
            level[d] = max(level[d], level[node] + 1)
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
        queue.sort()
    depth = max(level, default=-1) + 1
    strata: list[list[str]] = [[] for _ in range(depth)]
    for ci, comp in enumerate(sccs):
        for n in comp:
            strata[level[ci]].append(names[n])
    for layer in strata:
        layer.sort()
    return strata


# --- Rule evaluation core ---------------------------------------------------


def _order_positive_atoms(rule: Rule) -> list[Atom]:
    """Positive atoms in an order where every computed argument only uses
    variables a previously placed atom (or the same atom) binds directly.
    Safe rules always admit such an order."""
    remaining = [a for a in rule.body if isinstance(a, Atom) and not a.negated]
    ordered: list[Atom] = []
    bound: set[str] = set()
    while remaining:
        picked = None
        for a in remaining:
            own_direct = {
                t.name for t in a.terms if isinstance(t, Var)
            }
            needed: set[str] = set()
            for t in a.terms:
                if isinstance(t, Arith):
                    needed.update(term_vars(t))
            if needed <= bound | own_direct:
                picked = a
                break
        if picked is None:
            picked = remaining[0]  # unsafe rule; evaluation will fail loudly
        remaining.remove(picked)
        ordered.append(picked)
        for t in picked.terms:
            if isinstance(t, Var):
                bound.add(t.name)
    return ordered


def _match_atom(atom: Atom, tup: tuple, binding: dict) -> dict | None:
    """Two-phase unification: plain variables first so computed arguments of
    the same atom can see them."""
    new = dict(binding)
    deferred: list[tuple[Term, Value]] = []
    for term, val in zip(atom.terms, tup):
        if isinstance(term, Wildcard):
            continue
        if isinstance(term, Var):
            cur = new.get(term.name)
            if cur is None:
                new[term.name] = val
            elif cur != val:
                return None
        elif isinstance(term, Const):
            if term.value != val:
                return None
        else:
            deferred.append((term, val))
    for term, val in deferred:
        if eval_term(term, new) != val:
            return None
    return new


def _negative_matches(atom: Atom, store: FactStore, binding: dict) -> bool:
    for tup in store.get(atom.rel):
        ok = True
        for term, val in zip(atom.terms, tup):
            if isinstance(term, Wildcard):
                continue
            if isinstance(term, Var):
                if binding[term.name] != val:
                    ok = False
                    break
            elif isinstance(term, Const):
                if term.value != val:
                    ok = False
                    break
            else:
                if eval_term(term, binding) != val:
                    ok = False
                    break
        if ok:
            return True
    return False


def rule_bindings(
    rule: Rule,
    store: FactStore,
    float_numeric: bool = False,
    deadline: float | None = None,
) -> list[dict]:
    bindings: list[dict] = [{}]
    bound: set[str] = set()
    for atom in _order_positive_atoms(rule):
        # probe by the positions already determined at this point of the join;
        # residual positions (fresh vars, wildcards, computed terms) are left
        # to _match_atom
        key_pos = tuple(
            i
            for i, t in enumerate(atom.terms)
            if isinstance(t, Const) or (isinstance(t, Var) and t.name in bound)
        )
        index = store.indexed(atom.rel, key_pos) if key_pos else None
        rel_facts = store.get(atom.rel) if index is None else None
        keyed = [atom.terms[i] for i in key_pos]
        nxt: list[dict] = []
        for b in bindings:
            if index is None:
                candidates = rel_facts
            else:
                candidates = index.get(
                    tuple(
                        t.value if isinstance(t, Const) else b[t.name] for t in keyed
                    ),
                    (),
                )
            for tup in candidates:
                m = _match_atom(atom, tup, b)
                if m is not None:
                    nxt.append(m)
                    if len(nxt) > MAX_BINDINGS:
                        raise EvalTimeout(
                            f"rule {rule.rule_id}: over {MAX_BINDINGS} join bindings"
                        )
        bindings = nxt
        if not bindings:
            return []
        for t in atom.terms:
            if isinstance(t, Var):
                bound.add(t.name)
    for lit in rule.body:
        if isinstance(lit, Constraint):
            bindings = [
                b
                for b in bindings
                if compare_values(
                    lit.op,
                    eval_term(lit.lhs, b),
                    eval_term(lit.rhs, b),
                    float_numeric=float_numeric,
                )
            ]
        elif lit.negated:
            key_pos = tuple(
                i for i, t in enumerate(lit.terms) if isinstance(t, (Var, Const))
            )
            index = store.indexed(lit.rel, key_pos) if key_pos else None
            keyed = [lit.terms[i] for i in key_pos]
            kept = []
            for i, b in enumerate(bindings):
                if i % 4096 == 0:
                    _check_deadline(deadline)
                if index is None:
                    hit = _negative_matches(lit, store, b)
                else:
                    cands = index.get(
                        tuple(
                            t.value if isinstance(t, Const) else b[t.name]
                            for t in keyed
                        ),
                        (),
                    )
                    hit = any(_match_atom(lit, tup, b) is not None for tup in cands)
                if not hit:
                    kept.append(b)
            bindings = kept
        if not bindings:
            return []
    return bindings


def rule_derive(
    rule: Rule,
    store: FactStore,
    float_numeric: bool = False,
    deadline: float | None = None,
) -> set:
    out = set()
    for b in rule_bindings(rule, store, float_numeric, deadline):
        out.add(tuple(eval_term(t, b) for t in rule.head.terms))
    return out


# --- Subsumption ------------------------------------------------------------


def _match_pattern(terms: tuple, tup: tuple, binding: dict) -> dict | None:
    new = dict(binding)
    for term, val in zip(terms, tup):
        if isinstance(term, Wildcard):
            continue
        if isinstance(term, Const):
            if term.value != val:
                return None
        elif isinstance(term, Var):
            cur = new.get(term.name)
            if cur is None:
                new[term.name] = val
            elif cur != val:
                return None
        else:
            raise ValueError("subsumption patterns take variables and constants only")
    return new


def apply_subsumption(rel_facts, sub: SubsumptionRule, deadline: float | None = None) -> set:
    """Delete every tuple dominated by a distinct tuple under the rule's
    condition.  Deletions within a round are simultaneous and rounds repeat
    to a fixpoint, so the result does not depend on iteration order."""
    current = set(rel_facts)
    if len(current) > MAX_SUBSUMPTION_FACTS:
        raise EvalTimeout(
            f"subsumption on {sub.rel}: over {MAX_SUBSUMPTION_FACTS} facts"
        )
    while True:
        doomed = set()
        for t1 in current:
            _check_deadline(deadline)
            for t2 in current:
                if t1 == t2:
                    continue
                b = _match_pattern(sub.dominated, t1, {})
                if b is None:
                    continue
                b2 = _match_pattern(sub.dominating, t2, b)
                if b2 is None:
                    continue
                if all(
                    compare_values(c.op, eval_term(c.lhs, b2), eval_term(c.rhs, b2))
                    for c in sub.condition
                ):
                    doomed.add(t1)
                    break
        if not doomed:
            return current
        current -= doomed


def _sub_stratum(program: Program, strata: list[list[str]]) -> dict[int, list[SubsumptionRule]]:
    """Map stratum index -> subsumption passes to run after its fixpoint."""
    where: dict[str, int] = {}
    for i, layer in enumerate(strata):
        for rel in layer:
            where[rel] = i
    out: dict[int, list[SubsumptionRule]] = {}
    for sub in program.subsumptions:
        out.setdefault(where.get(sub.rel, 0), []).append(sub)
    for lst in out.values():
        lst.sort(key=lambda s: s.rule_id)
    return out


# --- Naive evaluation -------------------------------------------------------


def _load_inputs(program: Program, edb: FactStore) -> FactStore:
    store = edb.copy()
    for rel, tup in program.facts:
        store.add(rel, tup)
    return store


def _check_deadline(deadline: float | None) -> None:
    if deadline is not None and time.monotonic() > deadline:
        raise EvalTimeout("evaluation deadline exceeded")


def evaluate_naive(
    program: Program, edb: FactStore, deadline: float | None = None
) -> FactStore:
    """Brute-force least fixpoint: per stratum, re-derive everything from
    the full store until a round adds nothing.  The in-repo ground truth."""
    program.validate()
    strata = relation_strata(program)
    store = _load_inputs(program, edb)
    subs_at = _sub_stratum(program, strata)
    for i, layer in enumerate(strata):
        rels = set(layer)
        rules = sorted(
            (r for r in program.rules if r.head.rel in rels), key=lambda r: r.rule_id
        )
        while True:
            _check_deadline(deadline)
            changed = False
            for rule in rules:
                for tup in rule_derive(rule, store, deadline=deadline):
                    changed |= store.add(rule.head.rel, tup)
            if store.total_size() > MAX_TOTAL_FACTS:
                raise EvalTimeout(f"over {MAX_TOTAL_FACTS} facts in store")
            if not changed:
                break
        for sub in subs_at.get(i, []):
            store.set_rel(
                sub.rel, apply_subsumption(store.get(sub.rel), sub, deadline)
            )
    return store


# --- Magic-sets-like rewrite ------------------------------------------------


def _fresh_name(base: str, taken) -> str:
    name = base
    while name in taken:
        name += "_"
    return name


def _cone(program: Program) -> tuple[list[str], list[Rule]] | None:
    """Relations and rules reachable backward from the output relation, or
    None when the rewrite does not apply (no output, no defining rules,
    negation or recursion inside the cone)."""
    out = program.output_rel
    if out is None or not program.rules_for(out):
        return None
    rels: list[str] = []
    queue = [out]
    while queue:
        rel = queue.pop(0)
        if rel in rels:
            continue
        rels.append(rel)
        for rule in program.rules_for(rel):
            for lit in rule.body:
                if isinstance(lit, Atom):
                    if lit.negated:
                        return None
                    if lit.rel not in rels and lit.rel not in queue:
                        queue.append(lit.rel)
    cone_rules = sorted(
        (r for rel in rels for r in program.rules_for(rel)),
        key=lambda r: r.rule_id,
    )
    # reject recursion among cone relations
    index = {n: i for i, n in enumerate(sorted(rels))}
    g = PrecedenceGraph()
    g.nodes = set(index.values())
    for rule in cone_rules:
        for lit in rule.body:
            if isinstance(lit, Atom) and lit.rel in index:
                g.add_edge(index[lit.rel], index[rule.head.rel], False)
    for comp in _tarjan_sccs(g):
        if len(comp) > 1:
            return None
    for n in g.nodes:
        if (n, n) in g.edges:
            return None
    return rels, cone_rules


def _bound_positions(rule: Rule, atom_index: int) -> set[int]:
    """Positions of the atom whose argument is a constant or a variable some
    earlier positive atom of the same rule binds directly."""
    atoms = [a for a in rule.body if isinstance(a, Atom) and not a.negated]
    earlier: set[str] = set()
    for a in atoms[:atom_index]:
        for t in a.terms:
            if isinstance(t, Var):
                earlier.add(t.name)
    bound = set()
    for i, t in enumerate(atoms[atom_index].terms):
        if isinstance(t, Const):
            bound.add(i)
        elif isinstance(t, Var) and t.name in earlier:
            bound.add(i)
    return bound


def magic_rewrite(program: Program) -> Program:
    """Demand-driven specialization toward the output relation, limited to
    non-recursive conjunctive cones; anything else returns the program
    unchanged.

    Two components, both semantics-preserving when bug-free: every cone
    relation's defining rules gain an always-true nullary demand guard, and
    each relation consumed at a bound argument position gets a filter twin
    (copies of its defining rules under an internal name) that the demanding
    occurrences read instead.  The filter rules are marked as
    magic-generated; that marking is where the float-comparison bug class
    lives."""
    cone = _cone(program)
    if cone is None:
        return program
    cone_rels, cone_rules = cone
    cone_rule_ids = {r.rule_id for r in cone_rules}

    has_facts = {rel for rel, _ in program.facts}
    has_subs = {s.rel for s in program.subsumptions}

    def filterable(rel: str) -> bool:
        decl = program.decls.get(rel)
        return (
            decl is not None
            and not decl.is_input
            and rel not in has_facts
            and rel not in has_subs
            and bool(program.rules_for(rel))
        )

    # find relations demanded at a bound position, and the occurrences to swap
    demanded: list[str] = []
    swap_at: set[tuple[int, int]] = set()  # (rule_id, positive-atom index)
    for rule in cone_rules:
        atoms = [a for a in rule.body if isinstance(a, Atom) and not a.negated]
        for i, atom in enumerate(atoms):
            if not filterable(atom.rel):
                continue
            if _bound_positions(rule, i):
                if atom.rel not in demanded:
                    demanded.append(atom.rel)
                swap_at.add((rule.rule_id, i))
    demanded.sort()

    taken = set(program.decls)
    new_decls = dict(program.decls)
    new_facts = list(program.facts)
    next_id = max((r.rule_id for r in program.all_rule_nodes()), default=-1) + 1

    guard_of: dict[str, str] = {}
    for rel in cone_rels:
        if program.rules_for(rel):
            g = _fresh_name(f"mg_g_{rel}", taken)
            taken.add(g)
            guard_of[rel] = g
            new_decls[g] = RelationDecl(g, attrs=(), is_input=True, internal=True)
            new_facts.append((g, ()))

    filter_of: dict[str, str] = {}
    filter_rules: list[Rule] = []
    for rel in demanded:
        f = _fresh_name(f"mg_f_{rel}", taken)
        taken.add(f)
        filter_of[rel] = f
        new_decls[f] = RelationDecl(f, attrs=program.decls[rel].attrs, internal=True)
        for d in program.rules_for(rel):
            filter_rules.append(
                Rule(
                    rule_id=next_id,
                    head=Atom(f, d.head.terms),
                    body=d.body,
                    magic_generated=True,
                )
            )
            next_id += 1

    new_rules: list[Rule] = []
    for rule in program.rules:
        if rule.rule_id not in cone_rule_ids:
            new_rules.append(rule)
            continue
        body: list = []
        guard = guard_of.get(rule.head.rel)
        if guard is not None:
            body.append(Atom(guard, ()))
        atom_idx = 0
        for lit in rule.body:
            if isinstance(lit, Atom) and not lit.negated:
                if (rule.rule_id, atom_idx) in swap_at:
                    lit = Atom(filter_of[lit.rel], lit.terms)
                atom_idx += 1
            body.append(lit)
        new_rules.append(
            Rule(rule.rule_id, rule.head, tuple(body), rule.magic_generated)
        )
    if not guard_of and not filter_rules:
        return program
    return Program(
        decls=new_decls,
        facts=new_facts,
        rules=new_rules + filter_rules,
        subsumptions=list(program.subsumptions),
        output_rel=program.output_rel,
    )


# --- Inline rewrite ---------------------------------------------------------


def _inline_candidates(program: Program) -> dict[str, Rule]:
    """Relations eligible for inlining: defined by exactly one rule, never
    an input or output, not recursive, not negated anywhere, not subject to
    subsumption, and not introduced by another rewrite."""
    has_facts = {rel for rel, _ in program.facts}
    has_subs = {s.rel for s in program.subsumptions}
    negated = set()
    recursive = set()
    names = sorted(program.decls)
    index = {n: i for i, n in enumerate(names)}
    g = PrecedenceGraph()
    g.nodes = set(index.values())
    for rule in program.rules:
        for lit in rule.body:
            if isinstance(lit, Atom):
                if lit.negated:
                    negated.add(lit.rel)
                g.add_edge(index[lit.rel], index[rule.head.rel], False)
    for comp in _tarjan_sccs(g):
        if len(comp) > 1:
            recursive.update(names[n] for n in comp)
    for n in g.nodes:
        if (n, n) in g.edges:
            recursive.add(names[n])
    out: dict[str, Rule] = {}
    for rel in names:
        decl = program.decls[rel]
        rules = program.rules_for(rel)
        if (
            len(rules) == 1
            and not decl.is_input
            and not decl.internal
            and not rules[0].magic_generated
            and rel != program.output_rel
            and rel not in has_facts
            and rel not in has_subs
            and rel not in negated
            and rel not in recursive
        ):
            out[rel] = rules[0]
    return out


def _substitute_term(term: Term, mapping: dict[str, Term]) -> Term:
    if isinstance(term, Var):
        return mapping.get(term.name, term)
    if isinstance(term, Arith):
        return Arith(term.op, tuple(_substitute_term(a, mapping) for a in term.args))
    return term


def _substitute_literal(lit, mapping: dict[str, Term]):
    if isinstance(lit, Atom):
        return Atom(lit.rel, tuple(_substitute_term(t, mapping) for t in lit.terms), lit.negated)
    return Constraint(
        lit.op, _substitute_term(lit.lhs, mapping), _substitute_term(lit.rhs, mapping)
    )


def _expand_occurrence(
    rule: Rule, lit_index: int, definition: Rule, drop_literal: bool, serial: int
) -> list[Rule]:
    """Candidate replacements for one positive atom, most preferred first.
    The buggy variant (inlined body minus its last literal) is only offered
    when it still leaves literals behind."""
    prefix = f"__inl{serial}_"
    rename: dict[str, Term] = {}
    for name in _rule_var_names(definition):
        rename[name] = Var(prefix + name)
    head_terms = [_substitute_term(t, rename) for t in definition.head.terms]
    body_lits = [_substitute_literal(l, rename) for l in definition.body]

    atom = rule.body[lit_index]
    assert isinstance(atom, Atom)
    mapping: dict[str, Term] = {}
    extra: list[Constraint] = []
    for arg, h in zip(atom.terms, head_terms):
        if isinstance(arg, Wildcard):
            continue
        if isinstance(h, Var):
            prior = mapping.get(h.name)
            if prior is None:
                mapping[h.name] = arg
            else:
                extra.append(Constraint("=", prior, arg))
        else:
            extra.append(Constraint("=", arg, h))
    inlined = [_substitute_literal(l, mapping) for l in body_lits]
    extra = [_substitute_literal(c, mapping) for c in extra]

    def build(lits: list) -> Rule:
        body = list(rule.body)
        body[lit_index : lit_index + 1] = lits + list(extra)
        return Rule(rule.rule_id, rule.head, tuple(body), rule.magic_generated)

    variants = []
    if drop_literal and len(inlined) >= 2:
        variants.append(build(inlined[:-1]))
    variants.append(build(inlined))
    return variants


def _rule_var_names(rule: Rule) -> list[str]:
    names: list[str] = []

    def add(t: Term) -> None:
        for n in term_vars(t):
            if n not in names:
                names.append(n)

    for t in rule.head.terms:
        add(t)
    for lit in rule.body:
        if isinstance(lit, Atom):
            for t in lit.terms:
                add(t)
        else:
            add(lit.lhs)
            add(lit.rhs)
    return names


def inline_rewrite(program: Program, drop_literal: bool = False) -> Program:
    """Substitute the bodies of single-rule relations into their consumers.
    Defining rules stay in place so every relation remains materialized and
    results are comparable relation by relation.  drop_literal switches on
    the injected inline bug; a substitution falls back to the faithful form
    whenever the buggy form would be unsafe."""
    current = program
    serial = 0
    for _ in range(len(program.decls) + 1):
        candidates = _inline_candidates(current)
        if not candidates:
            break
        changed = False
        new_rules: list[Rule] = []
        for rule in current.rules:
            if rule.magic_generated:
                new_rules.append(rule)
                continue
            work = rule
            scan = 0
            while True:
                hit = None
                for i, lit in enumerate(work.body):
                    if i < scan:
                        continue
                    if (
                        isinstance(lit, Atom)
                        and not lit.negated
                        and lit.rel in candidates
                        and lit.rel != work.head.rel
                    ):
                        hit = i
                        break
                if hit is None:
                    break
                serial += 1
                replaced = False
                for variant in _expand_occurrence(
                    work, hit, candidates[lit.rel], drop_literal, serial
                ):
                    if check_safety(variant) is None:
                        work = variant
                        changed = True
                        replaced = True
                        break
                if not replaced:
                    scan = hit + 1
            new_rules.append(work)
        if not changed:
            break
        current = Program(
            decls=dict(current.decls),
            facts=list(current.facts),
            rules=new_rules,
            subsumptions=list(current.subsumptions),
            output_rel=current.output_rel,
        )
    return current


# --- Semi-naive evaluation with injected bugs -------------------------------


def evaluate(
    program: Program,
    edb: FactStore,
    opt: OptConfig | None = None,
    deadline: float | None = None,
) -> FactStore:
    """Optimizing evaluation path: optional rewrites, then delta-driven
    semi-naive rounds per stratum, then subsumption passes.  With no bugs
    injected this equals evaluate_naive on every stratifiable program, for
    every combination of the enable flags."""
    opt = opt or OptConfig()
    program.validate()
    bugs = opt.injected_bugs

    p = program
    magic_fired = False
    if opt.enable_magic or BUG_MAGIC_NEGZERO in bugs:
        rewritten = magic_rewrite(p)
        magic_fired = rewritten is not p
        p = rewritten
    if opt.enable_inline:
        p = inline_rewrite(p, drop_literal=BUG_INLINE_DROP_LITERAL in bugs)

    strata = relation_strata(p)
    store = _load_inputs(p, edb)
    subs_at = _sub_stratum(p, strata)
    skip_subs = BUG_SUBSUME_UNDER_MAGIC in bugs and magic_fired
    numeric_in_magic = BUG_MAGIC_NEGZERO in bugs
    delta_bug = BUG_SEMINAIVE_DELTA in bugs

    for i, layer in enumerate(strata):
        rels = set(layer)
        rules = sorted(
            (r for r in p.rules if r.head.rel in rels), key=lambda r: r.rule_id
        )
        delta: dict[str, set] = {}
        first_round = True
        while True:
            _check_deadline(deadline)
            fired_rels = {rel for rel, s in delta.items() if s}
            new_by_rule: list[tuple[Rule, set]] = []
            for rule in rules:
                if not first_round:
                    local = [r for r in rule.body_rels() if r in rels]
                    if not any(r in fired_rels for r in local):
                        continue
                fresh = rule_derive(
                    rule,
                    store,
                    float_numeric=numeric_in_magic and rule.magic_generated,
                    deadline=deadline,
                )
                fresh -= store.get(rule.head.rel)
                if fresh:
                    new_by_rule.append((rule, fresh))
            # shared per-relation delta: every rule defining a relation feeds
            # the same new-facts set, which the semi-naive bug breaks by
            # keeping only the first contributing rule per round
            delta = {}
            contributed: dict[str, int] = {}
            for rule, fresh in new_by_rule:
                rel = rule.head.rel
                if delta_bug and rel in contributed and contributed[rel] != rule.rule_id:
                    continue
                delta.setdefault(rel, set()).update(fresh)
                contributed.setdefault(rel, rule.rule_id)
            if not delta:
                break
            for rel, facts in delta.items():
                store.add_many(rel, facts)
            if store.total_size() > MAX_TOTAL_FACTS:
                raise EvalTimeout(f"over {MAX_TOTAL_FACTS} facts in store")
            first_round = False
        if not skip_subs:
            for sub in subs_at.get(i, []):
                store.set_rel(
                    sub.rel, apply_subsumption(store.get(sub.rel), sub, deadline)
                )

    for rel, decl in p.decls.items():
        if decl.internal:
            store.data.pop(rel, None)
    return store
