"""Incremental program growth with per-rule oracle checking.

An iteration starts from a random skeleton of input relations and facts,
then repeatedly proposes one candidate rule, runs the oracle walk over the
affected dependency cone, and keeps or discards the candidate.  Discarding
rolls back program, graph, and stable facts but never the RNG, so each
attempt sees fresh draws.  Rule ids count up globally and are never
reused.

The random baseline shares the skeleton and candidate machinery but
appends blindly and checks only the finished program.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

from .adapters import (
    FactsOutcome,
    SemanticErrorOutcome,
    outcome_kind,
)
from .datalog_ir import (
    FLOAT,
    INT,
    MASK64,
    SYMBOL,
    UINT,
    Atom,
    Const,
    Arith,
    Constraint,
    FactStore,
    Program,
    RelationDecl,
    Rule,
    SubsumptionRule,
    Value,
    Var,
    WILDCARD,
    check_safety,
)
from .oracle import (
    MaxIterExceeded,
    ReferenceFailure,
    ReferenceSemanticError,
    StableFacts,
    test_oracle_gen,
)
from .stratify import (
    PrecedenceGraph,
    affected_subgraph,
    build_graph,
    condense,
    cycle_stats,
)

# --- Seeding ----------------------------------------------------------------


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-iteration seed independent of worker layout, so any worker count
    replays the same iteration streams."""
    return _splitmix64(_splitmix64(seed & MASK64) ^ (index & MASK64))


# --- Configuration ----------------------------------------------------------


@dataclass
class FeatureProbs:
    negation: float = 0.15
    constraint: float = 0.3
    arithmetic: float = 0.25
    wildcard: float = 0.15
    subsumption: float = 0.05
    annotation: float = 0.05
    const_arg: float = 0.15
    reuse_var: float = 0.6


@dataclass
class ValuePools:
    ints: tuple = tuple(range(10))
    uints: tuple = tuple(range(10))
    floats: tuple = (-2.5, -1.0, -0.0, 0.0, 0.5, 1.5, float("nan"))
    symbols: tuple = ("a", "b", "c", "d")


@dataclass
class SkeletonConfig:
    n_relations: tuple = (1, 3)
    arity: tuple = (1, 3)
    n_facts: tuple = (0, 8)
    kind_weights: tuple = ((INT, 4), (UINT, 2), (FLOAT, 2), (SYMBOL, 2))


@dataclass
class GenConfig:
    max_rules: int = 100
    max_att: float = float("inf")
    p_empty: float = 0.1
    p_head: float = 0.02
    max_iter: int = 100
    seed: int = 0
    features: FeatureProbs = field(default_factory=FeatureProbs)
    pools: ValuePools = field(default_factory=ValuePools)
    skeleton: SkeletonConfig = field(default_factory=SkeletonConfig)


# --- Drawing helpers --------------------------------------------------------


def _weighted_kind(rng: random.Random, weights: tuple) -> str:
    total = sum(w for _, w in weights)
    pick = rng.random() * total
    acc = 0.0
    for kind, w in weights:
        acc += w
        if pick < acc:
            return kind
    return weights[-1][0]


def draw_value(rng: random.Random, kind: str, pools: ValuePools) -> Value:
    if kind == INT:
        return Value.of_int(rng.choice(pools.ints))
    if kind == UINT:
        return Value.of_uint(rng.choice(pools.uints))
    if kind == FLOAT:
        return Value.of_float(rng.choice(pools.floats))
    return Value.of_symbol(rng.choice(pools.symbols))


# --- Skeleton ---------------------------------------------------------------


def gen_skeleton(cfg: GenConfig, rng: random.Random) -> Program:
    """Input relations plus base facts; no rules yet."""
    program = Program()
    n_rel = rng.randint(*cfg.skeleton.n_relations)
    for i in range(n_rel):
        name = f"e{i}"
        arity = rng.randint(*cfg.skeleton.arity)
        kinds = [_weighted_kind(rng, cfg.skeleton.kind_weights) for _ in range(arity)]
        attrs = tuple((f"x{j}", k) for j, k in enumerate(kinds))
        program.decls[name] = RelationDecl(name=name, attrs=attrs, is_input=True)
        n_facts = rng.randint(*cfg.skeleton.n_facts)
        seen = set()
        for _ in range(n_facts):
            tup = tuple(draw_value(rng, k, cfg.pools) for k in kinds)
            if tup not in seen:
                seen.add(tup)
                program.facts.append((name, tup))
    return program


# --- Candidate rules --------------------------------------------------------


def _pick_var(rng: random.Random, env: list, kind: str):
    options = [name for name, k in env if k == kind]
    if not options:
        return None
    return Var(rng.choice(options))


def _gen_subsumption(
    program: Program, rule_id: int, cfg: GenConfig, rng: random.Random
):
    eligible = sorted(
        rel
        for rel, decl in program.decls.items()
        if decl.arity >= 1 and not decl.internal and not program.subs_for(rel)
    )
    if not eligible:
        return None
    rel = rng.choice(eligible)
    decl = program.decls[rel]
    dominated = tuple(Var(f"A{i}") for i in range(decl.arity))
    shared = [rng.random() < 0.5 for _ in range(decl.arity)]
    if all(shared):
        shared[-1] = False
    dominating = tuple(
        Var(f"A{i}") if shared[i] else Var(f"B{i}") for i in range(decl.arity)
    )
    loose = [i for i in range(decl.arity) if not shared[i]]
    j = rng.choice(loose)
    op = rng.choice(("<", "<=", ">", ">="))
    condition = (Constraint(op, Var(f"A{j}"), Var(f"B{j}")),)
    return SubsumptionRule(rule_id, rel, dominated, dominating, condition)


def _head_term(
    rng: random.Random,
    var: Var,
    kind: str,
    cfg: GenConfig,
    allow_arith: bool,
):
    if (
        allow_arith
        and kind in (INT, UINT, FLOAT)
        and rng.random() < cfg.features.arithmetic
    ):
        op = rng.choice(("+", "+", "-", "*", "*", "/", "%"))
        rhs = Const(draw_value(rng, kind, cfg.pools))
        return Arith(op, (var, rhs))
    return var


def gen_candidate_rule(
    program: Program, rule_id: int, cfg: GenConfig, rng: random.Random
) -> tuple:
    """One candidate node plus any fresh relation declarations it needs."""
    f = cfg.features
    if rng.random() < f.subsumption:
        sub = _gen_subsumption(program, rule_id, cfg, rng)
        if sub is not None:
            return sub, {}

    rels = sorted(r for r, d in program.decls.items() if not d.internal)
    env: list = []  # (name, kind) in binding order
    var_counter = 0
    body: list = []
    n_atoms = rng.randint(1, 3)
    for _ in range(n_atoms):
        rel = rng.choice(rels)
        decl = program.decls[rel]
        terms = []
        for _, kind in decl.attrs:
            reuse = _pick_var(rng, env, kind)
            if reuse is not None and rng.random() < f.reuse_var:
                terms.append(reuse)
            elif rng.random() < f.wildcard:
                terms.append(WILDCARD)
            elif rng.random() < f.const_arg:
                terms.append(Const(draw_value(rng, kind, cfg.pools)))
            else:
                name = f"V{var_counter}"
                var_counter += 1
                env.append((name, kind))
                terms.append(Var(name))
        body.append(Atom(rel, tuple(terms)))

    if env and rng.random() < f.negation:
        rel = rng.choice(rels)
        decl = program.decls[rel]
        terms = []
        for _, kind in decl.attrs:
            var = _pick_var(rng, env, kind)
            terms.append(var if var is not None and rng.random() < 0.8 else WILDCARD)
        body.append(Atom(rel, tuple(terms), negated=True))

    n_constraints = 0
    if env and rng.random() < f.constraint:
        n_constraints = 1 + (1 if rng.random() < f.constraint / 2 else 0)
    for _ in range(n_constraints):
        kinds_bound = sorted({k for _, k in env})
        kind = rng.choice(kinds_bound)
        lhs = _pick_var(rng, env, kind)
        other = _pick_var(rng, env, kind)
        if other is not None and other.name != lhs.name and rng.random() < 0.5:
            rhs = other
        else:
            rhs = Const(draw_value(rng, kind, cfg.pools))
        op = rng.choice(("<", "<=", ">", ">=", "=", "!="))
        body.append(Constraint(op, lhs, rhs))

    body_rel_names = {a.rel for a in body if isinstance(a, Atom)}
    new_decls: dict = {}

    head_rel = None
    if rng.random() < cfg.p_head:
        head_rel = _compatible_head(program, env, rng)
    if head_rel is not None:
        decl = program.decls[head_rel]
        allow_arith = head_rel not in body_rel_names
        head_terms = tuple(
            _head_term(rng, _pick_var(rng, env, kind), kind, cfg, allow_arith)
            for _, kind in decl.attrs
        )
    else:
        head_rel = f"r{rule_id}"
        arity = rng.randint(1, 3)
        head_terms = []
        attrs = []
        for i in range(arity):
            if env:
                name, kind = env[rng.randrange(len(env))]
                head_terms.append(_head_term(rng, Var(name), kind, cfg, True))
            else:
                kind = _weighted_kind(rng, cfg.skeleton.kind_weights)
                head_terms.append(Const(draw_value(rng, kind, cfg.pools)))
            attrs.append((f"x{i}", kind))
        head_terms = tuple(head_terms)
        annotations: frozenset = frozenset()
        if rng.random() < f.annotation:
            annotations = frozenset({rng.choice(("inline", "magic"))})
        new_decls[head_rel] = RelationDecl(
            name=head_rel, attrs=tuple(attrs), annotations=annotations
        )

    rule = Rule(rule_id, Atom(head_rel, head_terms), tuple(body))
    assert check_safety(rule) is None, "generated rule must be safe"
    return rule, new_decls


def _compatible_head(program: Program, env: list, rng: random.Random) -> str | None:
    kinds_bound = {k for _, k in env}
    options = []
    for rel in sorted(program.decls):
        decl = program.decls[rel]
        if decl.is_input or decl.internal:
            continue
        if all(k in kinds_bound for k in decl.kinds):
            options.append(rel)
    if not options:
        return None
    return rng.choice(options)


# --- Incremental growth -----------------------------------------------------


@dataclass
class TestIterationState:
    program: Program
    graph: PrecedenceGraph
    stable: StableFacts
    next_rule_id: int = 0
    attempts_since_success: int = 0

    def rule_count(self) -> int:
        return len(self.program.rules) + len(self.program.subsumptions)


@dataclass
class ExtendResult:
    kind: str  # retained | discarded_empty | discarded_error | exhausted
    node: object | None = None
    detail: str = ""
    oracle: FactStore | None = None


def _node_head_rel(node) -> str:
    return node.rel if isinstance(node, SubsumptionRule) else node.head.rel


def try_extend(
    state: TestIterationState,
    cfg: GenConfig,
    engine,
    rng: random.Random,
    candidate: tuple | None = None,
    tag: str = "",
    stats: dict | None = None,
) -> ExtendResult:
    """Propose (or accept) one candidate, oracle-check it, keep or roll
    back.  The RNG is never rolled back.  ReferenceFailure propagates with
    the candidate still in place so the caller can report it."""
    if state.attempts_since_success >= cfg.max_att:
        return ExtendResult("exhausted")
    if candidate is None:
        candidate = gen_candidate_rule(state.program, state.next_rule_id, cfg, rng)
    node, new_decls = candidate
    assert node.rule_id == state.next_rule_id, "rule ids are a global counter"
    state.next_rule_id += 1

    program = state.program
    graph_before = state.graph.copy()
    stable_snap = state.stable.snapshot()
    existing_nodes = program.all_rule_nodes()
    program.decls.update(new_decls)
    if isinstance(node, SubsumptionRule):
        program.subsumptions.append(node)
    else:
        program.rules.append(node)
    state.graph.add_rule(node, existing_nodes)

    def rollback() -> None:
        for name in new_decls:
            program.decls.pop(name, None)
        if isinstance(node, SubsumptionRule):
            program.subsumptions.pop()
        else:
            program.rules.pop()
        state.graph = graph_before
        state.stable.restore(stable_snap)
        state.attempts_since_success += 1

    cond = condense(state.graph)
    sub_ids = {s.rule_id for s in program.subsumptions}
    for n in cond.nodes:
        if not n.is_recursive:
            continue
        # deletion passes inside a recursive component would make results
        # depend on interleaving order; no engine family pins that down, so
        # such programs never leave the generator
        if any(m in sub_ids for m in n.members):
            rollback()
            return ExtendResult("discarded_error", node, "subsumption_in_recursion")
    if getattr(engine, "dialect", None) is not None and engine.dialect.requires_stratification:
        if any(n.has_negative_internal_edge for n in cond.nodes):
            rollback()
            return ExtendResult("discarded_error", node, "unstratifiable")

    subgraph = affected_subgraph(state.graph, node.rule_id)
    head_rel = _node_head_rel(node)
    try:
        oracle_facts = test_oracle_gen(
            subgraph,
            program,
            state.stable,
            head_rel,
            engine,
            cfg.max_iter,
            tag=tag,
            stats=stats,
        )
    except ReferenceSemanticError as e:
        rollback()
        return ExtendResult(
            "discarded_error", node, e.outcome.matched or e.outcome.message
        )
    except MaxIterExceeded as e:
        rollback()
        return ExtendResult("discarded_error", node, f"max_iter:{e.rounds}")

    new_facts = state.stable.get(node.rule_id)
    if not new_facts and rng.random() >= cfg.p_empty:
        rollback()
        return ExtendResult("discarded_empty", node)

    program.output_rel = head_rel
    state.attempts_since_success = 0
    return ExtendResult("retained", node, oracle=oracle_facts)


# --- Iteration drivers ------------------------------------------------------


@dataclass
class IterationTrace:
    iteration: int
    seed: int
    mode: str = "ire"
    attempts: int = 0
    retained: int = 0
    discarded_empty: int = 0
    discarded_error: int = 0
    exhausted: bool = False
    bug: dict | None = None
    final_program: Program | None = None
    final_oracle: FactStore | None = None
    output_nonempty: bool = False
    cycle_count: int = 0
    cycle_mean_len: float = 0.0
    oracle_seconds: float = 0.0
    optimized_seconds: float = 0.0
    recursion_rounds: dict = field(default_factory=dict)


def _classify(oracle: FactStore, outcome, program: Program, classify):
    if classify is not None:
        return classify(oracle, outcome, program)
    from .harness import check_discrepancy

    return check_discrepancy(oracle, outcome, program)


def run_iteration(
    cfg: GenConfig,
    engine,
    iteration_index: int = 0,
    classify=None,
    provider=None,
) -> IterationTrace:
    """Grow one program to max_rules, stopping early at the first bug,
    exhaustion, or a failing reference run.  provider overrides random
    candidate generation (scripted regressions); it returns candidates or
    None when done."""
    seed = derive_seed(cfg.seed, iteration_index)
    rng = random.Random(seed)
    trace = IterationTrace(iteration=iteration_index, seed=seed)
    program = gen_skeleton(cfg, rng)
    state = TestIterationState(
        program=program,
        graph=PrecedenceGraph(),
        stable=StableFacts(edb=program.edb_store()),
    )
    trace.final_program = program

    while state.rule_count() < cfg.max_rules:
        candidate = None
        if provider is not None:
            candidate = provider(state, rng)
            if candidate is None:
                break
        tag = f"i{iteration_index}a{trace.attempts}"
        stats: dict = {}
        t0 = time.perf_counter()
        try:
            res = try_extend(state, cfg, engine, rng, candidate, tag=tag, stats=stats)
        except ReferenceFailure as e:
            trace.oracle_seconds += time.perf_counter() - t0
            trace.attempts += 1
            trace.bug = {
                "kind": "hang" if outcome_kind(e.outcome) == "timeout" else (
                    "semantic_error_unexpected"
                    if outcome_kind(e.outcome) == "semantic_error"
                    else "crash"
                ),
                "phase": "reference",
                "outcome": e.outcome,
                "reference_program": e.program,
                "rule_index": state.rule_count() - 1,
            }
            break
        trace.oracle_seconds += time.perf_counter() - t0
        for node_id, rounds in stats.get("rounds", {}).items():
            trace.recursion_rounds[node_id] = rounds
        trace.attempts += 1
        if res.kind == "exhausted":
            trace.exhausted = True
            trace.attempts -= 1  # nothing was actually tried
            break
        if res.kind == "discarded_empty":
            trace.discarded_empty += 1
            continue
        if res.kind == "discarded_error":
            trace.discarded_error += 1
            continue

        trace.retained += 1
        trace.final_oracle = res.oracle
        trace.output_nonempty = bool(res.oracle.get(program.output_rel))
        t1 = time.perf_counter()
        outcome = engine.run(program, role="optimized", tag=f"{tag}f")
        trace.optimized_seconds += time.perf_counter() - t1
        if isinstance(outcome, SemanticErrorOutcome) and outcome.matched is not None:
            # nothing to compare; the incremental walk already vetted each
            # rule alone, so keep growing
            continue
        bug = _classify(res.oracle, outcome, program, classify)
        if bug is not None:
            bug["phase"] = "optimized"
            bug["rule_index"] = state.rule_count() - 1
            trace.bug = bug
            break

    count, mean_len = cycle_stats(state.graph)
    trace.cycle_count = count
    trace.cycle_mean_len = mean_len
    trace.final_program = state.program
    return trace


def run_iteration_random(
    cfg: GenConfig,
    engine,
    iteration_index: int = 0,
    classify=None,
) -> IterationTrace:
    """Baseline: append max_rules candidates blindly, build the per-rule
    oracle for the finished program, evaluate it once, and compare when both
    sides produced facts."""
    seed = derive_seed(cfg.seed, iteration_index)
    rng = random.Random(seed)
    trace = IterationTrace(iteration=iteration_index, seed=seed, mode="random")
    program = gen_skeleton(cfg, rng)
    next_id = 0
    while len(program.rules) + len(program.subsumptions) < cfg.max_rules:
        node, new_decls = gen_candidate_rule(program, next_id, cfg, rng)
        next_id += 1
        trace.attempts += 1
        program.decls.update(new_decls)
        if isinstance(node, SubsumptionRule):
            program.subsumptions.append(node)
        else:
            program.rules.append(node)
        program.output_rel = _node_head_rel(node)
        trace.retained += 1
    trace.final_program = program

    graph = build_graph(program)
    count, mean_len = cycle_stats(graph)
    trace.cycle_count = count
    trace.cycle_mean_len = mean_len

    # The baseline owes the per-rule reference chain for its one test case up
    # front; when the oracle cannot be completed the partial work is still
    # part of the price of the iteration.
    oracle_facts = None
    cond = condense(graph)
    sub_ids = {s.rule_id for s in program.subsumptions}
    oracle_possible = not any(
        n.has_negative_internal_edge for n in cond.nodes
    ) and not any(
        n.is_recursive and any(m in sub_ids for m in n.members) for n in cond.nodes
    )
    if oracle_possible:
        t1 = time.perf_counter()
        try:
            oracle_facts = test_oracle_gen(
                graph,
                program,
                StableFacts(edb=program.edb_store()),
                program.output_rel,
                engine,
                cfg.max_iter,
                tag=f"i{iteration_index}rando",
            )
        except (ReferenceSemanticError, MaxIterExceeded, ReferenceFailure):
            oracle_facts = None
        trace.oracle_seconds += time.perf_counter() - t1

    t0 = time.perf_counter()
    outcome = engine.run(program, role="optimized", tag=f"i{iteration_index}rand")
    trace.optimized_seconds += time.perf_counter() - t0
    if not isinstance(outcome, FactsOutcome):
        # an invalid final program counts toward the total only
        return trace

    trace.output_nonempty = bool(outcome.store.get(program.output_rel))
    if oracle_facts is None:
        return trace
    trace.final_oracle = oracle_facts
    bug = _classify(oracle_facts, outcome, program, classify)
    if bug is not None:
        bug["phase"] = "optimized"
        bug["rule_index"] = len(program.rules) + len(program.subsumptions) - 1
        trace.bug = bug
    return trace
