"""Composed reference results for incrementally grown programs.

Each retained rule keeps a private set of stable facts for its head
relation, computed by running the rule alone (optimizer enabled but with
nothing cross-rule to optimize) over materialized inputs.  A relation's
content is the union of its defining rules' stable facts plus its base
facts; an evaluated subsumption node replaces that union with its own
post-deletion view.  Adding a rule invalidates exactly the forward
dependency cone, which is re-walked stratum by stratum.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .adapters import (
    FactsOutcome,
    RunOutcome,
    SemanticErrorOutcome,
)
from .datalog_ir import FactStore, Program, RelationDecl, Rule, SubsumptionRule
from .stratify import CondensedNode, PrecedenceGraph, graph_stratify


class MaxIterExceeded(Exception):
    """A recursive component kept changing for the whole round budget."""

    def __init__(self, rounds: int):
        super().__init__(f"no fixpoint after {rounds} rounds")
        self.rounds = rounds


class ReferenceSemanticError(Exception):
    """The engine rejected a reference program for a cataloged reason; the
    candidate that introduced it gets discarded."""

    def __init__(self, outcome: SemanticErrorOutcome):
        super().__init__(outcome.message)
        self.outcome = outcome


class ReferenceFailure(Exception):
    """Crash, hang, parse failure, or uncataloged error on a reference
    run.  These are engine bugs in their own right and abort the iteration
    with a report."""

    def __init__(self, outcome: RunOutcome, program: Program):
        super().__init__(type(outcome).__name__)
        self.outcome = outcome
        self.program = program


@dataclass
class StableFacts:
    """Per-rule result facts plus the immutable base facts."""

    edb: FactStore
    per_rule: dict[int, set] = field(default_factory=dict)

    def set_result(self, rule_id: int, facts: set) -> None:
        self.per_rule[rule_id] = set(facts)

    def get(self, rule_id: int) -> set:
        return self.per_rule.get(rule_id, set())

    def clear(self, rule_ids) -> None:
        for rid in rule_ids:
            self.per_rule.pop(rid, None)

    def snapshot(self) -> dict[int, set]:
        return {rid: set(s) for rid, s in self.per_rule.items()}

    def restore(self, snap: dict[int, set]) -> None:
        self.per_rule = {rid: set(s) for rid, s in snap.items()}

    def facts_for(self, rel: str, program: Program, exclude: frozenset = frozenset()) -> set:
        """Current content of a relation as the oracle sees it."""
        evaluated_subs = [
            s
            for s in program.subs_for(rel)
            if s.rule_id not in exclude and s.rule_id in self.per_rule
        ]
        if evaluated_subs:
            # the deletion pass ran over the full relation content, so its
            # stored view stands in for everything else
            latest = max(evaluated_subs, key=lambda s: s.rule_id)
            return set(self.per_rule[latest.rule_id])
        out = set(self.edb.get(rel))
        for r in program.rules_for(rel):
            if r.rule_id in exclude:
                continue
            out |= self.per_rule.get(r.rule_id, set())
        return out


def _node_head_rel(node) -> str:
    return node.rel if isinstance(node, SubsumptionRule) else node.head.rel


def build_reference_program(
    nodes: list,
    program: Program,
    stable: StableFacts,
) -> Program:
    """Program that evaluates the given rule nodes over materialized
    inputs.  Heads become outputs; every consumed relation becomes an input
    fed the oracle's current content for it, excluding what these nodes
    themselves contributed.  A rule consuming its own head relation thus
    re-derives its closure from the other content rather than seeing stale
    copies of itself."""
    heads = {_node_head_rel(n) for n in nodes}
    node_ids = frozenset(n.rule_id for n in nodes)
    consumed: set[str] = set()
    for n in nodes:
        if isinstance(n, SubsumptionRule):
            consumed.add(n.rel)
        else:
            consumed.update(a.rel for a in n.body_atoms())
    input_rels = set(consumed)

    decls: dict[str, RelationDecl] = {}
    for rel in sorted(heads | consumed):
        base = program.decls[rel]
        decls[rel] = RelationDecl(
            name=base.name,
            attrs=base.attrs,
            annotations=base.annotations,
            is_input=rel in input_rels,
            internal=False,
        )

    facts: list[tuple[str, tuple]] = []
    for rel in sorted(input_rels):
        content = stable.facts_for(rel, program, exclude=node_ids)
        for tup in sorted(content, key=lambda t: tuple(v.sort_key() for v in t)):
            facts.append((rel, tup))

    rules = [n for n in nodes if isinstance(n, Rule)]
    subs = [n for n in nodes if isinstance(n, SubsumptionRule)]
    out_list = sorted(heads)
    return Program(
        decls=decls,
        facts=facts,
        rules=rules,
        subsumptions=subs,
        output_rel=out_list[0] if len(out_list) == 1 else None,
        output_rels=tuple(out_list) if len(out_list) > 1 else (),
    )


def gen_prog_and_exec(
    nodes: list,
    program: Program,
    stable: StableFacts,
    engine,
    tag: str = "",
) -> dict[int, set]:
    """Build the reference program for these nodes, run it, and attribute
    result facts to each node by its head relation."""
    ref = build_reference_program(nodes, program, stable)
    outcome = engine.run(ref, role="reference", tag=tag)
    if isinstance(outcome, FactsOutcome):
        return {n.rule_id: set(outcome.store.get(_node_head_rel(n))) for n in nodes}
    if isinstance(outcome, SemanticErrorOutcome) and outcome.matched is not None:
        raise ReferenceSemanticError(outcome)
    raise ReferenceFailure(outcome, ref)


def handle_recursion(
    node: CondensedNode,
    program: Program,
    stable: StableFacts,
    engine,
    max_iter: int,
    tag: str = "",
) -> int:
    """Fix a recursive component's stable facts.  A component held together
    by a negative edge cannot be split into monotone pieces, so it runs as
    one combined program; a positive component converges by round-robin
    re-evaluation.  Returns the number of rounds executed."""
    members = [program.rule_by_id(rid) for rid in node.members]
    if node.has_negative_internal_edge:
        results = gen_prog_and_exec(
            members, program, stable, engine, tag=f"{tag}c"
        )
        for rid, facts in results.items():
            stable.set_result(rid, facts)
        return 1
    for rounds in itertools.count(1):
        changed = False
        for member in members:
            res = gen_prog_and_exec(
                [member], program, stable, engine, tag=f"{tag}q{rounds}"
            )[member.rule_id]
            if res != stable.get(member.rule_id):
                stable.set_result(member.rule_id, res)
                changed = True
        if not changed:
            return rounds
        if rounds >= max_iter:
            raise MaxIterExceeded(rounds)
    raise AssertionError("unreachable")


def test_oracle_gen(
    subgraph: PrecedenceGraph,
    program: Program,
    stable: StableFacts,
    output_rel: str,
    engine,
    max_iter: int,
    tag: str = "",
    stats: dict | None = None,
) -> FactStore:
    """Recompute stable facts for every node in the (already invalidated)
    dependency cone, lowest stratum first, and read off the output
    relation's content."""
    stable.clear(subgraph.nodes)
    strata = graph_stratify(subgraph)
    for layer_index, layer in enumerate(strata):
        for node in layer:
            node_tag = f"{tag}s{layer_index}n{node.min_id}"
            if node.is_recursive:
                rounds = handle_recursion(
                    node, program, stable, engine, max_iter, tag=node_tag
                )
                if stats is not None:
                    stats.setdefault("rounds", {})[node.min_id] = rounds
            else:
                member = program.rule_by_id(node.members[0])
                res = gen_prog_and_exec(
                    [member], program, stable, engine, tag=node_tag
                )
                for rid, facts in res.items():
                    stable.set_result(rid, facts)
    return get_facts(stable, program, output_rel)


def get_facts(stable: StableFacts, program: Program, output_rel: str) -> FactStore:
    store = FactStore()
    store.set_rel(output_rel, stable.facts_for(output_rel, program))
    return store
