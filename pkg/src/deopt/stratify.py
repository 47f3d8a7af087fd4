"""Rule-level precedence graphs, SCC condensation, and stratification.

Nodes are rule ids (subsumption rules included).  An edge src -> dst exists
when src's head relation occurs in dst's body, negative when some such
occurrence is negated.  Stratification here follows the strict layering the
oracle needs: the two endpoints of every edge land in different strata, with
negated dependencies strictly below their consumers.  A strongly connected
component with an internal negative edge is flagged, not rejected; the
oracle decides what to do with it.
"""
from __future__ import annotations

from dataclasses import dataclass

from .datalog_ir import (
    Program,
    RuleLike,
    SubsumptionRule,
    rule_body_rels_with_polarity,
    rule_head_rel,
)


class PrecedenceGraph:
    """Directed graph over rule ids; edges carry a negated flag.  Parallel
    positive and negative dependencies collapse into one edge where negative
    wins, which is the stricter constraint."""

    __slots__ = ("nodes", "edges")

    def __init__(self):
        self.nodes: set[int] = set()
        self.edges: dict[tuple[int, int], bool] = {}

    def copy(self) -> "PrecedenceGraph":
        g = PrecedenceGraph()
        g.nodes = set(self.nodes)
        g.edges = dict(self.edges)
        return g

    def add_edge(self, src: int, dst: int, negated: bool) -> None:
        key = (src, dst)
        self.edges[key] = self.edges.get(key, False) or negated

    def successors(self, node: int) -> list[int]:
        return sorted(d for (s, d) in self.edges if s == node)

    def edge_list(self) -> list[tuple[int, int, bool]]:
        return sorted((s, d, n) for (s, d), n in self.edges.items())

    def add_rule(self, rule: RuleLike, existing: list[RuleLike]) -> None:
        """Insert one rule given the rules already present.  Subsumption
        nodes never self-loop: the pattern occurrence of their own relation
        is input plumbing, not recursion."""
        self.nodes.add(rule.rule_id)
        by_id = {r.rule_id: r for r in existing}
        by_id[rule.rule_id] = rule
        for other in by_id.values():
            self._connect(other, rule)
            if other.rule_id != rule.rule_id:
                self._connect(rule, other)

    def _connect(self, src: RuleLike, dst: RuleLike) -> None:
        if src.rule_id == dst.rule_id and isinstance(src, SubsumptionRule):
            return
        head = rule_head_rel(src)
        for rel, negated in rule_body_rels_with_polarity(dst):
            if rel == head:
                self.add_edge(src.rule_id, dst.rule_id, negated)

    def induced(self, keep: set[int]) -> "PrecedenceGraph":
        g = PrecedenceGraph()
        g.nodes = set(keep)
        g.edges = {
            (s, d): n for (s, d), n in self.edges.items() if s in keep and d in keep
        }
        return g

    def to_dot(self) -> str:
        lines = ["digraph prec {"]
        for n in sorted(self.nodes):
            lines.append(f"  r{n};")
        for s, d, neg in self.edge_list():
            style = ' [style=dashed, label="not"]' if neg else ""
            lines.append(f"  r{s} -> r{d}{style};")
        lines.append("}")
        return "\n".join(lines)


def build_graph(program: Program) -> PrecedenceGraph:
    g = PrecedenceGraph()
    nodes = program.all_rule_nodes()
    for r in nodes:
        g.nodes.add(r.rule_id)
    for src in nodes:
        for dst in nodes:
            g._connect(src, dst)
    return g


def affected_subgraph(graph: PrecedenceGraph, new_rule: int) -> PrecedenceGraph:
    """Induced subgraph on the new rule and everything reachable from it."""
    seen = {new_rule}
    frontier = [new_rule]
    while frontier:
        node = frontier.pop()
        for succ in graph.successors(node):
            if succ not in seen:
                seen.add(succ)
                frontier.append(succ)
    return graph.induced(seen)


@dataclass(frozen=True)
class CondensedNode:
    members: tuple
    has_negative_internal_edge: bool
    is_recursive: bool

    @property
    def min_id(self) -> int:
        return self.members[0]


class Condensation:
    def __init__(self, nodes: list[CondensedNode], edges: dict[tuple[int, int], bool]):
        # edges are indexed by position in nodes
        self.nodes = nodes
        self.edges = edges

    def preds(self, idx: int) -> list[int]:
        return sorted(s for (s, d) in self.edges if d == idx)

    def edge_list(self) -> list[tuple[int, int, bool]]:
        return sorted((s, d, n) for (s, d), n in self.edges.items())


def _tarjan_sccs(graph: PrecedenceGraph) -> list[list[int]]:
    """Iterative Tarjan; deterministic because nodes and successors are
    visited in sorted order."""
    index_of: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0

    for root in sorted(graph.nodes):
        if root in index_of:
            continue
        work: list[tuple[int, list[int], int]] = [(root, graph.successors(root), 0)]
        while work:
            node, succs, i = work.pop()
            if i == 0:
                index_of[node] = low[node] = counter
                counter += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            while i < len(succs):
                nxt = succs[i]
                i += 1
                if nxt not in index_of:
                    work.append((node, succs, i))
                    work.append((nxt, graph.successors(nxt), 0))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index_of[nxt])
            if advanced:
                continue
            if low[node] == index_of[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                sccs.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
    return sccs


def condense(graph: PrecedenceGraph) -> Condensation:
    sccs = _tarjan_sccs(graph)
    sccs.sort(key=lambda c: c[0])
    comp_of: dict[int, int] = {}
    for idx, comp in enumerate(sccs):
        for n in comp:
            comp_of[n] = idx
    nodes: list[CondensedNode] = []
    internal_neg = [False] * len(sccs)
    edges: dict[tuple[int, int], bool] = {}
    for (s, d), neg in graph.edges.items():
        cs, cd = comp_of[s], comp_of[d]
        if cs == cd:
            internal_neg[cs] = internal_neg[cs] or neg
        else:
            key = (cs, cd)
            edges[key] = edges.get(key, False) or neg
    for idx, comp in enumerate(sccs):
        self_loop = any((n, n) in graph.edges for n in comp)
        nodes.append(
            CondensedNode(
                members=tuple(comp),
                has_negative_internal_edge=internal_neg[idx],
                is_recursive=len(comp) > 1 or self_loop,
            )
        )
    return Condensation(nodes, edges)


def condensation_is_acyclic(cond: Condensation) -> bool:
    n = len(cond.nodes)
    indeg = [0] * n
    for s, d, _ in cond.edge_list():
        indeg[d] += 1
    queue = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for s, d, _ in cond.edge_list():
            if s == node:
                indeg[d] -= 1
                if indeg[d] == 0:
                    queue.append(d)
    return seen == n


def graph_stratify(graph: PrecedenceGraph) -> list[list[CondensedNode]]:
    """Strata of condensed nodes, lowest first.  Every condensation edge
    crosses strata (longest-path layering), so positive dependencies sit
    strictly below as well, and negated ones a fortiori.  Within a stratum,
    nodes are ordered by smallest member rule id."""
    cond = condense(graph)
    n = len(cond.nodes)
    level = [0] * n
    preds: dict[int, list[int]] = {i: [] for i in range(n)}
    succs: dict[int, list[int]] = {i: [] for i in range(n)}
    indeg = [0] * n
    for s, d, _ in cond.edge_list():
        preds[d].append(s)
        succs[s].append(d)
        indeg[d] += 1
    queue = sorted(i for i in range(n) if indeg[i] == 0)
    order: list[int] = []
    while queue:
        node = queue.pop(0)
        order.append(node)
        for d in succs[node]:
            level[d] = max(level[d], level[node] + 1)
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
        queue.sort()
    if len(order) != n:
        raise ValueError("condensation is cyclic; SCC computation is broken")
    depth = max(level, default=-1) + 1
    strata: list[list[CondensedNode]] = [[] for _ in range(depth)]
    for i, node in enumerate(cond.nodes):
        strata[level[i]].append(node)
    for layer in strata:
        layer.sort(key=lambda c: c.min_id)
    return strata


def stratum_of_rules(strata: list[list[CondensedNode]]) -> dict[int, int]:
    out: dict[int, int] = {}
    for i, layer in enumerate(strata):
        for node in layer:
            for rid in node.members:
                out[rid] = i
    return out


def cycle_stats(graph: PrecedenceGraph, cap: int = 10000) -> tuple[int, float]:
    """(number of simple cycles, mean cycle length), enumeration capped to
    keep pathological graphs from stalling stats collection."""
    sccs = [c for c in _tarjan_sccs(graph) if len(c) > 1 or (c[0], c[0]) in graph.edges]
    count = 0
    total_len = 0

    def johnson(scc: list[int]) -> None:
        nonlocal count, total_len
        scc_set = set(scc)
        adj = {
            v: [d for d in graph.successors(v) if d in scc_set] for v in scc
        }
        for start in sorted(scc):
            path = [start]
            blocked = {start}

            def dfs(v: int) -> None:
                nonlocal count, total_len
                if count >= cap:
                    return
                for w in adj[v]:
                    if w < start:
                        continue
                    if w == start:
                        count += 1
                        total_len += len(path)
                        if count >= cap:
                            return
                    elif w not in blocked:
                        blocked.add(w)
                        path.append(w)
                        dfs(w)
                        path.pop()
                        blocked.discard(w)

            dfs(start)
            if count >= cap:
                return

    for scc in sccs:
        if count >= cap:
            break
        johnson(scc)
    mean = (total_len / count) if count else 0.0
    return count, mean
