"""Campaign driver: iterations in, bug reports and stats out.

Every discrepancy classification funnels through check_discrepancy so the
optimized-run outcome maps to exactly one report kind.  Reports are
self-contained directories (program in two forms, base facts, engine
configuration, both result sets) and contain nothing wall-clock dependent;
timings land in out/volatile/, which is excluded from determinism
comparisons.
"""
from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .adapters import (
    CrashOutcome,
    EngineSpec,
    FactsOutcome,
    ParseFailureOutcome,
    SemanticErrorOutcome,
    TimeoutOutcome,
    build_adapter,
    load_engine_spec,
    program_from_json,
    program_to_json,
    render_program,
    SOUFFLE_LIKE,
    store_to_json,
    value_to_json,
)
from .datalog_ir import (
    FactStore,
    Program,
    Rule,
    SubsumptionRule,
    check_safety,
    diff_fact_sets,
)
from .generator import (
    GenConfig,
    IterationTrace,
    run_iteration,
    run_iteration_random,
)
from .oracle import (
    MaxIterExceeded,
    ReferenceFailure,
    ReferenceSemanticError,
    StableFacts,
    test_oracle_gen,
)
from .refengine import OptConfig
from .stratify import build_graph, condense

HANG_THRESHOLD_S = 30.0


# --- Discrepancy classification ---------------------------------------------


def check_discrepancy(oracle: FactStore | None, outcome, program: Program) -> dict | None:
    """Map an optimized-run outcome against the oracle to a report kind.

    facts mismatch -> logic; crash or garbled output -> crash; timeout ->
    hang; a semantic error outside the catalog -> semantic_error_unexpected;
    a cataloged one -> no report (the walk discards those candidates before
    they ever reach a full program).
    """
    if isinstance(outcome, FactsOutcome):
        if oracle is None or program.output_rel is None:
            return None
        diff = diff_fact_sets(oracle, outcome.store, program.output_rel)
        if diff is None:
            return None
        return {
            "kind": "logic",
            "diff": diff,
            "oracle": oracle,
            "optimized": outcome.store,
            "stdout": outcome.stdout,
            "stderr": outcome.stderr,
        }
    if isinstance(outcome, SemanticErrorOutcome):
        if outcome.matched is not None:
            return None
        return {"kind": "semantic_error_unexpected", "message": outcome.message}
    if isinstance(outcome, TimeoutOutcome):
        return {"kind": "hang", "seconds": outcome.seconds}
    if isinstance(outcome, CrashOutcome):
        return {
            "kind": "crash",
            "returncode": outcome.returncode,
            "stdout": outcome.stdout,
            "stderr": outcome.stderr,
        }
    if isinstance(outcome, ParseFailureOutcome):
        return {"kind": "crash", "detail": outcome.detail}
    raise TypeError(f"unknown outcome {outcome!r}")


# --- Campaign configuration --------------------------------------------------


@dataclass
class CampaignConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    engine_source: str = "embedded"
    inject: tuple = ()
    mode: str = "ire"  # ire | ire_plus_strip
    iterations: int | None = 100
    duration_s: float | None = None
    workers: int = 1
    out_dir: str = "out"
    baseline: str | None = None
    cycle_flags: bool = False
    opt_flags: tuple = ("magic", "inline", "subsumption")

    def to_json(self) -> dict:
        g = self.gen
        return {
            "engine": self.engine_source,
            "inject": sorted(self.inject),
            "mode": self.mode,
            "iterations": self.iterations,
            "duration_s": self.duration_s,
            "baseline": self.baseline,
            "cycle_flags": self.cycle_flags,
            "opt_flags": sorted(self.opt_flags),
            "gen": {
                "max_rules": g.max_rules,
                "max_att": "inf" if g.max_att == float("inf") else g.max_att,
                "p_empty": g.p_empty,
                "p_head": g.p_head,
                "max_iter": g.max_iter,
                "seed": g.seed,
                "features": vars(g.features),
                "pools": {
                    "ints": list(g.pools.ints),
                    "uints": list(g.pools.uints),
                    "floats": [repr(f) for f in g.pools.floats],
                    "symbols": list(g.pools.symbols),
                },
                "skeleton": {
                    "n_relations": list(g.skeleton.n_relations),
                    "arity": list(g.skeleton.arity),
                    "n_facts": list(g.skeleton.n_facts),
                    "kind_weights": [list(kw) for kw in g.skeleton.kind_weights],
                },
            },
        }


def iteration_opt_config(cfg: CampaignConfig, index: int) -> OptConfig:
    """Optimization flags for one iteration.  Cycling walks all eight
    combinations so soundness runs cover every pass mix."""
    if cfg.cycle_flags:
        bits = index % 8
        return OptConfig(
            enable_magic=bool(bits & 1),
            enable_inline=bool(bits & 2),
            enable_subsumption=bool(bits & 4),
            injected_bugs=frozenset(cfg.inject),
        )
    return OptConfig(
        enable_magic="magic" in cfg.opt_flags,
        enable_inline="inline" in cfg.opt_flags,
        enable_subsumption="subsumption" in cfg.opt_flags,
        injected_bugs=frozenset(cfg.inject),
    )


# --- Report serialization ----------------------------------------------------


def _sorted_rows(store: FactStore | None, rel: str | None) -> list:
    if store is None or rel is None:
        return []
    return [[value_to_json(v) for v in tup] for tup in store.sorted_tuples(rel)]


def _diff_to_json(diff) -> dict:
    return {
        "only_in_oracle": [[value_to_json(v) for v in t] for t in diff.only_in_a],
        "only_in_optimized": [[value_to_json(v) for v in t] for t in diff.only_in_b],
    }


def build_report(
    cfg: CampaignConfig,
    spec: EngineSpec,
    opt: OptConfig,
    arm: str,
    trace: IterationTrace,
) -> dict:
    """Self-contained, wall-clock-free description of one found bug."""
    bug = trace.bug
    assert bug is not None
    program = trace.final_program
    report = {
        "kind": bug["kind"],
        "phase": bug.get("phase", "optimized"),
        "arm": arm,
        "mode": cfg.mode,
        "iteration": trace.iteration,
        "iteration_seed": trace.seed,
        "campaign_seed": cfg.gen.seed,
        "rule_index": bug.get("rule_index"),
        "output_rel": program.output_rel,
        "engine_spec": spec.to_json(),
        "opt_flags": {
            "magic": opt.enable_magic,
            "inline": opt.enable_inline,
            "subsumption": opt.enable_subsumption,
            "bugs": sorted(opt.injected_bugs),
        },
        "program": program_to_json(program),
        "reduced": None,
        "reproducible": None,
    }
    if bug["kind"] == "logic":
        report["oracle_facts"] = _sorted_rows(bug["oracle"], program.output_rel)
        report["optimized_facts"] = _sorted_rows(bug["optimized"], program.output_rel)
        report["diff"] = _diff_to_json(bug["diff"])
        report["stdout"] = bug.get("stdout", "")
        report["stderr"] = bug.get("stderr", "")
    elif bug["kind"] == "hang":
        report["timeout_s"] = bug.get("seconds", spec.timeout_s)
    elif bug["kind"] == "crash":
        report["returncode"] = bug.get("returncode")
        report["stdout"] = bug.get("stdout", "")
        report["stderr"] = bug.get("stderr", bug.get("detail", ""))
    else:
        report["message"] = bug.get("message", "")
    if bug.get("phase") == "reference" and bug.get("reference_program") is not None:
        report["reference_program"] = program_to_json(bug["reference_program"])
        outcome = bug.get("outcome")
        if isinstance(outcome, SemanticErrorOutcome):
            report["message"] = outcome.message
        elif isinstance(outcome, CrashOutcome):
            report["returncode"] = outcome.returncode
            report["stdout"] = outcome.stdout
            report["stderr"] = outcome.stderr
    return report


def write_report_dir(out_dir: Path, name: str, report: dict) -> Path:
    rdir = out_dir / "reports" / name
    rdir.mkdir(parents=True, exist_ok=True)
    program = program_from_json(report["program"])
    (rdir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n"
    )
    artifacts = render_program(program, SOUFFLE_LIKE, role="optimized")
    for rel_name, text in artifacts.items():
        path = rdir / rel_name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    (rdir / "program.json").write_text(
        json.dumps(report["program"], sort_keys=True, indent=2) + "\n"
    )
    return rdir


# --- Per-iteration worker ----------------------------------------------------


def _trace_row(arm: str, trace: IterationTrace, combo: int | None) -> dict:
    return {
        "arm": arm,
        "iteration": trace.iteration,
        "seed": trace.seed,
        "combo": "" if combo is None else combo,
        "attempts": trace.attempts,
        "retained": trace.retained,
        "discarded_empty": trace.discarded_empty,
        "discarded_error": trace.discarded_error,
        "exhausted": int(trace.exhausted),
        "output_nonempty": int(trace.output_nonempty),
        "cycle_count": trace.cycle_count,
        "cycle_mean_len": repr(trace.cycle_mean_len),
        "bug_kind": trace.bug["kind"] if trace.bug else "",
    }


STATS_COLUMNS = [
    "arm",
    "iteration",
    "seed",
    "combo",
    "attempts",
    "retained",
    "discarded_empty",
    "discarded_error",
    "exhausted",
    "output_nonempty",
    "cycle_count",
    "cycle_mean_len",
    "bug_kind",
]


def run_one_iteration(cfg: CampaignConfig, index: int, arm: str) -> dict:
    """Executes in a worker process; returns only picklable data."""
    spec = load_engine_spec(cfg.engine_source)
    opt = iteration_opt_config(cfg, index)
    workroot = Path(cfg.out_dir) / "volatile" / "workdirs" / f"{arm}{index:06d}"
    adapter = build_adapter(
        spec,
        workroot,
        opt=opt,
        strip_for_reference=(cfg.mode == "ire_plus_strip"),
    )
    if arm == "random":
        trace = run_iteration_random(cfg.gen, adapter, index)
    else:
        trace = run_iteration(cfg.gen, adapter, index)
    combo = (index % 8) if cfg.cycle_flags else None
    result = {
        "row": _trace_row(arm, trace, combo),
        "timing": {
            "arm": arm,
            "iteration": index,
            "oracle_seconds": trace.oracle_seconds,
            "optimized_seconds": trace.optimized_seconds,
        },
        "report": None,
    }
    if trace.bug is not None:
        result["report"] = build_report(cfg, spec, opt, arm, trace)
    return result


def _worker(payload) -> dict:
    cfg, index, arm = payload
    return run_one_iteration(cfg, index, arm)


# --- Campaign ----------------------------------------------------------------


@dataclass
class CampaignStats:
    out_dir: str
    iterations: dict = field(default_factory=dict)
    nonempty: dict = field(default_factory=dict)
    retained: dict = field(default_factory=dict)
    bug_kinds: dict = field(default_factory=dict)
    report_dirs: list = field(default_factory=list)

    @property
    def found_bugs(self) -> bool:
        return bool(self.report_dirs)


def _iter_results(cfg: CampaignConfig, indices, arm: str):
    payloads = [(cfg, i, arm) for i in indices]
    if cfg.workers <= 1:
        for p in payloads:
            yield _worker(p)
        return
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        yield from pool.map(_worker, payloads, chunksize=1)


def _run_arm(cfg: CampaignConfig, arm: str, collect) -> None:
    if cfg.iterations is not None:
        for result in _iter_results(cfg, range(cfg.iterations), arm):
            collect(result)
        return
    deadline = time.monotonic() + float(cfg.duration_s or 0)
    next_index = 0
    while time.monotonic() < deadline:
        wave = range(next_index, next_index + max(1, cfg.workers))
        for result in _iter_results(cfg, wave, arm):
            collect(result)
        next_index += max(1, cfg.workers)


def run_campaign(cfg: CampaignConfig) -> CampaignStats:
    if (cfg.iterations is None) == (cfg.duration_s is None):
        raise ValueError("exactly one of iterations and duration_s must be set")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    (out / "volatile").mkdir(exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(cfg.to_json(), sort_keys=True, indent=2) + "\n"
    )

    stats = CampaignStats(out_dir=str(out))
    rows: list[dict] = []
    timings: list[dict] = []

    def collect(result: dict) -> None:
        row = result["row"]
        arm = row["arm"]
        rows.append(row)
        timings.append(result["timing"])
        stats.iterations[arm] = stats.iterations.get(arm, 0) + 1
        stats.nonempty[arm] = stats.nonempty.get(arm, 0) + row["output_nonempty"]
        stats.retained[arm] = stats.retained.get(arm, 0) + row["retained"]
        if result["report"] is not None:
            report = result["report"]
            kind = report["kind"]
            stats.bug_kinds[kind] = stats.bug_kinds.get(kind, 0) + 1
            prefix = "report" if arm == "ire" else "report_rand"
            name = f"{prefix}_{report['iteration']:06d}_{kind}"
            rdir = write_report_dir(out, name, report)
            stats.report_dirs.append(str(rdir))

    arms = ["ire"] + (["random"] if cfg.baseline == "random" else [])
    for arm in arms:
        _run_arm(cfg, arm, collect)

    rows.sort(key=lambda r: (r["arm"], r["iteration"]))
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=STATS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    (out / "stats.csv").write_text(buf.getvalue())

    timings.sort(key=lambda t: (t["arm"], t["iteration"]))
    tbuf = io.StringIO()
    twriter = csv.DictWriter(
        tbuf,
        fieldnames=["arm", "iteration", "oracle_seconds", "optimized_seconds"],
        lineterminator="\n",
    )
    twriter.writeheader()
    twriter.writerows(timings)
    (out / "volatile" / "timings.csv").write_text(tbuf.getvalue())

    summary = {
        "iterations": dict(sorted(stats.iterations.items())),
        "nonempty": dict(sorted(stats.nonempty.items())),
        "retained": dict(sorted(stats.retained.items())),
        "bug_kinds": dict(sorted(stats.bug_kinds.items())),
        "reports": sorted(Path(p).name for p in stats.report_dirs),
    }
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    return stats


# --- Reduction ----------------------------------------------------------------


def _program_without_node(program: Program, node) -> Program:
    p = program.clone()
    if isinstance(node, SubsumptionRule):
        p.subsumptions = [s for s in p.subsumptions if s.rule_id != node.rule_id]
    else:
        p.rules = [r for r in p.rules if r.rule_id != node.rule_id]
    return p


def _with_literal_removed(program: Program, rule: Rule, index: int) -> Program | None:
    body = list(rule.body)
    del body[index]
    if not body:
        return None
    new_rule = Rule(rule.rule_id, rule.head, tuple(body), rule.magic_generated)
    if check_safety(new_rule) is not None:
        return None
    p = program.clone()
    p.rules = [new_rule if r.rule_id == rule.rule_id else r for r in p.rules]
    return p


def _reproduces(program: Program, adapter, max_iter: int, expected_kind: str) -> bool:
    """Full from-scratch check: oracle walk over the whole graph, one
    optimized run, same report kind."""
    graph = build_graph(program)
    cond = condense(graph)
    if any(n.has_negative_internal_edge for n in cond.nodes):
        return False
    oracle = None
    if program.output_rel is not None:
        try:
            oracle = test_oracle_gen(
                graph,
                program,
                StableFacts(edb=program.edb_store()),
                program.output_rel,
                adapter,
                max_iter,
                tag="reduce",
            )
        except (ReferenceSemanticError, MaxIterExceeded):
            return False
        except ReferenceFailure as e:
            bug = check_discrepancy(None, e.outcome, program)
            return bug is not None and bug["kind"] == expected_kind
    outcome = adapter.run(program, role="optimized", tag="reduce")
    bug = check_discrepancy(oracle, outcome, program)
    return bug is not None and bug["kind"] == expected_kind


def _prune_unused(program: Program) -> Program:
    used = set()
    if program.output_rel is not None:
        used.add(program.output_rel)
    for rule in program.rules:
        used.add(rule.head.rel)
        used.update(a.rel for a in rule.body_atoms())
    for sub in program.subsumptions:
        used.add(sub.rel)
    p = program.clone()
    p.decls = {name: d for name, d in p.decls.items() if name in used}
    p.facts = [(rel, tup) for rel, tup in p.facts if rel in used]
    return p


def reduce_testcase(program: Program, adapter, max_iter: int, expected_kind: str):
    """Greedy shrink: drop whole rules, then single body literals, as long
    as the same kind of discrepancy still shows.  Returns (program,
    reproducible)."""
    if not _reproduces(program, adapter, max_iter, expected_kind):
        return program, False
    changed = True
    while changed:
        changed = False
        for node in list(program.all_rule_nodes()):
            candidate = _program_without_node(program, node)
            if _reproduces(candidate, adapter, max_iter, expected_kind):
                program = candidate
                changed = True
        for rule in list(program.rules):
            for index in range(len(rule.body)):
                candidate = _with_literal_removed(program, rule, index)
                if candidate is None:
                    continue
                if _reproduces(candidate, adapter, max_iter, expected_kind):
                    program = candidate
                    changed = True
                    break
    return _prune_unused(program), True


def reduce_report(report_dir: str | Path, max_iter: int = 100) -> dict:
    """Load a report directory, verify the bug reproduces, shrink it, and
    update report.json in place."""
    rdir = Path(report_dir)
    data = json.loads((rdir / "report.json").read_text())
    program = program_from_json(data["program"])
    spec = EngineSpec.from_json(data["engine_spec"])
    flags = data["opt_flags"]
    opt = OptConfig(
        enable_magic=flags["magic"],
        enable_inline=flags["inline"],
        enable_subsumption=flags["subsumption"],
        injected_bugs=frozenset(flags["bugs"]),
    )
    adapter = build_adapter(
        spec,
        rdir / "reduce_work",
        opt=opt,
        strip_for_reference=(data.get("mode") == "ire_plus_strip"),
    )
    reduced, reproducible = reduce_testcase(program, adapter, max_iter, data["kind"])
    data["reproducible"] = reproducible
    if reproducible:
        data["reduced"] = program_to_json(reduced)
        artifacts = render_program(reduced, SOUFFLE_LIKE, role="optimized")
        (rdir / "reduced.dl").write_text(artifacts["program.dl"])
        (rdir / "reduced.json").write_text(
            json.dumps(data["reduced"], sort_keys=True, indent=2) + "\n"
        )
    (rdir / "report.json").write_text(
        json.dumps(data, sort_keys=True, indent=2) + "\n"
    )
    return data
