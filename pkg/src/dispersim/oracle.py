"""Independent ground truth for simulations.

Nothing here reuses protocol code paths: the reference DFS is a plain
whole-graph traversal, bound checks are arithmetic on run summaries, and the
monitors are pure functions of traces, so every check can replay offline.
The exhaustive adversary enumerates complete crash-schedule spaces on small
instances.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import ceil, comb, log2

from . import graph as graphs
from .engine import CrashSchedule, SimResult, TraceEvent, run
from .rooted import MOVER_MODES


class OracleError(RuntimeError):
    pass


class BoundViolation(OracleError):
    pass


class MonitorViolation(OracleError):
    pass


class EnumerationTooLarge(OracleError):
    pass


# -- reference DFS -------------------------------------------------------------


def reference_dfs_order(g: graphs.PortGraph, root: int) -> list[int]:
    """First-visit order of an ascending-port whole-graph DFS from root."""
    order = [root]
    visited = {root}
    stack = [(root, 0, 1)]  # node, entry port to skip, next port to try
    while stack:
        v, skip, p = stack.pop()
        deg = g.degree(v)
        while p <= deg:
            if p == skip:
                p += 1
                continue
            u, q = g.neighbor(v, p)
            p += 1
            if u not in visited:
                visited.add(u)
                order.append(u)
                stack.append((v, skip, p))
                stack.append((u, q, 1))
                break
    return order


def reference_first_k(g: graphs.PortGraph, root: int, k: int) -> set[int]:
    """The first k distinct nodes an ascending-port DFS from root discovers."""
    if k > g.node_count:
        raise OracleError("k exceeds node count")
    return set(reference_dfs_order(g, root)[:k])


# -- bounds ---------------------------------------------------------------------


def memory_envelope(k: int, delta: int) -> int:
    """Per-robot bit budget: our constant for the O(log(k+delta)) claim."""
    return 4 * (ceil(log2(k + 1)) + ceil(log2(delta + 2))) + 16


@dataclass
class BoundsReport:
    ok: bool
    round_bound: int
    rounds: int
    memory_bound: int
    memory: int
    violations: list[str]


def check_bounds(result: SimResult, protocol, k: int, delta: int) -> BoundsReport:
    violations = []
    if result.rounds_elapsed > protocol.round_budget:
        violations.append(
            f"rounds {result.rounds_elapsed} exceed budget {protocol.round_budget}"
        )
    env = memory_envelope(k, delta)
    if result.max_memory_bits > env:
        violations.append(f"memory {result.max_memory_bits} exceeds envelope {env}")
    if not result.dispersed:
        violations.append("run did not disperse")
    return BoundsReport(
        ok=not violations,
        round_bound=protocol.round_budget,
        rounds=result.rounds_elapsed,
        memory_bound=env,
        memory=result.max_memory_bits,
        violations=violations,
    )


# -- trace monitors ---------------------------------------------------------------


def one_mover_violations(trace: list[TraceEvent]) -> list[int]:
    """Rounds of a rooted trace with more than one robot off base."""
    movers: dict[int, set[int]] = {}
    for e in trace:
        if e.kind in ("move", "wait", "settle") and e.payload and e.payload.get("mode") in MOVER_MODES:
            movers.setdefault(e.round, set()).add(e.robot)
    return sorted(rnd for rnd, who in movers.items() if len(who) > 1)


def loop_violations(trace: list[TraceEvent]) -> list[tuple[int, int]]:
    """(robot, round) pairs where an explorer revisits an identical
    (node, entry port, mode, settled-pointer snapshot) configuration within
    one epoch -- the loop-freedom check."""
    seen: dict[int, set] = {}
    out = []
    for e in trace:
        if e.kind != "move" or not e.payload:
            continue
        p = e.payload
        if p.get("rsr") == 1:
            seen[e.robot] = set()
        if p.get("mode") not in MOVER_MODES or "at" not in p:
            continue
        snap = p["at"]
        key = (
            p["node"],
            p["entry"],
            p["mode"],
            snap["parent"],
            snap["cdr"],
            snap["used"],
            snap["done"],
        )
        bucket = seen.setdefault(e.robot, set())
        if key in bucket:
            out.append((e.robot, e.round))
        bucket.add(key)
    return out


def retreat_violations(trace: list[TraceEvent], rank: dict[int, int]) -> list[tuple[int, int]]:
    """Retreating robots must be home (or settled) within 3i rounds of release."""
    return sorted(
        (e.robot, e.round)
        for e in trace
        if e.kind == "move"
        and e.payload
        and e.payload.get("mode") == "retreat"
        and e.payload.get("rsr", 0) > 3 * rank[e.robot]
    )


def counter_disagreements(trace: list[TraceEvent]) -> list[int]:
    """Rounds of an arbitrary trace where alive robots report unequal counters."""
    per_round: dict[int, set[int]] = {}
    for e in trace:
        if e.kind in ("move", "wait", "settle") and e.payload and "counter" in e.payload:
            per_round.setdefault(e.round, set()).add(e.payload["counter"])
    return sorted(rnd for rnd, vals in per_round.items() if len(vals) > 1)


def cluster_count_regressions(trace: list[TraceEvent], phase_len: int) -> list[int]:
    """Phase indices whose opening cluster count exceeds the previous phase's.

    The cluster count at a phase start is the number of distinct cluster ids
    among robots that are alive and unsettled in that round."""
    settled_at: dict[int, int] = {}
    crashed_at: dict[int, int] = {}
    for e in trace:
        if e.kind == "settle":
            settled_at.setdefault(e.robot, e.round)
        elif e.kind == "crash":
            crashed_at.setdefault(e.robot, e.round)
    counts: dict[int, set] = {}
    for e in trace:
        if e.kind not in ("move", "wait", "settle") or not e.payload or "cid" not in e.payload:
            continue
        if (e.round - 1) % phase_len != 0:
            continue
        if settled_at.get(e.robot, e.round + 1) <= e.round and e.kind != "settle":
            continue  # already settled before this round
        phase = (e.round - 1) // phase_len
        counts.setdefault(phase, set()).add(e.payload["cid"])
    out = []
    prev = None
    for phase in sorted(counts):
        size = len(counts[phase])
        if prev is not None and size > prev:
            out.append(phase)
        prev = size
    return out


def cdr_progression_violations(trace: list[TraceEvent]) -> list[tuple[int, int]]:
    """Settled pointers may only regress through an explicit repair or a fresh
    settlement at that node (crash replacement) -- the progress property."""
    last: dict[int, tuple] = {}
    resets: dict[int, int] = {}  # node -> round of last repair/settle there
    out = []
    for e in trace:
        if e.kind in ("repair", "settle") and e.payload:
            resets[e.payload["node"]] = e.round
        if e.kind != "move" or not e.payload or "at" not in e.payload:
            continue
        node = e.payload["node"]
        snap = e.payload["at"]
        rank_now = (1 if snap["done"] else 0, snap["cdr"] or 0, 1 if snap["used"] else 0)
        if node in last:
            prev_round, prev_rank = last[node]
            if rank_now < prev_rank and resets.get(node, -1) < prev_round:
                out.append((e.robot, e.round))
        last[node] = (e.round, rank_now)
    return out


# -- exhaustive adversary -----------------------------------------------------------


@dataclass
class AdversaryReport:
    schedules_tested: int
    failures: int
    max_rounds: int
    max_memory_bits: int
    worst_trace_hash: str
    failure_examples: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schedules_tested": self.schedules_tested,
                "failures": self.failures,
                "max_rounds": self.max_rounds,
                "max_memory_bits": self.max_memory_bits,
                "worst_trace_hash": self.worst_trace_hash,
            },
            sort_keys=True,
        )


def enumerate_schedules(robot_ids, f: int, horizon: int):
    """Every assignment of f distinct victims to crash rounds in 1..horizon."""
    for victims in itertools.combinations(sorted(robot_ids), f):
        for rounds in itertools.product(range(1, horizon + 1), repeat=f):
            yield CrashSchedule.from_pairs(zip(victims, rounds))


def enumerate_adversary(
    g: graphs.PortGraph,
    placement: dict[int, int],
    protocol_factory,
    f: int,
    horizon: int | None = None,
    cap: int = 10**6,
    per_run_check=None,
) -> AdversaryReport:
    """Run every (victims, rounds) crash schedule and aggregate the worst case.

    ``per_run_check(result, schedule) -> list[str]`` may add extra failure
    conditions (monitors); aggregation is order-insensitive.
    """
    ids = sorted(placement)
    k = len(ids)
    probe = protocol_factory()
    horizon = horizon if horizon is not None else probe.round_budget
    total = comb(k, f) * horizon**f
    if total > cap:
        raise EnumerationTooLarge(f"{total} schedules exceed cap {cap}")

    failures = 0
    max_rounds = 0
    max_bits = 0
    worst_hash = ""
    examples: list[dict] = []
    tested = 0
    for schedule in enumerate_schedules(ids, f, horizon):
        result = run(g, placement, protocol_factory(), schedule)
        tested += 1
        problems = []
        if not result.dispersed:
            problems.append("not dispersed")
        if result.rounds_elapsed > probe.round_budget:
            problems.append("round bound exceeded")
        if per_run_check is not None:
            problems.extend(per_run_check(result, schedule))
        if problems:
            failures += 1
            if len(examples) < 5:
                examples.append({"schedule": list(schedule.entries), "problems": problems})
        if result.rounds_elapsed > max_rounds:
            max_rounds = result.rounds_elapsed
            worst_hash = result.trace_hash
        max_bits = max(max_bits, result.max_memory_bits)
    return AdversaryReport(tested, failures, max_rounds, max_bits, worst_hash, examples)


# -- graph corpus --------------------------------------------------------------------


def standard_corpus(max_n: int | None = None, random_graphs: int = 50) -> list[tuple[str, graphs.PortGraph]]:
    """The fixed suite: rings 3..12, paths 2..12, K4/K5, stars 4..8 and seeded
    random connected graphs with n <= 20, m <= 40."""
    out: list[tuple[str, graphs.PortGraph]] = []
    for n in range(3, 13):
        out.append((f"ring{n}", graphs.ring(n)))
    for n in range(2, 13):
        out.append((f"path{n}", graphs.path(n)))
    out.append(("K4", graphs.complete(4)))
    out.append(("K5", graphs.complete(5)))
    for n in range(4, 9):
        out.append((f"star{n}", graphs.star(n)))
    for seed in range(random_graphs):
        n = 4 + seed % 17  # 4..20
        max_m = min(40, n * (n - 1) // 2)
        m = (n - 1) + seed % (max_m - (n - 1) + 1) if max_m > n - 1 else n - 1
        out.append((f"rand{n}m{m}s{seed}", graphs.random_connected(n, m, seed)))
    if max_n is not None:
        out = [(name, g) for name, g in out if g.node_count <= max_n]
    return out


def k_choices(n: int) -> list[int]:
    return sorted({1, (n + 1) // 2, n})
