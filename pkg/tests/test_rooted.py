"""Rooted protocol: release policy, DFS pointer rules, budgets, repair."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispersim import graph as graphs, oracle
from dispersim.engine import CrashSchedule, run
from dispersim.rooted import RootedDispersion, dfs_step


def rooted_run(g, k, schedule=None, ids=None, root=1):
    ids = ids or list(range(1, k + 1))
    protocol = RootedDispersion(ids, g.max_degree())
    return run(g, {i: root for i in ids}, protocol, schedule), protocol


# -- release policy --------------------------------------------------------------


def test_single_robot_settles_at_root_round_one():
    result, _ = rooted_run(graphs.ring(4), 1)
    assert result.rounds_elapsed == 1 and result.dispersed
    core = result.world.states[1].core
    assert core.parent is None and core.cdr == 1


def test_ring3_departure_and_dispersion():
    result, protocol = rooted_run(graphs.ring(3), 3)
    assert result.dispersed
    assert result.rounds_elapsed <= 7 * 9
    assert result.rounds_elapsed == 10  # frozen from the verified trace
    first = next(e for e in result.world.trace if e.robot == 2 and e.kind == "move")
    assert first.round == 2 and first.payload["port"] == 1
    settled = {result.world.locations[r] for r in (1, 2, 3)}
    assert settled == oracle.reference_first_k(graphs.ring(3), 1, 3)


def test_crashed_mover_is_succeeded_at_next_boundary():
    # robot 2's epoch is rounds 2..7; it crashes mid-flight, so robot 3
    # departs at the boundary round 8 and finishes the job
    g = graphs.ring(6)
    result, _ = rooted_run(g, 3, CrashSchedule.from_pairs([(2, 3)]))
    assert result.dispersed
    first3 = next(e for e in result.world.trace if e.robot == 3 and e.kind == "move")
    assert first3.round == 8 and first3.payload["rsr"] == 1


def test_returned_robot_departs_again_with_persistent_progress():
    # deterministic fault-free config in which explorers exhaust their budget,
    # report back, and are re-sent ("resends r_i"); pointers never regress
    g = graphs.random_connected(7, 10, 20)
    result, protocol = rooted_run(g, 7)
    assert result.dispersed
    retreats = [e for e in result.world.trace if e.kind == "move" and e.payload.get("mode") == "retreat"]
    assert retreats, "scenario must exercise the report-back path"
    redeparts = [
        e
        for e in result.world.trace
        if e.kind == "move" and e.payload.get("rsr") == 1 and e.round > 2
    ]
    assert redeparts, "a reporting robot must be re-sent at an epoch boundary"
    assert oracle.retreat_violations(result.world.trace, protocol.rank) == []
    assert oracle.cdr_progression_violations(result.world.trace) == []


# -- dfs_step unit rules ------------------------------------------------------------


def test_dfs_backtrack_when_ports_exhausted():
    out = dfs_step(parent=1, cdr=2, cdr_used=True, subtree_done=False,
                   degree=2, entry_port=2, arrived_forward=False, at_root_marker=False)
    assert out.exit_port == 1
    assert out.writes == {"subtree_done": True}


def test_dfs_advances_to_next_unexplored_port():
    out = dfs_step(parent=1, cdr=2, cdr_used=True, subtree_done=False,
                   degree=3, entry_port=2, arrived_forward=False, at_root_marker=False)
    assert out.exit_port == 3
    assert out.writes == {"cdr": 3, "cdr_used": True}
    assert out.leaves_forward


def test_dfs_fresh_descent_marks_pointer_used():
    out = dfs_step(parent=1, cdr=2, cdr_used=False, subtree_done=False,
                   degree=3, entry_port=1, arrived_forward=False, at_root_marker=False)
    assert out.exit_port == 2 and out.writes == {"cdr_used": True} and out.leaves_forward


def test_dfs_retrace_through_used_pointer():
    out = dfs_step(parent=1, cdr=2, cdr_used=True, subtree_done=False,
                   degree=3, entry_port=1, arrived_forward=False, at_root_marker=False)
    assert out.exit_port == 2 and out.writes == {} and not out.leaves_forward


def test_dfs_forward_probe_bounces_off_occupied_node():
    out = dfs_step(parent=1, cdr=3, cdr_used=True, subtree_done=False,
                   degree=3, entry_port=2, arrived_forward=True, at_root_marker=False)
    assert out.bounced and out.exit_port == 2 and out.writes == {}


def test_dfs_leaf_is_marked_exhausted():
    out = dfs_step(parent=1, cdr=1, cdr_used=False, subtree_done=False,
                   degree=1, entry_port=1, arrived_forward=False, at_root_marker=False)
    assert out.exit_port == 1 and out.writes == {"subtree_done": True}


def test_dfs_unexpected_arrival_triggers_repair():
    out = dfs_step(parent=2, cdr=1, cdr_used=False, subtree_done=False,
                   degree=3, entry_port=3, arrived_forward=False, at_root_marker=False)
    assert out.repaired and out.exit_port is None
    assert out.writes == {"parent": 3, "cdr": 1, "cdr_used": False, "subtree_done": False}


def test_dfs_never_rewrites_root_parent():
    out = dfs_step(parent=None, cdr=1, cdr_used=True, subtree_done=False,
                   degree=3, entry_port=2, arrived_forward=False, at_root_marker=True)
    assert "parent" not in out.writes


# -- cycle avoidance ------------------------------------------------------------------


def test_complete_graph_bounce_and_no_loops():
    # K4 with k=4 forces a cycle-closing probe: the explorer bounces, nothing
    # loops, and the settled set matches the reference DFS
    g = graphs.complete(4)
    result, protocol = rooted_run(g, 4)
    assert result.dispersed
    bounces = [e for e in result.world.trace if e.kind == "move" and e.payload.get("bounce")]
    assert bounces
    assert oracle.loop_violations(result.world.trace) == []
    assert oracle.one_mover_violations(result.world.trace) == []
    settled = {result.world.locations[r] for r in range(1, 5)}
    assert settled == oracle.reference_first_k(g, 1, 4)


# -- explorer budget -------------------------------------------------------------------


def test_ring4_second_robot_settles_quickly():
    result, _ = rooted_run(graphs.ring(4), 2)
    settle2 = next(e for e in result.world.trace if e.robot == 2 and e.kind == "settle")
    assert settle2.payload["rsr"] == 2  # one hop out, one observation round
    assert settle2.payload["rsr"] <= 2 * 2


def test_path_frontier_always_within_budget():
    # on a path the frontier sits at distance rank-1, well inside the budget,
    # so nobody ever reports back
    g = graphs.path(20)
    result, _ = rooted_run(g, 6)
    assert result.dispersed
    assert not any(e.kind == "move" and e.payload.get("mode") == "retreat" for e in result.world.trace)
    assert {result.world.locations[r] for r in range(1, 7)} == oracle.reference_first_k(g, 1, 6)


def test_settler_never_enters_retreat():
    # a robot that settles never has a retreat move afterwards
    g = graphs.complete(5)
    result, _ = rooted_run(g, 5)
    settle_round = {e.robot: e.round for e in result.world.trace if e.kind == "settle"}
    for e in result.world.trace:
        if e.kind == "move" and e.payload.get("mode") == "retreat":
            assert e.round < settle_round.get(e.robot, 10**9)


# -- repair ------------------------------------------------------------------------------


def test_crash_replacement_repair_scenario():
    # star(6) rooted at leaf 2: the center settler (robot 2) crashes while
    # robot 5 walks back, so robot 5 refills the center with its parent aimed
    # away from the root; robot 6 detects the mismatch and resets the pointers
    g = graphs.star(6)
    schedule = CrashSchedule.from_pairs([(2, 31)])
    result, protocol = rooted_run(g, 6, schedule, root=2)
    repairs = [e for e in result.world.trace if e.kind == "repair"]
    assert [(e.round, e.robot, e.payload["target"]) for e in repairs] == [(45, 6, 5)]
    assert repairs[0].payload["parent"] == 1  # reset toward the true root
    assert result.dispersed
    assert oracle.one_mover_violations(result.world.trace) == []
    assert oracle.loop_violations(result.world.trace) == []
    # replacement sits at the center, everyone alive is placed
    assert result.world.locations[5] == 1


def test_fault_free_runs_contain_no_repairs():
    for g in (graphs.ring(8), graphs.complete(5), graphs.star(7), graphs.random_connected(12, 22, 9)):
        result, _ = rooted_run(g, (g.node_count + 1) // 2)
        assert not any(e.kind == "repair" for e in result.world.trace)


def test_crash_delay_is_linear_in_k():
    # paired comparison: one crash costs at most a linear number of rounds
    g = graphs.star(6)
    faulty, _ = rooted_run(g, 6, CrashSchedule.from_pairs([(2, 31)]), root=2)
    clean, _ = rooted_run(g, 6, root=2)
    assert faulty.dispersed and clean.dispersed
    assert faulty.rounds_elapsed - clean.rounds_elapsed <= 7 * 6


# -- invariants over a mixed campaign --------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_one_mover_and_progress_under_crashes(seed):
    import random

    rng = random.Random(seed)
    g = graphs.random_connected(10, 16, seed)
    k = rng.randint(3, 8)
    ids = list(range(1, k + 1))
    protocol = RootedDispersion(ids, g.max_degree())
    f = rng.randint(0, k - 1)
    victims = rng.sample(ids, f)
    schedule = CrashSchedule.from_pairs(
        [(v, rng.randint(1, protocol.round_budget)) for v in victims]
    )
    result = run(g, {i: 1 for i in ids}, protocol, schedule)
    assert result.dispersed
    assert result.rounds_elapsed <= protocol.round_budget
    assert oracle.one_mover_violations(result.world.trace) == []
    assert oracle.loop_violations(result.world.trace) == []


def test_settled_robots_never_move_again():
    g = graphs.complete(5)
    result, _ = rooted_run(g, 5)
    settle_round = {e.robot: e.round for e in result.world.trace if e.kind == "settle"}
    for e in result.world.trace:
        if e.kind == "move":
            assert e.round <= settle_round.get(e.robot, 10**9)


def test_every_root_choice_works():
    # the start node is arbitrary: fault-free equivalence with the reference
    # DFS and exhaustive single-crash coverage from every possible root
    for g in (graphs.ring(5), graphs.path(4), graphs.star(4), graphs.complete(4)):
        for root in g.nodes():
            ids = [1, 2, 3]
            factory = lambda ids=ids, g=g: RootedDispersion(ids, g.max_degree())
            ff = run(g, {i: root for i in ids}, factory())
            assert ff.dispersed
            assert {ff.world.locations[r] for r in ids} == oracle.reference_first_k(g, root, 3)

            def check(result, schedule):
                problems = []
                if oracle.one_mover_violations(result.world.trace):
                    problems.append("one-mover")
                if oracle.loop_violations(result.world.trace):
                    problems.append("loop")
                return problems

            report = oracle.enumerate_adversary(
                g, {i: root for i in ids}, factory, f=1,
                horizon=ff.rounds_elapsed + 10, per_run_check=check,
            )
            assert report.failures == 0


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(4, 10),
    extra=st.integers(0, 8),
    seed=st.integers(0, 10_000),
    data=st.data(),
)
def test_property_dispersion_under_any_single_crash(n, extra, seed, data):
    m = min(n - 1 + extra, n * (n - 1) // 2)
    g = graphs.random_connected(n, m, seed)
    k = data.draw(st.integers(1, n), label="k")
    ids = list(range(1, k + 1))
    protocol = RootedDispersion(ids, g.max_degree())
    schedule = CrashSchedule()
    if k > 1:
        victim = data.draw(st.integers(1, k), label="victim")
        crash_round = data.draw(st.integers(1, protocol.round_budget), label="round")
        schedule = CrashSchedule.from_pairs([(victim, crash_round)])
    result = run(g, {i: 1 for i in ids}, protocol, schedule)
    assert result.dispersed
    assert result.rounds_elapsed <= protocol.round_budget
    assert oracle.one_mover_violations(result.world.trace) == []
    assert oracle.loop_violations(result.world.trace) == []
