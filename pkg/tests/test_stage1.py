from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_exec, rank_bursts
from tracefuse.matchset import DIRECT, PATTERN, MatchSet, check_partition
from tracefuse.stage1 import MatchInputError, stage1_match


def _all_refs(execs):
    return {e.exec_id: [b.ref for b in e.bursts()] for e in execs}


def test_direct_ids(three_burst_execs):
    groups, unmatched = stage1_match(three_burst_execs)
    assert [g.burst_id for g in groups] == ["r0_d_1", "r0_d_2", "r0_d_3"]
    assert all(g.stage == DIRECT for g in groups)
    assert unmatched == {"run1": [], "run2": []}


def test_three_identical_copies_all_direct():
    calls = ["MPI_Isend", "MPI_Wait", "MPI_Allreduce"] * 5
    execs = [make_exec(e, {0: rank_bursts(0, calls), 1: rank_bursts(1, calls)}) for e in ("a", "b", "c")]
    groups, unmatched = stage1_match(execs)
    assert len(groups) == 2 * 16
    assert all(g.stage == DIRECT and len(g.members) == 3 for g in groups)
    assert not any(unmatched.values())


def test_fifteen_equal_occurrences_paired_in_order():
    base = ["MPI_Allreduce", "MPI_Bcast"] * 15
    run1 = make_exec("run1", {0: rank_bursts(0, base + ["MPI_Barrier"])})
    run2 = make_exec("run2", {0: rank_bursts(0, base + ["MPI_Comm_rank"])})
    groups, _ = stage1_match([run1, run2])
    ab = [g for g in groups if "MPI_ALLREDUCE→MPI_BCAST" in g.burst_id]
    assert len(ab) == 15
    assert [g.burst_id for g in ab] == [f"r0_p_MPI_ALLREDUCE→MPI_BCAST_{j}" for j in range(1, 16)]
    for g in ab:
        assert g.stage == PATTERN
        assert g.members["run1"] == g.members["run2"]


def test_unequal_frequency_all_unmatched():
    run1 = make_exec("run1", {0: rank_bursts(0, ["MPI_Bcast", "MPI_Barrier"] * 3)})
    run2 = make_exec("run2", {0: rank_bursts(0, ["MPI_Bcast", "MPI_Barrier"] * 4)})
    groups, unmatched = stage1_match([run1, run2])
    bb = ("MPI_BCAST", "MPI_BARRIER")
    left = [r for e, execs in (("run1", run1), ("run2", run2)) for r in unmatched[e] if execs.burst(*r).pattern == bb]
    assert len(left) == 7
    assert not any("MPI_BCAST→MPI_BARRIER" in g.burst_id for g in groups)


def test_input_errors():
    a = make_exec("a", {0: rank_bursts(0, [])})
    with pytest.raises(MatchInputError):
        stage1_match([a])
    with pytest.raises(MatchInputError, match="duplicate"):
        stage1_match([a, a])
    b = make_exec("b", {0: rank_bursts(0, []), 1: rank_bursts(1, [])})
    with pytest.raises(MatchInputError, match="rank count"):
        stage1_match([a, b])
    empty = make_exec("c", {})
    with pytest.raises(MatchInputError, match="no bursts"):
        stage1_match([a, empty])


call_lists = st.lists(st.sampled_from(["MPI_Bcast", "MPI_Isend", "MPI_Wait", "MPI_Barrier"]), max_size=12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(call_lists, call_lists), min_size=2, max_size=3))
def test_partition_and_pattern_consistency(per_exec):
    execs = [
        make_exec(f"run{i + 1}", {0: rank_bursts(0, c0), 1: rank_bursts(1, c1)})
        for i, (c0, c1) in enumerate(per_exec)
    ]
    groups, unmatched = stage1_match(execs)
    ms = MatchSet([e.exec_id for e in execs], groups, unmatched)
    assert check_partition(ms, _all_refs(execs)) == []
    by_id = {e.exec_id: e for e in execs}
    for g in groups:
        patterns = {by_id[e].burst(*r).pattern for e, r in g.members.items()}
        assert len(patterns) == 1
        assert len(g.members) == len(execs)
        # members keep temporal order within a pattern
    ids = [g.burst_id for g in groups]
    assert len(ids) == len(set(ids))
