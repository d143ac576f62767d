from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ctx, make_exec, rank_bursts
from tracefuse.model import (
    BOUNDARY,
    COLLECTIVE,
    NONE,
    OTHER,
    P2P,
    Burst,
    CallClassifier,
    CommContext,
    DerivedConfig,
    ExecutionDataset,
    compute_derived_features,
    concurrency_of,
)


@pytest.mark.parametrize(
    "name, cls",
    [
        ("MPI_Allreduce", COLLECTIVE),
        ("MPI_BCAST", COLLECTIVE),
        ("MPI_Allgatherv", COLLECTIVE),
        ("MPI_Ibarrier", COLLECTIVE),
        ("MPI_Isend", P2P),
        ("MPI_Waitall", P2P),
        ("MPI_Comm_rank", OTHER),
        ("NONE", NONE),
    ],
)
def test_default_classification(name, cls):
    assert CallClassifier()(name) == cls


def test_custom_collective_set():
    c = CallClassifier(["MPI_Alltoall"])
    assert c("MPI_Alltoall") == COLLECTIVE
    assert c("MPI_Bcast") == OTHER


def test_comm_context_rules():
    with pytest.raises(ValueError):
        CommContext(CallClassifier().call("MPI_Bcast"), partner=1)
    with pytest.raises(ValueError):
        CommContext(CallClassifier().call("MPI_Send"), size=-1)
    assert CommContext().call == BOUNDARY
    assert ctx("MPI_Send", 1, 0).size == 0
    assert ctx("MPI_Send", 1).size is None


def test_burst_invariants():
    with pytest.raises(ValueError):
        Burst(0, 10, 5)
    b = Burst(0, 100, 250, before=ctx("MPI_Bcast"), after=ctx("MPI_Isend", 1, 8))
    assert b.duration == 150
    assert b.pattern == ("MPI_BCAST", "MPI_ISEND")


def test_dataset_rejects_unsorted_and_unknown_counters():
    a, b = rank_bursts(0, ["MPI_Bcast"])
    with pytest.raises(ValueError, match="sorted"):
        ExecutionDataset("r", "s", {0: (b, a)})
    with pytest.raises(ValueError, match="unknown counters"):
        ExecutionDataset("r", "s", {0: (a.replace(counters={"PAPI_X": 1}),)})


def test_rel_position_example():
    bursts = rank_bursts(0, ["MPI_Barrier"] * 9)
    ds = make_exec("run1", {0: bursts})
    assert ds.ranks[0][4].rel_position == 0.5
    assert ds.ranks[0][-1].rel_position == 1.0


def test_ipc_examples():
    counters = [{"PAPI_TOT_INS": 2000, "PAPI_TOT_CYC": 1000}, {"PAPI_TOT_INS": 5}]
    ds = make_exec("run1", {0: rank_bursts(0, ["MPI_Bcast"], counters=counters)})
    assert ds.ranks[0][0].ipc == 2.0
    assert ds.ranks[0][1].ipc is None


def test_ipc_custom_counter_names():
    counters = [{"A_INS": 30, "A_CYC": 10}]
    ds = make_exec("run1", {0: rank_bursts(0, [], counters=counters)})
    ds = compute_derived_features(ds, DerivedConfig("A_INS", "A_CYC"))
    assert ds.ranks[0][0].ipc == 3.0


def test_frequency_is_bursts_per_second_of_rank_span():
    ds = make_exec("run1", {0: rank_bursts(0, ["MPI_Bcast"], dur=100, gap=800)})
    # two bursts over [0, 1000] ns
    assert ds.ranks[0][0].frequency == pytest.approx(2 / 1e-6)


def test_concurrency_single_rank():
    ds = make_exec("run1", {0: rank_bursts(0, ["MPI_Bcast"] * 3)})
    assert all(b.concurrency == 1.0 for b in ds.bursts())


def test_concurrency_half_overlap():
    r0 = (Burst(0, 0, 100),)
    r1 = (Burst(1, 50, 150),)
    ds = make_exec("run1", {0: r0, 1: r1})
    assert concurrency_of(r0[0], ds) == 1.5
    assert ds.ranks[0][0].concurrency == 1.5


def test_concurrency_node_map():
    r0 = (Burst(0, 10, 20),)
    others = {r: (Burst(r, 0, 100),) for r in (1, 2, 3)}
    ds = make_exec("run1", {0: r0, **others})
    node_map = {0: 0, 1: 0, 2: 1, 3: 1}
    assert concurrency_of(r0[0], ds, node_map) == 2.0
    assert concurrency_of(r0[0], ds) == 4.0


def test_zero_duration_burst_concurrency_is_one():
    ds = make_exec("run1", {0: (Burst(0, 5, 5),), 1: (Burst(1, 0, 10),)})
    assert ds.ranks[0][0].concurrency == 1.0


intervals = st.lists(
    st.tuples(st.integers(0, 50), st.integers(1, 50)), min_size=1, max_size=6
)


def _layout(rank, layout, shift=0):
    t = shift
    out = []
    for gap, dur in layout:
        t += gap
        out.append(Burst(rank, t, t + dur))
        t += dur
    return tuple(out)


@settings(max_examples=60, deadline=None)
@given(st.lists(intervals, min_size=1, max_size=4), st.integers(0, 10**6))
def test_derived_features_properties(layout, shift):
    ds = make_exec("x", {r: _layout(r, s) for r, s in enumerate(layout)})
    moved = make_exec("x", {r: _layout(r, s, shift) for r, s in enumerate(layout)})
    n = len(layout)
    for b, m in zip(ds.bursts(), moved.bursts()):
        assert 1.0 <= b.concurrency <= n
        # translation invariance
        assert b.concurrency == pytest.approx(m.concurrency)
    for bs in ds.ranks.values():
        assert bs[-1].rel_position == 1.0
    # idempotent
    assert compute_derived_features(ds) == ds
