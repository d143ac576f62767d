from __future__ import annotations

from collections.abc import Mapping, Sequence

import pytest

from tracefuse.model import (
    Burst,
    CallClassifier,
    CommContext,
    ExecutionDataset,
    compute_derived_features,
)

CLASSIFY = CallClassifier()


def ctx(name: str | None, partner: int | None = None, size: int | None = None) -> CommContext:
    if name is None:
        return CommContext()
    return CommContext(CLASSIFY.call(name), partner, size)


def rank_bursts(
    rank: int,
    calls: Sequence[str | tuple],
    dur: int | Sequence[int] = 100,
    gap: int = 10,
    start: int = 0,
    counters: Sequence[Mapping[str, int]] | None = None,
) -> tuple[Burst, ...]:
    """Bursts of one rank around ``calls``: NONE→c1, c1→c2, ..., cn→NONE.

    A call may be a name or a (name, partner, size) tuple.
    """
    contexts = [ctx(None)] + [ctx(*c) if isinstance(c, tuple) else ctx(c) for c in calls] + [ctx(None)]
    n = len(calls) + 1
    durs = [dur] * n if isinstance(dur, int) else list(dur)
    out = []
    t = start
    for i in range(n):
        out.append(
            Burst(
                task_id=rank,
                begin_time=t,
                end_time=t + durs[i],
                counters=dict(counters[i]) if counters else {},
                before=contexts[i],
                after=contexts[i + 1],
                seq_index=i,
            )
        )
        t += durs[i] + gap
    return tuple(out)


def make_exec(
    exec_id: str,
    ranks: Mapping[int, Sequence[Burst]],
    counter_set: str = "SET",
    counter_names: Sequence[str] | None = None,
) -> ExecutionDataset:
    if counter_names is None:
        names = sorted({c for bs in ranks.values() for b in bs for c in b.counters})
    else:
        names = list(counter_names)
    return compute_derived_features(ExecutionDataset(exec_id, counter_set, dict(ranks), tuple(names)))


@pytest.fixture
def three_burst_execs():
    """Two executions, one rank, three bursts with identical structure."""
    calls = ["MPI_Bcast", "MPI_Allreduce"]
    return [make_exec(e, {0: rank_bursts(0, calls)}) for e in ("run1", "run2")]


# one (criterion, PASS/FAIL, title, detail) entry per acceptance check
ACCEPTANCE_RESULTS: list[tuple[int, str, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, title, detail in sorted(ACCEPTANCE_RESULTS):
        line = f"{status} criterion {n}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
