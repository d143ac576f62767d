"""Core burst types and per-burst derived features."""

from __future__ import annotations

import dataclasses
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

P2P = "point-to-point"
COLLECTIVE = "collective"
OTHER = "other"
NONE = "none"

BOUNDARY_NAME = "NONE"

DEFAULT_COLLECTIVES = (
    "MPI_BARRIER",
    "MPI_BCAST",
    "MPI_ALLREDUCE",
    "MPI_GATHER",
    "MPI_SCATTER",
)

# Extrae files these under the point-to-point MPI event type.
P2P_CALLS = frozenset(
    {
        "MPI_SEND", "MPI_RECV", "MPI_ISEND", "MPI_IRECV", "MPI_SSEND", "MPI_BSEND",
        "MPI_RSEND", "MPI_ISSEND", "MPI_IBSEND", "MPI_IRSEND", "MPI_SENDRECV",
        "MPI_SENDRECV_REPLACE", "MPI_WAIT", "MPI_WAITALL", "MPI_WAITANY",
        "MPI_WAITSOME", "MPI_TEST", "MPI_TESTALL", "MPI_TESTANY", "MPI_TESTSOME",
        "MPI_PROBE", "MPI_IPROBE", "MPI_MPROBE", "MPI_IMPROBE", "MPI_MRECV",
        "MPI_IMRECV", "MPI_START", "MPI_STARTALL",
    }
)


def _collective_regex(collectives: Iterable[str]) -> re.Pattern[str]:
    cores = sorted({c.upper().removeprefix("MPI_") for c in collectives}, key=len, reverse=True)
    if not cores:
        return re.compile(r"(?!)")
    # name-prefixed variants: MPI_IBCAST, MPI_ALLGATHERV, MPI_REDUCE_SCATTER, ...
    return re.compile(r"^MPI_[A-Z_]*?(?:%s)V?$" % "|".join(map(re.escape, cores)))


class CallClassifier:
    """Maps an MPI call name to its class.

    Collectives come from a configurable core set and also match their
    prefixed variants (``MPI_ALLGATHERV`` matches ``MPI_GATHER``).
    """

    def __init__(self, collectives: Iterable[str] = DEFAULT_COLLECTIVES):
        self.collectives = tuple(collectives)
        self._regex = _collective_regex(self.collectives)
        self._cache: dict[str, str] = {}

    def __call__(self, name: str) -> str:
        cls = self._cache.get(name)
        if cls is None:
            upper = name.upper()
            if upper == BOUNDARY_NAME:
                cls = NONE
            elif self._regex.match(upper):
                cls = COLLECTIVE
            elif upper in P2P_CALLS:
                cls = P2P
            else:
                cls = OTHER
            self._cache[name] = cls
        return cls

    def call(self, name: str) -> MpiCall:
        return MpiCall(name, self(name))


default_classifier = CallClassifier()


@dataclass(frozen=True)
class MpiCall:
    name: str
    cls: str

    @property
    def label(self) -> str:
        return self.name.upper()


BOUNDARY = MpiCall(BOUNDARY_NAME, NONE)


@dataclass(frozen=True)
class CommContext:
    """The MPI call on one side of a compute burst.

    ``size`` of ``None`` means "not known", which is different from a
    zero-byte message.
    """

    call: MpiCall = BOUNDARY
    partner: int | None = None
    size: int | None = None

    def __post_init__(self):
        if self.partner is not None and self.call.cls != P2P:
            raise ValueError(f"partner given for non point-to-point call {self.call.name}")
        if self.size is not None and self.size < 0:
            raise ValueError("message size must be non-negative")


@dataclass(frozen=True)
class Burst:
    task_id: int
    begin_time: int
    end_time: int
    counters: Mapping[str, int] = field(default_factory=dict)
    before: CommContext = CommContext()
    after: CommContext = CommContext()
    seq_index: int = 0
    rel_position: float | None = None
    ipc: float | None = None
    frequency: float | None = None
    concurrency: float | None = None
    region_id: int | None = None
    burst_id: str | None = None

    def __post_init__(self):
        if self.end_time < self.begin_time:
            raise ValueError(
                f"burst on task {self.task_id} ends before it begins "
                f"({self.begin_time} > {self.end_time})"
            )

    @property
    def duration(self) -> int:
        return self.end_time - self.begin_time

    @property
    def midpoint(self) -> float:
        return (self.begin_time + self.end_time) / 2

    @property
    def pattern(self) -> tuple[str, str]:
        return self.before.call.label, self.after.call.label

    @property
    def ref(self) -> tuple[int, int]:
        return self.task_id, self.seq_index

    def replace(self, **changes) -> Burst:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ExecutionDataset:
    """All compute bursts of one instrumented run, per rank."""

    exec_id: str
    counter_set_name: str
    ranks: Mapping[int, Sequence[Burst]]
    counter_names: Sequence[str] = ()

    def __post_init__(self):
        known = set(self.counter_names)
        for rank, bursts in self.ranks.items():
            prev = None
            for b in bursts:
                if b.task_id != rank:
                    raise ValueError(f"burst of task {b.task_id} filed under rank {rank}")
                if prev is not None and b.begin_time < prev.begin_time:
                    raise ValueError(f"rank {rank} bursts not sorted by begin_time")
                extra = set(b.counters) - known
                if extra:
                    raise ValueError(f"unknown counters {sorted(extra)} on rank {rank}")
                prev = b

    @property
    def rank_ids(self) -> list[int]:
        return sorted(self.ranks)

    @property
    def n_bursts(self) -> int:
        return sum(len(bs) for bs in self.ranks.values())

    def bursts(self) -> Iterable[Burst]:
        for rank in self.rank_ids:
            yield from self.ranks[rank]

    def burst(self, rank: int, seq_index: int) -> Burst:
        b = self.ranks[rank][seq_index]
        if b.seq_index != seq_index:
            # seq_index is positional after extraction; fall back to a scan otherwise
            for b in self.ranks[rank]:
                if b.seq_index == seq_index:
                    return b
            raise KeyError((rank, seq_index))
        return b

    def replace(self, **changes) -> ExecutionDataset:
        return dataclasses.replace(self, **changes)

    def map_bursts(self, fn) -> ExecutionDataset:
        return self.replace(ranks={r: tuple(fn(b) for b in self.ranks[r]) for r in self.rank_ids})


@dataclass(frozen=True)
class CollectiveRegion:
    t_start: int
    t_end: int
    region_id: int

    @property
    def length(self) -> int:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class DerivedConfig:
    instructions: str = "PAPI_TOT_INS"
    cycles: str = "PAPI_TOT_CYC"
    node_map: Mapping[int, int] | None = None


class _BusyTime:
    """Cumulative compute time of one rank, B(t) = busy time in [-inf, t]."""

    def __init__(self, bursts: Sequence[Burst]):
        self.begins = np.array([b.begin_time for b in bursts], dtype=np.int64)
        self.durs = np.array([b.duration for b in bursts], dtype=np.int64)
        self.cum = np.concatenate(([0], np.cumsum(self.durs)))

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        idx = np.searchsorted(self.begins, t, side="right") - 1
        safe = np.clip(idx, 0, None)
        partial = np.minimum(t - self.begins[safe], self.durs[safe]) if len(self.begins) else 0
        return np.where(idx >= 0, self.cum[safe] + partial, 0)


def _peers(rank: int, all_ranks: Iterable[int], node_map: Mapping[int, int] | None) -> list[int]:
    if node_map is None:
        return [r for r in all_ranks if r != rank]
    node = node_map.get(rank)
    return [r for r in all_ranks if r != rank and node_map.get(r) == node]


def _rank_concurrency(
    rank: int,
    bursts: Sequence[Burst],
    busy: Mapping[int, _BusyTime],
    node_map: Mapping[int, int] | None,
) -> np.ndarray:
    begins = np.array([b.begin_time for b in bursts], dtype=np.int64)
    ends = np.array([b.end_time for b in bursts], dtype=np.int64)
    durs = ends - begins
    overlap = np.zeros(len(bursts), dtype=np.int64)
    peers = _peers(rank, busy, node_map)
    for peer in peers:
        overlap += busy[peer](ends) - busy[peer](begins)
    out = np.ones(len(bursts))
    pos = durs > 0
    out[pos] = 1.0 + overlap[pos] / durs[pos]
    return np.clip(out, 1.0, 1.0 + len(peers))


def concurrency_of(
    burst: Burst,
    all_ranks: ExecutionDataset,
    node_map: Mapping[int, int] | None = None,
) -> float:
    """Average number of ranks computing during ``burst``, itself included.

    With ``node_map`` only ranks on the same node count.
    """
    busy = {r: _BusyTime(all_ranks.ranks[r]) for r in all_ranks.ranks}
    busy.setdefault(burst.task_id, _BusyTime([burst]))
    return float(_rank_concurrency(burst.task_id, [burst], busy, node_map)[0])


def _ratio(num: int | None, den: int | None) -> float | None:
    if num is None or den is None or den <= 0:
        return None
    return num / den


def compute_derived_features(
    dataset: ExecutionDataset, config: DerivedConfig | None = None
) -> ExecutionDataset:
    """Fill rel_position, ipc, frequency and concurrency on every burst.

    ``frequency`` is the rank's burst count over its wall-clock span, in
    bursts per second; it is the same for every burst of a rank.
    Missing counters leave ``ipc`` unset.
    """
    config = config or DerivedConfig()
    busy = {r: _BusyTime(bs) for r, bs in dataset.ranks.items()}
    ranks = {}
    for rank in dataset.rank_ids:
        bursts = dataset.ranks[rank]
        n = len(bursts)
        if n == 0:
            ranks[rank] = ()
            continue
        span = bursts[-1].end_time - bursts[0].begin_time
        freq = n / (span * 1e-9) if span > 0 else None
        conc = _rank_concurrency(rank, bursts, busy, config.node_map)
        ranks[rank] = tuple(
            b.replace(
                seq_index=i,
                rel_position=(i + 1) / n,
                ipc=_ratio(b.counters.get(config.instructions), b.counters.get(config.cycles)),
                frequency=freq,
                concurrency=float(conc[i]),
            )
            for i, b in enumerate(bursts)
        )
    return dataset.replace(ranks=ranks)
