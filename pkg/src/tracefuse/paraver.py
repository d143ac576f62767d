"""Reading and writing the supported Paraver subset (.prv + .pcf).

Only MPI-only traces are handled: one thread per task, record types 1
(state), 2 (event) and 3 (communication).  Task ids are 1-based on disk
and 0-based everywhere else.
"""

from __future__ import annotations

import bisect
import logging
import re
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

from .model import (
    BOUNDARY,
    DEFAULT_COLLECTIVES,
    P2P,
    Burst,
    CallClassifier,
    CommContext,
    DerivedConfig,
    ExecutionDataset,
    MpiCall,
    compute_derived_features,
)

logger = logging.getLogger(__name__)

MPI_P2P_TYPE = 50000001
MPI_COLLECTIVE_TYPE = 50000002
MPI_OTHER_TYPE = 50000003
DEFAULT_MPI_TYPES = (MPI_P2P_TYPE, MPI_COLLECTIVE_TYPE, MPI_OTHER_TYPE)
APPLICATION_TYPE = 40000001
PAPI_TYPE_BASE = 42000000

PAPI_CODES = {
    "PAPI_L1_DCM": 0x00,
    "PAPI_L2_DCM": 0x02,
    "PAPI_L3_TCM": 0x08,
    "PAPI_TOT_INS": 0x32,
    "PAPI_FP_INS": 0x34,
    "PAPI_LD_INS": 0x35,
    "PAPI_SR_INS": 0x36,
    "PAPI_BR_INS": 0x37,
    "PAPI_VEC_INS": 0x38,
    "PAPI_TOT_CYC": 0x3B,
    "PAPI_FP_OPS": 0x66,
    "PAPI_SP_OPS": 0x67,
    "PAPI_DP_OPS": 0x68,
    "PAPI_VEC_SP": 0x69,
    "PAPI_VEC_DP": 0x6A,
}

# MPI call -> (event type, value) used when this package writes traces.
MPI_CATALOG: dict[str, tuple[int, int]] = {
    "MPI_Send": (MPI_P2P_TYPE, 1),
    "MPI_Recv": (MPI_P2P_TYPE, 2),
    "MPI_Isend": (MPI_P2P_TYPE, 3),
    "MPI_Irecv": (MPI_P2P_TYPE, 4),
    "MPI_Wait": (MPI_P2P_TYPE, 5),
    "MPI_Waitall": (MPI_P2P_TYPE, 6),
    "MPI_Bcast": (MPI_COLLECTIVE_TYPE, 7),
    "MPI_Barrier": (MPI_COLLECTIVE_TYPE, 8),
    "MPI_Reduce": (MPI_COLLECTIVE_TYPE, 9),
    "MPI_Allreduce": (MPI_COLLECTIVE_TYPE, 10),
    "MPI_Alltoall": (MPI_COLLECTIVE_TYPE, 11),
    "MPI_Gather": (MPI_COLLECTIVE_TYPE, 13),
    "MPI_Scatter": (MPI_COLLECTIVE_TYPE, 15),
    "MPI_Allgather": (MPI_COLLECTIVE_TYPE, 17),
    "MPI_Allgatherv": (MPI_COLLECTIVE_TYPE, 18),
    "MPI_Comm_rank": (MPI_OTHER_TYPE, 19),
    "MPI_Comm_size": (MPI_OTHER_TYPE, 20),
    "MPI_Comm_split": (MPI_OTHER_TYPE, 23),
    "MPI_Comm_free": (MPI_OTHER_TYPE, 24),
    "MPI_Init": (MPI_OTHER_TYPE, 31),
    "MPI_Finalize": (MPI_OTHER_TYPE, 32),
    "MPI_Ssend": (MPI_P2P_TYPE, 34),
    "MPI_Test": (MPI_P2P_TYPE, 39),
    "MPI_Sendrecv": (MPI_P2P_TYPE, 41),
    "MPI_Iprobe": (MPI_P2P_TYPE, 45),
}

_MPI_TYPE_LABELS = {
    MPI_P2P_TYPE: "MPI Point-to-point",
    MPI_COLLECTIVE_TYPE: "MPI Collective Comm",
    MPI_OTHER_TYPE: "MPI Other",
}


class TraceFormatError(ValueError):
    """Malformed .prv/.pcf input; the message carries the line number."""


class HybridTraceError(TraceFormatError):
    pass


def is_counter_label(label: str) -> bool:
    """PAPI counters, including exec-prefixed copies such as run2_PAPI_L1_DCM."""
    return label.startswith("PAPI_") or "_PAPI_" in label


def papi_type(name: str) -> int | None:
    code = PAPI_CODES.get(name)
    return None if code is None else PAPI_TYPE_BASE + code


# --------------------------------------------------------------------- pcf


@dataclass
class PcfDictionary:
    event_labels: dict[int, str] = field(default_factory=dict)
    value_labels: dict[tuple[int, int], str] = field(default_factory=dict)

    def counter_types(self) -> dict[int, str]:
        return {t: lbl for t, lbl in self.event_labels.items() if is_counter_label(lbl)}

    def type_of(self, label: str) -> int | None:
        for t, lbl in self.event_labels.items():
            if lbl == label:
                return t
        return None

    def values_of(self, event_type: int) -> dict[int, str]:
        return {v: lbl for (t, v), lbl in self.value_labels.items() if t == event_type}

    def to_text(self) -> str:
        blocks = []
        by_values: dict[tuple, list[int]] = defaultdict(list)
        for t in sorted(self.event_labels):
            by_values[tuple(sorted(self.values_of(t).items()))].append(t)
        for values, types in sorted(by_values.items(), key=lambda kv: kv[1][0]):
            lines = ["EVENT_TYPE"]
            lines += [f"0    {t}    {self.event_labels[t]}" for t in types]
            if values:
                lines.append("VALUES")
                lines += [f"{v}      {lbl}" for v, lbl in values]
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + ("\n" if blocks else "")


_SECTION_RE = re.compile(r"^[A-Z_]+$")


def parse_pcf(text: str) -> PcfDictionary:
    """Parse EVENT_TYPE/VALUES blocks; every other section is skipped."""
    pcf = PcfDictionary()
    section = None
    block_types: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            if section == "VALUES" or section == "EVENT_TYPE":
                section, block_types = None, []
            continue
        if _SECTION_RE.match(line):
            if line == "EVENT_TYPE":
                section, block_types = "EVENT_TYPE", []
            elif line == "VALUES" and section == "EVENT_TYPE":
                section = "VALUES"
            else:
                section, block_types = line, []
            continue
        if section == "EVENT_TYPE":
            parts = line.split(None, 2)
            try:
                etype = int(parts[1])
            except (IndexError, ValueError):
                raise TraceFormatError(f"pcf line {lineno}: malformed EVENT_TYPE entry {line!r}")
            pcf.event_labels[etype] = parts[2].strip() if len(parts) > 2 else ""
            block_types.append(etype)
        elif section == "VALUES":
            parts = line.split(None, 1)
            try:
                value = int(parts[0])
            except ValueError:
                raise TraceFormatError(f"pcf line {lineno}: non-integer value key {parts[0]!r}")
            label = parts[1].strip() if len(parts) > 1 else ""
            for etype in block_types:
                pcf.value_labels[(etype, value)] = label
    return pcf


def mpi_pcf(mpi_types: Sequence[int] = DEFAULT_MPI_TYPES) -> PcfDictionary:
    """Dictionary for the MPI calls and application markers of MPI_CATALOG."""
    pcf = PcfDictionary()
    pcf.event_labels[APPLICATION_TYPE] = "Application"
    pcf.value_labels[(APPLICATION_TYPE, 0)] = "End"
    pcf.value_labels[(APPLICATION_TYPE, 1)] = "Begin"
    for t in mpi_types:
        pcf.event_labels[t] = _MPI_TYPE_LABELS.get(t, f"MPI {t}")
        pcf.value_labels[(t, 0)] = "End"
    for name, (t, v) in MPI_CATALOG.items():
        if t in pcf.event_labels:
            pcf.value_labels[(t, v)] = name
    return pcf


# --------------------------------------------------------------------- prv


@dataclass(frozen=True)
class RawEvent:
    task: int
    time: int
    entries: tuple[tuple[int, int], ...]
    line: int = 0


@dataclass(frozen=True)
class CommRecord:
    sender_task: int
    receiver_task: int
    send_time: int
    recv_time: int
    size: int
    tag: int


@dataclass(frozen=True)
class PrvHeader:
    line: str
    total_time: int
    n_ranks: int


class ParsedTrace(NamedTuple):
    events: dict[int, list[RawEvent]]
    comms: list[CommRecord]
    header: PrvHeader


_HEADER_RE = re.compile(r"^#Paraver \((?P<date>[^)]*)\):(?P<total>\d+)(?:_ns)?:(?P<rest>.*)$")
_APPL_RE = re.compile(r"^(?:\d+(?:\([\d,]*\))?):(?P<nappl>\d+):(?P<ntasks>\d+)\(")


def _parse_header(line: str) -> tuple[int | None, int | None]:
    m = _HEADER_RE.match(line)
    if not m:
        return None, None
    total = int(m["total"])
    a = _APPL_RE.match(m["rest"])
    return total, int(a["ntasks"]) if a else None


def parse_prv(text: str) -> ParsedTrace:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#Paraver"):
        raise TraceFormatError("prv line 1: missing '#Paraver' header")
    header_line = lines[0].rstrip()
    total, n_ranks = _parse_header(header_line)

    events: dict[int, list[RawEvent]] = defaultdict(list)
    comms: list[CommRecord] = []
    last_time: dict[int, int] = {}
    skipped = 0
    max_time = 0
    max_task = -1

    for lineno, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if not line:
            continue
        kind = line.split(":", 1)[0]
        if kind not in ("1", "2", "3"):
            skipped += 1
            continue
        try:
            fields = [int(f) for f in line.split(":")]
        except ValueError:
            raise TraceFormatError(f"prv line {lineno}: non-integer field in {line!r}")
        if kind == "1":
            if len(fields) != 8:
                raise TraceFormatError(f"prv line {lineno}: state record needs 8 fields")
            _check_thread(fields[4], lineno)
            max_time = max(max_time, fields[6])
            max_task = max(max_task, fields[3] - 1)
        elif kind == "2":
            if len(fields) < 8 or (len(fields) - 6) % 2:
                raise TraceFormatError(f"prv line {lineno}: malformed event record")
            _check_thread(fields[4], lineno)
            task, time = fields[3] - 1, fields[5]
            if time < last_time.get(task, time):
                raise TraceFormatError(
                    f"prv line {lineno}: time {time} goes backwards on rank {task}"
                )
            last_time[task] = time
            pairs = tuple(zip(fields[6::2], fields[7::2]))
            events[task].append(RawEvent(task, time, pairs, lineno))
            max_time = max(max_time, time)
            max_task = max(max_task, task)
        else:
            if len(fields) != 15:
                raise TraceFormatError(f"prv line {lineno}: communication record needs 15 fields")
            _check_thread(fields[4], lineno)
            _check_thread(fields[10], lineno)
            if fields[13] < 0:
                raise TraceFormatError(f"prv line {lineno}: negative message size")
            comms.append(
                CommRecord(
                    sender_task=fields[3] - 1,
                    receiver_task=fields[9] - 1,
                    send_time=fields[5],
                    recv_time=fields[11],
                    size=fields[13],
                    tag=fields[14],
                )
            )
            max_time = max(max_time, fields[5], fields[11])
            max_task = max(max_task, fields[3] - 1, fields[9] - 1)
    if skipped:
        logger.warning("skipped %d records of unsupported type", skipped)
    if total is None:
        total = max_time
    if n_ranks is None:
        n_ranks = max_task + 1
    return ParsedTrace(dict(events), comms, PrvHeader(header_line, total, n_ranks))


def _check_thread(thread: int, lineno: int) -> None:
    if thread != 1:
        raise HybridTraceError(f"prv line {lineno}: hybrid traces unsupported (thread {thread})")


def format_header(total_time: int, n_ranks: int, date: str = "01/01/70 at 00:00") -> str:
    tasks = ",".join("1:1" for _ in range(n_ranks))
    return f"#Paraver ({date}):{total_time}_ns:1({max(n_ranks, 1)}):1:{n_ranks}({tasks})"


def event_line(task: int, time: int, entries: Iterable[tuple[int, int]]) -> str:
    body = ":".join(f"{t}:{v}" for t, v in entries)
    return f"2:{task + 1}:1:{task + 1}:1:{time}:{body}"


def comm_line(rec: CommRecord) -> str:
    s, r = rec.sender_task + 1, rec.receiver_task + 1
    return (
        f"3:{s}:1:{s}:1:{rec.send_time}:{rec.send_time}:"
        f"{r}:1:{r}:1:{rec.recv_time}:{rec.recv_time}:{rec.size}:{rec.tag}"
    )


# ---------------------------------------------------------------- extraction


@dataclass(frozen=True)
class ExtractConfig:
    mpi_types: Sequence[int] = DEFAULT_MPI_TYPES
    collectives: Sequence[str] = DEFAULT_COLLECTIVES
    application_type: int = APPLICATION_TYPE
    derived: DerivedConfig = DerivedConfig()


@dataclass
class _Call:
    call: MpiCall
    entry: int
    exit: int | None = None


def _merge_same_time(events: Sequence[RawEvent]) -> list[RawEvent]:
    # Paraver treats records of one task at one timestamp as a single event.
    merged: list[RawEvent] = []
    for ev in events:
        if merged and merged[-1].time == ev.time:
            last = merged[-1]
            merged[-1] = RawEvent(last.task, last.time, last.entries + ev.entries, last.line)
        else:
            merged.append(ev)
    return merged


def _call_name(pcf: PcfDictionary, etype: int, value: int) -> str:
    return pcf.value_labels.get((etype, value)) or f"MPI_EVENT_{etype}_{value}"


def _resolve_partner(
    rank: int, call: _Call, comms_by_rank: Mapping[int, Sequence[tuple[int, int, int]]]
) -> tuple[int | None, int | None]:
    recs = comms_by_rank.get(rank, ())
    lo = bisect.bisect_left(recs, (call.entry, -1, -1))
    best = None
    for t, partner, size in recs[lo:]:
        if t > call.exit:
            break
        key = (t - call.entry, partner)
        if best is None or key < best[0]:
            best = (key, partner, size)
    if best is None:
        return None, None
    return best[1], best[2]


def _context(
    rank: int, call: _Call | None, comms_by_rank, classify: CallClassifier
) -> CommContext:
    if call is None:
        return CommContext(BOUNDARY)
    if call.call.cls != P2P:
        return CommContext(call.call)
    partner, size = _resolve_partner(rank, call, comms_by_rank)
    return CommContext(call.call, partner, size)


def _rank_bursts(
    rank: int,
    events: Sequence[RawEvent],
    trace_end: int,
    pcf: PcfDictionary,
    counter_types: Mapping[int, str],
    config: ExtractConfig,
    classify: CallClassifier,
) -> tuple[list[tuple[int, int, dict, _Call | None, _Call | None]], list[_Call]]:
    mpi_types = set(config.mpi_types)
    calls: list[_Call] = []
    bursts: list[tuple[int, int, dict, _Call | None, _Call | None]] = []
    current: _Call | None = None
    prev_call: _Call | None = None
    cur_start = 0
    rank_end = trace_end
    closed = False

    for ev in _merge_same_time(events):
        t = ev.time
        exits, entries, counters, app = [], [], {}, None
        for etype, value in ev.entries:
            if etype in mpi_types:
                (exits if value == 0 else entries).append((etype, value))
            elif etype in counter_types:
                counters[counter_types[etype]] = counters.get(counter_types[etype], 0) + value
            elif etype == config.application_type:
                app = value
        if app == 1 and current is None and not bursts:
            cur_start = t

        if current is None and entries and exits:
            # zero-duration call: enter, then leave
            ops = [(1, entries[0]), (0, exits[0])] + [(0, x) for x in exits[1:]]
            ops += [(1, x) for x in entries[1:]]
        else:
            ops = [(0, x) for x in exits] + [(1, x) for x in entries]

        for is_entry, (etype, value) in ops:
            if not is_entry:
                if current is None:
                    logger.warning(
                        "rank %d: MPI exit without entry at t=%d (line %d)", rank, t, ev.line
                    )
                    continue
                current.exit = t
                prev_call, current = current, None
                cur_start = t
                continue
            call = _Call(classify.call(_call_name(pcf, etype, value)), t)
            if current is not None:
                logger.warning("rank %d: nested MPI entry at t=%d (line %d)", rank, t, ev.line)
                current.exit = t
                prev_call, current = current, None
                cur_start = t
            if t > cur_start:
                bursts.append((cur_start, t, counters, prev_call, call))
            elif counters:
                logger.warning("rank %d: counters on zero-length gap at t=%d dropped", rank, t)
            counters = {}
            calls.append(call)
            current = call

        if app == 0:
            rank_end = t
            if current is not None:
                current.exit = t
                prev_call, current = current, None
            elif t > cur_start:
                bursts.append((cur_start, t, counters, prev_call, None))
            elif counters:
                logger.warning("rank %d: counters on zero-length trailing gap dropped", rank)
            closed = True
            break
        if counters and exits:
            # counters of the communication burst itself, not attributed
            logger.debug("rank %d: exit counters at t=%d kept as context only", rank, t)
        elif counters:
            logger.warning(
                "rank %d: counter event at t=%d outside any attribution point dropped (line %d)",
                rank, t, ev.line,
            )

    if current is not None:
        logger.warning("rank %d: %s never exits, truncated at %d", rank, current.call.name, rank_end)
        current.exit = rank_end
    elif not closed and rank_end > cur_start:
        bursts.append((cur_start, rank_end, {}, prev_call, None))
    return bursts, calls


def extract_bursts(
    trace: ParsedTrace,
    pcf: PcfDictionary,
    config: ExtractConfig | None = None,
    exec_id: str = "run1",
    counter_set: str = "",
) -> ExecutionDataset:
    """Turn a parsed trace into per-rank compute bursts.

    A compute burst runs from one MPI exit to the next MPI entry.  Counters
    on the MPI entry event that closes a burst belong to that burst.  An
    Application begin/end event (type 40000001) bounds a rank when present;
    otherwise the rank spans [0, trace end].
    """
    config = config or ExtractConfig()
    classify = CallClassifier(config.collectives)
    counter_types = pcf.counter_types()
    comms_by_rank: dict[int, list[tuple[int, int, int]]] = defaultdict(list)
    for c in trace.comms:
        comms_by_rank[c.sender_task].append((c.send_time, c.receiver_task, c.size))
        comms_by_rank[c.receiver_task].append((c.recv_time, c.sender_task, c.size))
    for recs in comms_by_rank.values():
        recs.sort()

    seen_counters: set[str] = set()
    ranks: dict[int, tuple[Burst, ...]] = {}
    n_ranks = max(trace.header.n_ranks, max(trace.events, default=-1) + 1)
    for rank in range(n_ranks):
        raw, _ = _rank_bursts(
            rank, trace.events.get(rank, ()), trace.header.total_time,
            pcf, counter_types, config, classify,
        )
        out = []
        for i, (begin, end, counters, before, after) in enumerate(raw):
            seen_counters.update(counters)
            out.append(
                Burst(
                    task_id=rank,
                    begin_time=begin,
                    end_time=end,
                    counters=counters,
                    before=_context(rank, before, comms_by_rank, classify),
                    after=_context(rank, after, comms_by_rank, classify),
                    seq_index=i,
                )
            )
        ranks[rank] = tuple(out)

    order = {lbl: t for t, lbl in counter_types.items()}
    names = sorted(seen_counters, key=lambda n: (order.get(n, 0), n))
    ds = ExecutionDataset(exec_id, counter_set, ranks, tuple(names))
    return compute_derived_features(ds, config.derived)


def counter_records(trace: ParsedTrace, pcf: PcfDictionary) -> dict[tuple[int, int], dict[str, int]]:
    """Counter values keyed by (rank, time), same-time records merged."""
    types = pcf.counter_types()
    out: dict[tuple[int, int], dict[str, int]] = {}
    for rank, events in trace.events.items():
        for ev in events:
            vals = {types[t]: v for t, v in ev.entries if t in types}
            if vals:
                out.setdefault((rank, ev.time), {}).update(vals)
    return out
