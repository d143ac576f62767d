"""Burst-table CSV: one row per compute burst, empty cell = absent value."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from collections.abc import Sequence

from .model import (
    DEFAULT_COLLECTIVES,
    Burst,
    CallClassifier,
    CommContext,
    ExecutionDataset,
)

SCHEMA = (
    "exec_id",
    "counter_set",
    "task_id",
    "seq_index",
    "begin_time_ns",
    "end_time_ns",
    "duration_ns",
    "rel_position",
    "ipc",
    "frequency",
    "concurrency",
    "mpi_call_before",
    "mpi_call_after",
    "partner_before",
    "partner_after",
    "size_before",
    "size_after",
    "region_id",
    "burst_id",
)


class BurstCsvError(ValueError):
    pass


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def burst_row(exec_id: str, counter_set: str, b: Burst) -> dict[str, str]:
    row = {
        "exec_id": exec_id,
        "counter_set": counter_set,
        "task_id": b.task_id,
        "seq_index": b.seq_index,
        "begin_time_ns": b.begin_time,
        "end_time_ns": b.end_time,
        "duration_ns": b.duration,
        "rel_position": b.rel_position,
        "ipc": b.ipc,
        "frequency": b.frequency,
        "concurrency": b.concurrency,
        "mpi_call_before": b.before.call.name,
        "mpi_call_after": b.after.call.name,
        "partner_before": b.before.partner,
        "partner_after": b.after.partner,
        "size_before": b.before.size,
        "size_after": b.after.size,
        "region_id": b.region_id,
        "burst_id": b.burst_id,
    }
    return {k: fmt(v) for k, v in row.items()}


def write_rows(columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([row.get(c, "") for c in columns])
    return buf.getvalue()


def write_burst_csv(dataset: ExecutionDataset) -> str:
    columns = list(SCHEMA) + list(dataset.counter_names)

    def rows():
        for b in dataset.bursts():
            row = burst_row(dataset.exec_id, dataset.counter_set_name, b)
            row.update({c: fmt(b.counters[c]) for c in dataset.counter_names if c in b.counters})
            yield row

    return write_rows(columns, rows())


def _opt(cell: str, kind):
    return None if cell == "" else kind(cell)


def read_burst_csv(text: str, collectives: Sequence[str] = DEFAULT_COLLECTIVES) -> ExecutionDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise BurstCsvError("burst CSV is empty (header row required)")
    missing = [c for c in SCHEMA if c not in header]
    if missing:
        raise BurstCsvError(f"burst CSV missing mandatory column {missing[0]!r}")
    idx = {c: i for i, c in enumerate(header)}
    counter_names = tuple(header[len(SCHEMA):]) if tuple(header[: len(SCHEMA)]) == SCHEMA else tuple(
        c for c in header if c not in SCHEMA
    )
    classify = CallClassifier(collectives)

    exec_id = counter_set = None
    ranks: dict[int, list[Burst]] = defaultdict(list)
    seen = set()
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        get = lambda c: row[idx[c]]  # noqa: E731
        try:
            task, seq = int(get("task_id")), int(get("seq_index"))
            if (task, seq) in seen:
                raise BurstCsvError(f"line {lineno}: duplicate (task_id, seq_index) = ({task}, {seq})")
            seen.add((task, seq))
            if exec_id is None:
                exec_id, counter_set = get("exec_id"), get("counter_set")
            elif get("exec_id") != exec_id:
                raise BurstCsvError(f"line {lineno}: mixed exec_id values in one file")
            counters = {c: int(row[idx[c]]) for c in counter_names if row[idx[c]] != ""}
            b = Burst(
                task_id=task,
                begin_time=int(get("begin_time_ns")),
                end_time=int(get("end_time_ns")),
                counters=counters,
                before=CommContext(
                    classify.call(get("mpi_call_before")),
                    _opt(get("partner_before"), int),
                    _opt(get("size_before"), int),
                ),
                after=CommContext(
                    classify.call(get("mpi_call_after")),
                    _opt(get("partner_after"), int),
                    _opt(get("size_after"), int),
                ),
                seq_index=seq,
                rel_position=_opt(get("rel_position"), float),
                ipc=_opt(get("ipc"), float),
                frequency=_opt(get("frequency"), float),
                concurrency=_opt(get("concurrency"), float),
                region_id=_opt(get("region_id"), int),
                burst_id=_opt(get("burst_id"), str),
            )
        except (ValueError, IndexError) as exc:
            if isinstance(exc, BurstCsvError):
                raise
            raise BurstCsvError(f"line {lineno}: {exc}") from exc
        if b.duration != int(get("duration_ns")):
            raise BurstCsvError(f"line {lineno}: duration_ns disagrees with begin/end times")
        ranks[task].append(b)

    for bursts in ranks.values():
        bursts.sort(key=lambda b: (b.begin_time, b.seq_index))
    return ExecutionDataset(
        exec_id or "",
        counter_set or "",
        {r: tuple(ranks[r]) for r in sorted(ranks)},
        counter_names,
    )
