"""Merge matched bursts of N executions into one enriched table and trace."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from .burstcsv import SCHEMA, burst_row, fmt, write_rows
from .matchset import MatchGroup, MatchSet
from .model import Burst, ExecutionDataset
from .paraver import (
    APPLICATION_TYPE,
    MPI_CATALOG,
    MPI_OTHER_TYPE,
    PcfDictionary,
    event_line,
    format_header,
    mpi_pcf,
    papi_type,
)

logger = logging.getLogger(__name__)

DERIVED = ("rel_position", "ipc", "frequency", "concurrency")
NEW_TYPE_BASE = 49000000
DEFAULT_PREFIX = "{exec_id}_"

# merge rules recorded in the column manifest
TEMPORAL = "base-temporal"
MATCH = "match-set"
IDENTICAL = "identical"
BASE = "divergent-base"
DIVERGENT = "divergent"
UNIQUE = "unique"


class FusionIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSource:
    exec_id: str | None
    column: str
    rule: str


@dataclass
class FusedDataset:
    base_exec: str
    columns: list[str]
    rows: list[dict]
    column_manifest: dict[str, ColumnSource]
    counter_columns: list[str] = field(default_factory=list)
    partial_groups: list[MatchGroup] = field(default_factory=list)

    def to_csv(self) -> str:
        return write_rows(self.columns, ({c: fmt(v) for c, v in r.items()} for r in self.rows))

    def manifest_json(self) -> str:
        doc = {
            "base_exec": self.base_exec,
            "columns": {
                c: {"exec_id": s.exec_id, "column": s.column, "rule": s.rule}
                for c, s in self.column_manifest.items()
            },
        }
        return json.dumps(doc, indent=1) + "\n"

    def partial_report_json(self) -> str:
        doc = [
            {"burst_id": g.burst_id, "stage": g.stage, "members": sorted(g.members)}
            for g in self.partial_groups
        ]
        return json.dumps(doc, indent=1) + "\n"


def unmatched_rates(executions: Sequence[ExecutionDataset], match_set: MatchSet) -> dict[str, float]:
    rates = {}
    for ds in executions:
        total = ds.n_bursts
        missing = total - len(match_set.matched_refs(ds.exec_id) & {b.ref for b in ds.bursts()})
        rates[ds.exec_id] = missing / total if total else 0.0
    return rates


def select_base(executions: Sequence[ExecutionDataset], match_set: MatchSet) -> str:
    """Execution with the lowest unmatched-burst rate; ties go to the smallest exec_id."""
    rates = unmatched_rates(executions, match_set)
    return min(rates, key=lambda e: (rates[e], e))


def _equivalent(a: Sequence, b: Sequence) -> bool:
    for x, y in zip(a, b):
        if x is None or y is None:
            if x is not y:
                return False
        elif isinstance(x, float) or isinstance(y, float):
            if not math.isclose(x, y, rel_tol=1e-9, abs_tol=0.0):
                return False
        elif x != y:
            return False
    return True


def _feature_values(bursts: Sequence[Burst], name: str) -> list:
    if name in DERIVED:
        return [getattr(b, name) for b in bursts]
    return [b.counters.get(name) for b in bursts]


def fuse(
    executions: Sequence[ExecutionDataset],
    match_set: MatchSet,
    base: str | None = None,
    prefix: str = DEFAULT_PREFIX,
) -> FusedDataset:
    """Build the fused table from groups that span every execution.

    Feature columns shared by several executions collapse to one column
    when equivalent on every row; otherwise the base copy stays unprefixed
    and each diverging execution adds a copy named by ``prefix`` (default
    ``{exec_id}_``).  Columns of a single non-base execution are always
    prefixed.
    """
    if "{exec_id}" not in prefix:
        raise ValueError(f"prefix {prefix!r} must contain '{{exec_id}}'")

    def named(e: str, f: str) -> str:
        return prefix.format(exec_id=e) + f

    by_id = {ds.exec_id: ds for ds in executions}
    base = base or select_base(executions, match_set)
    order = [base] + sorted(e for e in by_id if e != base)

    groups = []
    partial = []
    for g in match_set.groups:
        if set(g.members) == set(by_id):
            groups.append(g)
        else:
            partial.append(g)
    if partial:
        logger.info("%d partial groups left out of the fused table", len(partial))

    members: dict[str, list[Burst]] = {e: [] for e in order}
    for g in groups:
        for e in order:
            try:
                members[e].append(by_id[e].burst(*g.members[e]))
            except (KeyError, IndexError):
                raise FusionIntegrityError(
                    f"group {g.burst_id} references missing burst {g.members[e]} in {e}"
                ) from None
    perm = sorted(range(len(groups)), key=lambda i: (members[base][i].task_id, members[base][i].begin_time))
    groups = [groups[i] for i in perm]
    members = {e: [bs[i] for i in perm] for e, bs in members.items()}

    manifest: dict[str, ColumnSource] = {c: ColumnSource(base, c, TEMPORAL) for c in SCHEMA}
    manifest["exec_id"] = ColumnSource(base, "exec_id", TEMPORAL)
    manifest["counter_set"] = ColumnSource(None, "counter_set", MATCH)
    manifest["burst_id"] = ColumnSource(None, "burst_id", MATCH)

    counter_set = "+".join(by_id[e].counter_set_name for e in order)
    rows = []
    for i, g in enumerate(groups):
        row: dict = burst_row(base, counter_set, members[base][i])
        row = {c: _typed(c, row[c]) for c in SCHEMA}
        row["burst_id"] = g.burst_id
        row["counter_set"] = counter_set
        for d in DERIVED:
            row[d] = None
        rows.append(row)

    features: list[str] = list(DERIVED)
    for e in order:
        features += [c for c in by_id[e].counter_names if c not in features]

    extra: list[str] = []
    counter_columns: list[str] = []

    def put(col: str, src: str, feature: str, rule: str):
        values = _feature_values(members[src], feature)
        for row, v in zip(rows, values):
            row[col] = v
        manifest[col] = ColumnSource(src, feature, rule)
        if feature not in DERIVED:
            counter_columns.append(col)
            if col not in SCHEMA:
                extra.append(col)
        elif col not in SCHEMA:
            extra.append(col)

    for f in features:
        if f in DERIVED:
            holders = [e for e in order if any(v is not None for v in _feature_values(members[e], f))]
        else:
            holders = [e for e in order if f in by_id[e].counter_names]
        if not holders:
            continue
        if len(holders) == 1:
            h = holders[0]
            put(f if h == base else named(h, f), h, f, UNIQUE)
            continue
        values = {e: _feature_values(members[e], f) for e in holders}
        first = values[holders[0]]
        if all(_equivalent(first, values[e]) for e in holders[1:]):
            put(f, holders[0], f, IDENTICAL)
        elif base in holders:
            put(f, base, f, BASE)
            for e in holders[1:]:
                if not _equivalent(values[base], values[e]):
                    put(named(e, f), e, f, DIVERGENT)
        else:
            for e in holders:
                put(named(e, f), e, f, DIVERGENT)

    columns = list(SCHEMA) + extra
    for row in rows:
        for c in columns:
            row.setdefault(c, None)
    return FusedDataset(
        base_exec=base,
        columns=columns,
        rows=rows,
        column_manifest={c: manifest[c] for c in columns},
        counter_columns=counter_columns,
        partial_groups=partial,
    )


_INT_COLUMNS = {
    "task_id", "seq_index", "begin_time_ns", "end_time_ns", "duration_ns",
    "partner_before", "partner_after", "size_before", "size_after", "region_id",
}


def _typed(column: str, text: str):
    if text == "":
        return None
    if column in _INT_COLUMNS:
        return int(text)
    return text


# ------------------------------------------------------------------ emission


class EventTypeCollision(ValueError):
    pass


def allocate_event_types(
    fused: FusedDataset,
    pcf_base: PcfDictionary | None,
    base_counter_names: Sequence[str] = (),
    new_type_base: int = NEW_TYPE_BASE,
) -> dict[str, int]:
    known: dict[str, int] = {}
    if pcf_base is not None:
        known = {lbl: t for t, lbl in pcf_base.counter_types().items()}
    else:
        for name in base_counter_names:
            t = papi_type(name)
            if t is not None:
                known[name] = t
    ids = {}
    fresh = []
    next_id = new_type_base
    for col in fused.counter_columns:
        if col in known:
            ids[col] = known[col]
        else:
            ids[col] = next_id
            fresh.append(next_id)
            next_id += 1
    taken = set(pcf_base.event_labels) if pcf_base is not None else set(known.values())
    collisions = sorted(set(fresh) & taken)
    if collisions:
        raise EventTypeCollision(f"new event types collide with the base trace: {collisions}")
    return ids


def emit_prv(
    fused: FusedDataset,
    base_header: str | None = None,
    pcf_base: PcfDictionary | None = None,
    base_counter_names: Sequence[str] = (),
    new_type_base: int = NEW_TYPE_BASE,
    mpi_events: bool = False,
) -> tuple[str, str]:
    """Write the fused table as a .prv trace plus its extended .pcf.

    Each row becomes one event record at the base burst's end time
    carrying every merged counter.  With ``mpi_events`` the MPI entry/exit
    records around each burst are written too, so the trace re-extracts
    into the same bursts.
    """
    ids = allocate_event_types(fused, pcf_base, base_counter_names, new_type_base)
    pcf = PcfDictionary(dict(pcf_base.event_labels), dict(pcf_base.value_labels)) if pcf_base else mpi_pcf()
    for col, t in ids.items():
        pcf.event_labels.setdefault(t, col)

    records: list[tuple[int, int, int, str]] = []
    by_rank: dict[int, list[dict]] = {}
    for row in fused.rows:
        by_rank.setdefault(row["task_id"], []).append(row)
        entries = [(ids[c], row[c]) for c in fused.counter_columns if row.get(c) is not None]
        if entries:
            records.append((row["end_time_ns"], row["task_id"], 1, event_line(row["task_id"], row["end_time_ns"], entries)))
    if mpi_events:
        for rank, rows in by_rank.items():
            records += _mpi_records(rank, rows, pcf)

    n_ranks = max(by_rank, default=-1) + 1
    if base_header is None:
        total = max((r["end_time_ns"] for r in fused.rows), default=0)
        base_header = format_header(total, n_ranks)
    records.sort(key=lambda r: (r[0], r[1], r[2]))
    text = base_header + "\n" + "".join(r[3] + "\n" for r in records)
    return text, pcf.to_text()


def _mpi_type_value(name: str, pcf: PcfDictionary) -> tuple[int, int]:
    for (t, v), lbl in pcf.value_labels.items():
        if lbl == name and v != 0 and t != APPLICATION_TYPE:
            return t, v
    if name in MPI_CATALOG:
        t, v = MPI_CATALOG[name]
    else:
        t = MPI_OTHER_TYPE
        v = max((v for (tt, v) in pcf.value_labels if tt == t), default=0) + 1
    pcf.event_labels.setdefault(t, "MPI Other")
    pcf.value_labels.setdefault((t, 0), "End")
    pcf.value_labels[(t, v)] = name
    return t, v


def _mpi_records(rank: int, rows: Sequence[Mapping], pcf: PcfDictionary) -> list[tuple[int, int, int, str]]:
    pcf.event_labels.setdefault(APPLICATION_TYPE, "Application")
    pcf.value_labels.setdefault((APPLICATION_TYPE, 0), "End")
    pcf.value_labels.setdefault((APPLICATION_TYPE, 1), "Begin")
    first, last = rows[0], rows[-1]
    t0 = first["begin_time_ns"]
    out = [(t0, rank, 0, event_line(rank, t0, [(APPLICATION_TYPE, 1)]))]
    prev = None
    if first["mpi_call_before"] not in (None, "NONE"):
        prev = _mpi_type_value(first["mpi_call_before"], pcf)
        out.append((t0, rank, 0, event_line(rank, t0, [prev])))
    for row in rows:
        if prev is not None:
            out.append((row["begin_time_ns"], rank, 2, event_line(rank, row["begin_time_ns"], [(prev[0], 0)])))
            prev = None
        name = row["mpi_call_after"]
        if name in (None, "NONE"):
            continue
        prev = _mpi_type_value(name, pcf)
        out.append((row["end_time_ns"], rank, 0, event_line(rank, row["end_time_ns"], [prev])))
    out.append((last["end_time_ns"], rank, 3, event_line(rank, last["end_time_ns"], [(APPLICATION_TYPE, 0)])))
    return out
