"""Pseudo-executions with known burst correspondences.

One logical execution is sampled per rank; every observed execution is a
copy of it restricted to one counter set, with multiplicative counter
noise and optional structural perturbations.  The ground truth is kept as
a match set.
"""

from __future__ import annotations

import bisect
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matchset import TRUTH, MatchGroup, MatchSet
from .model import (
    COLLECTIVE,
    P2P,
    Burst,
    CallClassifier,
    CommContext,
    ExecutionDataset,
    compute_derived_features,
)
from .paraver import (
    APPLICATION_TYPE,
    MPI_CATALOG,
    PAPI_CODES,
    CommRecord,
    comm_line,
    event_line,
    format_header,
    mpi_pcf,
    papi_type,
)

PRESETS: dict[str, tuple[str, ...]] = {
    "INS_MIX": (
        "PAPI_TOT_INS", "PAPI_TOT_CYC", "PAPI_LD_INS", "PAPI_SR_INS",
        "PAPI_BR_INS", "PAPI_L3_TCM", "PAPI_L1_DCM", "PAPI_L2_DCM",
    ),
    "OPS_SET": (
        "PAPI_TOT_INS", "PAPI_VEC_INS", "PAPI_FP_INS", "PAPI_FP_OPS",
        "PAPI_DP_OPS", "PAPI_SP_OPS", "PAPI_VEC_SP", "PAPI_VEC_DP",
    ),
    "OPS_CYC": ("PAPI_TOT_INS", "PAPI_TOT_CYC", "PAPI_VEC_DP", "PAPI_VEC_SP", "PAPI_DP_OPS"),
}

# events per nanosecond of compute
DEFAULT_RATES = {
    "PAPI_TOT_CYC": 2.0,
    "PAPI_TOT_INS": 3.0,
    "PAPI_LD_INS": 0.9,
    "PAPI_SR_INS": 0.4,
    "PAPI_BR_INS": 0.3,
    "PAPI_VEC_INS": 0.5,
    "PAPI_FP_INS": 0.6,
    "PAPI_L1_DCM": 0.05,
    "PAPI_L2_DCM": 0.01,
    "PAPI_L3_TCM": 0.002,
    "PAPI_FP_OPS": 1.2,
    "PAPI_DP_OPS": 1.0,
    "PAPI_SP_OPS": 0.2,
    "PAPI_VEC_SP": 0.1,
    "PAPI_VEC_DP": 0.4,
}

CACHE_COUNTERS = frozenset({"PAPI_L1_DCM", "PAPI_L2_DCM", "PAPI_L3_TCM"})
INSTRUCTION_COUNTERS = frozenset(
    {"PAPI_TOT_INS", "PAPI_LD_INS", "PAPI_SR_INS", "PAPI_BR_INS", "PAPI_VEC_INS", "PAPI_FP_INS"}
)


def default_noise(counter: str) -> float:
    """Run-to-run spread: cache misses vary most, flop counts not at all."""
    if counter in CACHE_COUNTERS:
        return 0.05
    if counter == "PAPI_TOT_CYC":
        return 0.02
    if counter in INSTRUCTION_COUNTERS:
        return 0.01
    return 0.0


DEFAULT_TEMPLATES: tuple[tuple[str, ...], ...] = (
    ("MPI_Irecv", "MPI_Isend", "MPI_Waitall", "MPI_Allreduce"),
    ("MPI_Bcast",),
    ("MPI_Isend", "MPI_Irecv", "MPI_Wait", "MPI_Wait", "MPI_Barrier"),
)

ASYNC_CALLS = frozenset({"MPI_Irecv", "MPI_Isend", "MPI_Wait", "MPI_Waitall"})
POLL_CALL = "MPI_Test"
EXTRA_CALL = "MPI_Comm_rank"
TINY_FRACTION = 0.02


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CounterModel:
    rate: float
    noise: float


@dataclass(frozen=True)
class Perturbations:
    time_jitter: float = 0.0
    extra_burst_rate: float = 0.0
    drop_burst_rate: float = 0.0
    pattern_drift: float = 0.0
    # leading fraction of the run in which extra bursts may appear
    extra_burst_window: float = 1.0


def _default_models() -> dict[str, CounterModel]:
    return {c: CounterModel(r, default_noise(c)) for c, r in DEFAULT_RATES.items()}


@dataclass(frozen=True)
class SynthConfig:
    ranks: int = 4
    iterations: int = 50
    templates: tuple[tuple[str, ...], ...] = DEFAULT_TEMPLATES
    counter_models: Mapping[str, CounterModel] = field(default_factory=_default_models)
    perturbations: Perturbations = Perturbations()
    seed: int = 0
    executions: tuple[str, ...] = ("INS_MIX", "OPS_SET", "OPS_CYC")
    counter_sets: Mapping[str, tuple[str, ...]] = field(default_factory=lambda: dict(PRESETS))
    mean_burst_ns: int = 10000
    call_ns: int = 1000

    def __post_init__(self):
        for name in ("ranks", "iterations", "seed", "mean_burst_ns", "call_ns"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise SynthConfigError(f"{name} must be an integer, got {type(v).__name__}")
        if self.ranks < 1 or self.iterations < 0 or self.seed < 0:
            raise SynthConfigError("ranks must be >= 1, iterations and seed >= 0")
        if self.mean_burst_ns < 100 or self.call_ns < 1:
            raise SynthConfigError("mean_burst_ns must be >= 100 and call_ns >= 1")
        for k, v in vars(self.perturbations).items():
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0.0 <= v <= 1.0:
                raise SynthConfigError(f"perturbation {k} must be a number in [0, 1], got {v!r}")
        if self.perturbations.extra_burst_window <= 0.0:
            raise SynthConfigError("extra_burst_window must be positive")
        if not self.templates or any(not t for t in self.templates):
            raise SynthConfigError("templates must be non-empty call lists")
        for t in self.templates:
            for call in t:
                if call not in MPI_CATALOG:
                    raise SynthConfigError(f"unknown MPI call {call!r} in template")
        if len(self.executions) < 1:
            raise SynthConfigError("at least one execution is needed")
        for name in self.executions:
            if name not in self.counter_sets:
                raise SynthConfigError(f"unknown counter set {name!r}")
            for c in self.counter_sets[name]:
                if c not in self.counter_models:
                    raise SynthConfigError(f"counter {c} of set {name} has no model")
        for c, m in self.counter_models.items():
            if c not in PAPI_CODES:
                raise SynthConfigError(f"counter {c!r} has no known PAPI event id")
            if m.rate < 0 or m.noise < 0:
                raise SynthConfigError(f"counter {c}: rate and noise must be non-negative")

    @property
    def exec_ids(self) -> list[str]:
        return [f"run{i + 1}" for i in range(len(self.executions))]

    @classmethod
    def from_dict(cls, doc: Mapping) -> SynthConfig:
        known = {
            "ranks", "iterations", "templates", "counter_models", "perturbations", "seed",
            "executions", "counter_sets", "mean_burst_ns", "call_ns",
        }
        unknown = set(doc) - known
        if unknown:
            raise SynthConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: doc[k] for k in ("ranks", "iterations", "seed", "mean_burst_ns", "call_ns") if k in doc}
        try:
            if "templates" in doc:
                kw["templates"] = tuple(tuple(t) for t in doc["templates"])
            if "executions" in doc:
                if isinstance(doc["executions"], str):
                    raise TypeError("executions must be a list")
                kw["executions"] = tuple(doc["executions"])
            if "counter_sets" in doc:
                kw["counter_sets"] = {**PRESETS, **{k: tuple(v) for k, v in doc["counter_sets"].items()}}
            if "counter_models" in doc:
                models = _default_models()
                for c, m in doc["counter_models"].items():
                    base = models.get(c, CounterModel(1.0, default_noise(c)))
                    models[c] = CounterModel(
                        float(m.get("rate", base.rate)), float(m.get("noise", base.noise))
                    )
                kw["counter_models"] = models
            if "perturbations" in doc:
                kw["perturbations"] = Perturbations(**doc["perturbations"])
        except (TypeError, AttributeError, ValueError) as exc:
            raise SynthConfigError(f"malformed config: {exc}") from None
        return cls(**kw)

    @classmethod
    def from_json(cls, text: str) -> SynthConfig:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SynthConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise SynthConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "ranks": self.ranks,
            "iterations": self.iterations,
            "templates": [list(t) for t in self.templates],
            "counter_models": {
                c: {"rate": m.rate, "noise": m.noise} for c, m in sorted(self.counter_models.items())
            },
            "perturbations": vars(self.perturbations).copy(),
            "seed": self.seed,
            "executions": list(self.executions),
            "counter_sets": {k: list(v) for k, v in self.counter_sets.items()},
            "mean_burst_ns": self.mean_burst_ns,
            "call_ns": self.call_ns,
        }


# ----------------------------------------------------------------- sampling


@dataclass(frozen=True)
class _Call:
    name: str
    partner: int | None = None
    size: int | None = None


@dataclass
class _Item:
    duration: int
    counters: dict[str, float]
    logical: int | None  # index of the logical burst, None for extras
    exact: bool = False  # counters already observed (no further noise)


def _logical_rank(rank: int, config: SynthConfig, rng: np.random.Generator, slots):
    """Calls and compute bursts of one rank; bursts[k] precedes calls[k]."""
    calls: list[_Call] = []
    slot_of: list[tuple[int, int]] = [(-1, 0)]
    for it in range(config.iterations):
        ti = it % len(config.templates)
        for pos, name in enumerate(config.templates[ti]):
            partner = size = None
            if name in ("MPI_Isend", "MPI_Irecv") and config.ranks > 1:
                step = 1 if name == "MPI_Isend" else -1
                partner = (rank + step) % config.ranks
                size = 1024 * (pos + 1) * (ti + 1)
            calls.append(_Call(name, partner, size))
            slot_of.append((ti, pos))
    n = len(calls) + 1
    scale = np.exp(rng.normal(0.0, 0.2, size=n))
    durations = []
    counters = []
    for k in range(n):
        s = slots[slot_of[k]]
        d = max(2, int(round(config.mean_burst_ns * s["duration"] * scale[k])))
        durations.append(d)
        counters.append({c: m.rate * d * s[c] for c, m in config.counter_models.items()})
    return calls, durations, counters


def _slot_factors(config: SynthConfig, rng: np.random.Generator) -> dict:
    slots = {}
    keys = [(-1, 0)] + [(ti, pos) for ti, t in enumerate(config.templates) for pos in range(len(t))]
    for key in keys:
        f = {"duration": float(np.exp(rng.normal(0.0, 0.5)))}
        for c in sorted(config.counter_models):
            f[c] = float(np.exp(rng.normal(0.0, 0.3)))
        slots[key] = f
    return slots


def _tiny(config: SynthConfig, rng: np.random.Generator) -> _Item:
    d = max(2, int(round(config.mean_burst_ns * TINY_FRACTION * math.exp(rng.normal(0.0, 0.2)))))
    return _Item(d, {c: m.rate * d for c, m in config.counter_models.items()}, None)


def _observe_rank(
    calls: Sequence[_Call],
    durations: Sequence[int],
    counters: Sequence[dict[str, float]],
    config: SynthConfig,
    rng: np.random.Generator,
) -> tuple[list[_Item], list[_Call]]:
    p = config.perturbations
    classify = CallClassifier()

    items = [_Item(durations[0], dict(counters[0]), 0)]
    out_calls: list[_Call] = []
    for k, call in enumerate(calls, 1):
        nxt = _Item(durations[k], dict(counters[k]), k)
        if p.drop_burst_rate and classify(call.name) != COLLECTIVE and rng.random() < p.drop_burst_rate:
            # the call vanishes: its two neighbouring bursts fuse into one
            prev = items[-1]
            prev.duration += nxt.duration
            for c in prev.counters:
                prev.counters[c] += nxt.counters[c]
            prev.logical = None
            continue
        out_calls.append(call)
        items.append(nxt)

    before = [None] + out_calls
    after = out_calls + [None]
    window = p.extra_burst_window * len(items)
    seq_items: list[_Item] = []
    seq_calls: list[_Call] = []
    for i, item in enumerate(items):
        b, a = before[i], after[i]
        extra = p.extra_burst_rate if i < window else 0.0
        if extra and b is not None and classify(b.name) == COLLECTIVE:
            if rng.random() < extra:
                seq_items.append(_tiny(config, rng))
                seq_calls.append(_Call(EXTRA_CALL))
        seq_items.append(item)
        if a is None:
            break
        if extra and classify(a.name) == COLLECTIVE and rng.random() < extra:
            seq_calls.append(_Call(EXTRA_CALL))
            seq_items.append(_tiny(config, rng))
        if p.pattern_drift and a.name in ASYNC_CALLS and rng.random() < p.pattern_drift:
            for _ in range(int(rng.integers(1, 4))):
                seq_calls.append(_Call(POLL_CALL))
                seq_items.append(_tiny(config, rng))
        seq_calls.append(a)
    return seq_items, seq_calls


def _observed_counters(item: _Item, names: Sequence[str], config: SynthConfig, rng) -> dict[str, int]:
    out = {}
    for c in names:
        sigma = config.counter_models[c].noise
        noise = math.exp(rng.normal(0.0, sigma)) if sigma > 0 else 1.0
        out[c] = int(round(item.counters[c] * noise))
    return out


def _counter_order(names: Sequence[str]) -> tuple[str, ...]:
    return tuple(sorted(set(names), key=lambda n: (papi_type(n), n)))


def generate_suite(config: SynthConfig) -> tuple[list[ExecutionDataset], MatchSet]:
    """Sample one logical run and derive the observed executions.

    Randomness comes only from ``config.seed``: one seed stream per rank,
    split into the logical stream and one stream per execution.
    """
    root = np.random.SeedSequence(config.seed)
    slot_seq, *rank_seqs = root.spawn(1 + config.ranks)
    slots = _slot_factors(config, np.random.default_rng(slot_seq))
    exec_ids = config.exec_ids
    classify = CallClassifier()

    per_exec: dict[str, dict[int, tuple[Burst, ...]]] = {e: {} for e in exec_ids}
    truth_pos: dict[int, dict[int, dict[str, int]]] = {}
    for rank, rseq in enumerate(rank_seqs):
        logical_seq, *exec_seqs = rseq.spawn(1 + len(exec_ids))
        calls, durations, counters = _logical_rank(rank, config, np.random.default_rng(logical_seq), slots)
        truth_pos[rank] = {}
        for e, eseq, set_name in zip(exec_ids, exec_seqs, config.executions):
            rng = np.random.default_rng(eseq)
            items, seq_calls = _observe_rank(calls, durations, counters, config, rng)
            names = config.counter_sets[set_name]
            jitter = config.perturbations.time_jitter
            t = 0
            bursts = []
            for i, item in enumerate(items):
                d = item.duration
                if jitter:
                    d = max(2, int(round(d * math.exp(rng.normal(0.0, jitter)))))
                before = _context(seq_calls[i - 1] if i > 0 else None, classify)
                after = _context(seq_calls[i] if i < len(seq_calls) else None, classify)
                bursts.append(
                    Burst(
                        task_id=rank,
                        begin_time=t,
                        end_time=t + d,
                        counters=_observed_counters(item, names, config, rng),
                        before=before,
                        after=after,
                        seq_index=i,
                    )
                )
                if item.logical is not None:
                    truth_pos[rank].setdefault(item.logical, {})[e] = i
                t += d
                if i < len(seq_calls):
                    c = config.call_ns
                    if jitter:
                        c = max(1, int(round(c * math.exp(rng.normal(0.0, jitter)))))
                    t += c
            per_exec[e][rank] = tuple(bursts)

    datasets = [
        compute_derived_features(
            ExecutionDataset(e, set_name, per_exec[e], _counter_order(config.counter_sets[set_name]))
        )
        for e, set_name in zip(exec_ids, config.executions)
    ]
    return datasets, _truth(datasets, truth_pos)


def _context(call: _Call | None, classify: CallClassifier) -> CommContext:
    if call is None:
        return CommContext()
    mc = classify.call(call.name)
    if mc.cls == P2P:
        return CommContext(mc, call.partner, call.size)
    return CommContext(mc)


def _truth(datasets: Sequence[ExecutionDataset], truth_pos) -> MatchSet:
    exec_ids = [d.exec_id for d in datasets]
    groups = []
    used: dict[str, set] = {e: set() for e in exec_ids}
    for rank in sorted(truth_pos):
        for logical in sorted(truth_pos[rank]):
            members = truth_pos[rank][logical]
            if len(members) < 2:
                continue
            groups.append(
                MatchGroup(f"r{rank}_t_{logical}", {e: (rank, members[e]) for e in exec_ids if e in members}, TRUTH)
            )
            for e, i in members.items():
                used[e].add((rank, i))
    unmatched = {d.exec_id: [b.ref for b in d.bursts() if b.ref not in used[d.exec_id]] for d in datasets}
    return MatchSet(exec_ids, groups, unmatched)


# -------------------------------------------------------------- expectation


def expected_rel_diff(sigma: float) -> float:
    """E|b - m| / b for two runs with independent lognormal noise of spread sigma.

    With b = T e^{sigma Z1} and m = T e^{sigma Z2}, the ratio m/b is
    e^{s Z} with s = sigma sqrt(2), and E|1 - e^{sZ}| = e^{s^2/2} (2 Phi(s) - 1).
    """
    s = sigma * math.sqrt(2.0)
    phi = 0.5 * (1.0 + math.erf(s / math.sqrt(2.0)))
    return math.exp(s * s / 2.0) * (2.0 * phi - 1.0)


# ----------------------------------------------------------------- emission


def _nearest_interior(bursts: Sequence[Burst], t: int) -> int | None:
    """A time strictly inside the compute burst of ``bursts`` nearest to ``t``."""
    if not bursts:
        return None
    begins = [b.begin_time for b in bursts]
    i = bisect.bisect_right(begins, t)
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(bursts) and bursts[j].duration >= 2:
            mid = bursts[j].begin_time + bursts[j].duration // 2
            key = (abs(mid - t), mid)
            if best is None or key < best[0]:
                best = (key, mid)
    if best is None:
        cands = [b for b in bursts if b.duration >= 2]
        if not cands:
            return None
        b = min(cands, key=lambda b: abs(b.begin_time - t))
        return b.begin_time + b.duration // 2
    return best[1]


def emit_as_prv(dataset: ExecutionDataset, call_ns: int | None = None) -> tuple[str, str]:
    """Render a synthetic execution as .prv and .pcf text.

    Calls occupy the gaps between consecutive bursts.  Every point-to-point
    call with a partner gets one communication record whose local endpoint
    sits at the call entry; the remote endpoint is placed inside the
    partner's nearest compute burst so it cannot disturb the partner's own
    calls.
    """
    pcf = mpi_pcf()
    for c in dataset.counter_names:
        pcf.event_labels[papi_type(c)] = c
    for name, (t, v) in MPI_CATALOG.items():
        pcf.value_labels[(t, v)] = name

    records: list[tuple[int, int, int, str]] = []
    end_time = 0
    for rank in dataset.rank_ids:
        bursts = dataset.ranks[rank]
        if not bursts:
            continue
        t0 = bursts[0].begin_time
        records.append((t0, rank, 0, event_line(rank, t0, [(APPLICATION_TYPE, 1)])))
        for i, b in enumerate(bursts):
            ctrs = [(papi_type(c), b.counters[c]) for c in dataset.counter_names if c in b.counters]
            if i + 1 < len(bursts):
                name = b.after.call.name
                etype, value = MPI_CATALOG[name]
                records.append((b.end_time, rank, 1, event_line(rank, b.end_time, [(etype, value), *ctrs])))
                nxt = bursts[i + 1].begin_time
                records.append((nxt, rank, 0, event_line(rank, nxt, [(etype, 0)])))
                if b.after.partner is not None:
                    peer_t = _nearest_interior(dataset.ranks.get(b.after.partner, ()), b.end_time)
                    if peer_t is not None:
                        if b.after.call.label == "MPI_IRECV" or b.after.call.label == "MPI_RECV":
                            rec = CommRecord(b.after.partner, rank, peer_t, b.end_time, b.after.size or 0, 1)
                        else:
                            rec = CommRecord(rank, b.after.partner, b.end_time, peer_t, b.after.size or 0, 1)
                        records.append((min(rec.send_time, rec.recv_time), rank, 3, comm_line(rec)))
            else:
                line = event_line(rank, b.end_time, [(APPLICATION_TYPE, 0), *ctrs])
                records.append((b.end_time, rank, 2, line))
            end_time = max(end_time, b.end_time)
    records.sort(key=lambda r: (r[0], r[1], r[2]))
    header = format_header(end_time, len(dataset.ranks))
    return header + "\n" + "".join(r[3] + "\n" for r in records), pcf.to_text()


def write_suite(
    datasets: Sequence[ExecutionDataset], truth: MatchSet, outdir: Path, config: SynthConfig | None = None
) -> list[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for ds in datasets:
        prv, pcf = emit_as_prv(ds)
        for suffix, text in ((".prv", prv), (".pcf", pcf)):
            p = outdir / f"{ds.exec_id}{suffix}"
            p.write_text(text)
            written.append(p)
    p = outdir / "truth.json"
    p.write_text(truth.to_json())
    written.append(p)
    if config is not None:
        p = outdir / "config.json"
        p.write_text(json.dumps(config.to_dict(), indent=1) + "\n")
        written.append(p)
    return written
