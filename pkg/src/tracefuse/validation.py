"""Matching-quality metrics for executions recorded with the same counters.

Quantiles use linear interpolation between order statistics (numpy's
default, a.k.a. type 7).  Undefined results are ``None`` in Python, ``null``
in JSON and ``n/a`` in the text table.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .burstcsv import write_rows
from .fusion import select_base
from .matchset import MatchSet
from .model import Burst, ExecutionDataset

ACCEPT_CUTOFF = 0.30

# non-counter features compared alongside the counters
CONTEXT_FEATURES = (
    "duration_ns",
    "rel_position",
    "ipc",
    "frequency",
    "concurrency",
    "size_before",
    "size_after",
)


class ValidationError(ValueError):
    pass


def _vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    return x, y


def pearson(x, y) -> float | None:
    """Sample Pearson coefficient; None when either vector is constant."""
    x, y = _vectors(x, y)
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def relative_differences(b, mu) -> np.ndarray:
    """Per-burst |b - mu| / b over the rows with b > 0."""
    b, mu = _vectors(b, mu)
    pos = b > 0
    return np.abs(b[pos] - mu[pos]) / b[pos]


def relative_difference(b, mu) -> float | None:
    d = relative_differences(b, mu)
    return float(d.mean()) if d.size else None


def mean_absolute_error(b, mu) -> float:
    b, mu = _vectors(b, mu)
    if b.size == 0:
        raise ValidationError("MAE of empty vectors")
    return float(np.abs(b - mu).mean())


def outlier_fence(scores) -> tuple[float, np.ndarray]:
    """Upper fence q95 + 1.5 (q95 - q05) and the boolean mask of kept scores."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValidationError("fence of empty scores")
    q05, q95 = np.quantile(s, [0.05, 0.95])
    upper = float(q95 + 1.5 * (q95 - q05))
    return upper, s <= upper


def acceptance_rate(rel_diffs, cutoff: float = ACCEPT_CUTOFF) -> float | None:
    d = np.asarray(rel_diffs, dtype=float)
    if d.size == 0:
        return None
    return 100.0 * float((d < cutoff).sum()) / d.size


# -------------------------------------------------------------------- report


@dataclass
class FeatureComparison:
    feature: str
    base: np.ndarray
    matched_mean: np.ndarray
    per_trace: dict[str, np.ndarray]


@dataclass
class FeatureReport:
    feature: str
    samples: int
    correlation: float | None
    correlation_per_trace: dict[str, float | None]
    rel_diff: float | None
    mae: float | None
    acceptance_rate: float | None
    fence_upper: dict[str, float | None] = field(default_factory=dict)
    samples_kept: dict[str, int] = field(default_factory=dict)
    samples_dropped: dict[str, int] = field(default_factory=dict)


@dataclass
class ValidationReport:
    base_exec: str
    counter_set: str
    matched_bursts: int
    fence: bool
    features: list[FeatureReport]
    scores: dict[str, list[dict]] = field(default_factory=dict, repr=False)

    def to_json(self) -> str:
        doc = {
            "base_exec": self.base_exec,
            "counter_set": self.counter_set,
            "matched_bursts": self.matched_bursts,
            "fence": self.fence,
            "quantiles": "linear",
            "features": [asdict(f) for f in self.features],
        }
        return json.dumps(doc, indent=1) + "\n"

    def to_table(self) -> str:
        def cell(v, fmt_spec):
            return "n/a" if v is None else format(v, fmt_spec)

        head = ("Counter", "Correlation", "MAE", "Rel Diff", "<30% Diff")
        body = [
            (
                f.feature,
                cell(f.correlation, ".3f"),
                cell(f.mae, ".3f"),
                cell(f.rel_diff, ".4f"),
                "n/a" if f.acceptance_rate is None else f"{f.acceptance_rate:.2f}%",
            )
            for f in self.features
        ]
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [head, *body]]
        return "\n".join(lines) + "\n"

    def score_csv(self, feature: str) -> str:
        cols = ("burst_id", "task_id", "base", "matched_mean", "abs_diff", "rel_diff", "kept")
        return write_rows(cols, self.scores.get(feature, []))


def _value(b: Burst, feature: str):
    if feature == "duration_ns":
        return b.duration
    if feature == "size_before":
        return b.before.size
    if feature == "size_after":
        return b.after.size
    if feature in ("rel_position", "ipc", "frequency", "concurrency"):
        return getattr(b, feature)
    return b.counters.get(feature)


def compare_feature(
    feature: str,
    base: str,
    others: Sequence[str],
    rows: Sequence[dict[str, Burst]],
) -> tuple[FeatureComparison, list[int]]:
    """Vectors of one feature over the rows where every execution defines it."""
    keep = []
    table = []
    for i, row in enumerate(rows):
        vals = [_value(row[e], feature) for e in [base, *others]]
        if any(v is None for v in vals):
            continue
        keep.append(i)
        table.append(vals)
    m = np.array(table, dtype=float).reshape(len(table), 1 + len(others))
    per_trace = {e: m[:, j + 1] for j, e in enumerate(others)}
    return FeatureComparison(feature, m[:, 0], m[:, 1:].mean(axis=1), per_trace), keep


def _fenced(scores: np.ndarray, fence: bool) -> tuple[float | None, np.ndarray]:
    if scores.size == 0:
        return None, np.zeros(0, dtype=bool)
    if not fence:
        return None, np.ones(scores.size, dtype=bool)
    return outlier_fence(scores)


def feature_report(cmp: FeatureComparison, fence: bool = True) -> tuple[FeatureReport, dict]:
    """Metrics for one feature.

    The fence runs separately on the per-burst absolute differences (which
    also select the rows used for correlation) and on the per-burst
    relative differences (which feed RelDiff and the acceptance rate).
    """
    b, mu = cmp.base, cmp.matched_mean
    abs_d = np.abs(b - mu)
    pos = b > 0
    rel_d = np.full(b.size, np.nan)
    rel_d[pos] = abs_d[pos] / b[pos]

    u_abs, kept_abs = _fenced(abs_d, fence)
    u_rel, kept_rel_sub = _fenced(rel_d[pos], fence)
    kept_rel = np.zeros(b.size, dtype=bool)
    kept_rel[pos] = kept_rel_sub

    per = {e: pearson(b[kept_abs], v[kept_abs]) for e, v in cmp.per_trace.items()}
    defined = [r for r in per.values() if r is not None]
    corr = float(np.mean(defined)) if defined else None
    rel = rel_d[kept_rel]
    rep = FeatureReport(
        feature=cmp.feature,
        samples=int(b.size),
        correlation=corr,
        correlation_per_trace=per,
        rel_diff=float(rel.mean()) if rel.size else None,
        mae=float(abs_d[kept_abs].mean()) if kept_abs.any() else None,
        acceptance_rate=acceptance_rate(rel),
        fence_upper={"abs_diff": u_abs, "rel_diff": u_rel},
        samples_kept={"abs_diff": int(kept_abs.sum()), "rel_diff": int(kept_rel.sum())},
        # rows with a zero base value count as dropped from the relative metric
        samples_dropped={
            "abs_diff": int(b.size - kept_abs.sum()),
            "rel_diff": int(b.size - kept_rel.sum()),
        },
    )
    extra = {"abs": abs_d, "rel": rel_d, "kept": kept_abs & (kept_rel | ~pos)}
    return rep, extra


def validate(
    executions: Sequence[ExecutionDataset],
    match_set: MatchSet,
    fence: bool = True,
    base: str | None = None,
) -> ValidationReport:
    if len(executions) < 2:
        raise ValidationError("validation needs at least two executions")
    sets = {e.counter_set_name for e in executions}
    names = {tuple(sorted(e.counter_names)) for e in executions}
    if len(sets) > 1 or len(names) > 1:
        raise ValidationError(
            "validation needs identical counter sets, got "
            + ", ".join(f"{e.exec_id}={e.counter_set_name}" for e in executions)
        )
    by_id = {e.exec_id: e for e in executions}
    base = base or select_base(executions, match_set)
    others = sorted(e for e in by_id if e != base)

    full = match_set.full_groups()
    rows = [{e: by_id[e].burst(*g.members[e]) for e in by_id} for g in full]
    order = sorted(range(len(rows)), key=lambda i: (rows[i][base].task_id, rows[i][base].begin_time))
    rows = [rows[i] for i in order]
    ids = [full[i].burst_id for i in order]

    features = list(executions[0].counter_names) + list(CONTEXT_FEATURES)
    reports = []
    scores: dict[str, list[dict]] = {}
    for f in features:
        cmp, keep = compare_feature(f, base, others, rows)
        if not keep:
            continue
        rep, extra = feature_report(cmp, fence)
        reports.append(rep)
        scores[f] = [
            {
                "burst_id": ids[i],
                "task_id": rows[i][base].task_id,
                "base": repr(float(cmp.base[k])),
                "matched_mean": repr(float(cmp.matched_mean[k])),
                "abs_diff": repr(float(extra["abs"][k])),
                "rel_diff": "" if math.isnan(extra["rel"][k]) else repr(float(extra["rel"][k])),
                "kept": int(extra["kept"][k]),
            }
            for k, i in enumerate(keep)
        ]
    return ValidationReport(
        base_exec=base,
        counter_set=executions[0].counter_set_name,
        matched_bursts=len(rows),
        fence=fence,
        features=reports,
        scores=scores,
    )
