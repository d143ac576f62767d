"""Structural matching of the bursts Stage 1 left over.

Bursts are confined to collective regions, grouped by their (before,
after) MPI pattern, and paired greedily by a weighted distance score.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .matchset import STRUCTURAL, MatchGroup, Ref, group_sort_key, pattern_label
from .model import COLLECTIVE, Burst, CallClassifier, CollectiveRegion, ExecutionDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityWeights:
    w_temporal: float = 0.6
    w_size: float = 0.2
    w_partner: float = 0.2
    threshold: float = 0.3

    def __post_init__(self):
        for name in ("w_temporal", "w_size", "w_partner", "threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        total = self.w_temporal + self.w_size + self.w_partner
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")


@dataclass(frozen=True)
class StructureKey:
    pattern: tuple[str, str]
    region_id: int

    def __str__(self) -> str:
        return f"{pattern_label(self.pattern)}@{self.region_id}"


# ------------------------------------------------------------------ regions


def _is_collective(ctx, classify: CallClassifier | None) -> bool:
    if classify is not None:
        return classify(ctx.call.name) == COLLECTIVE
    return ctx.call.cls == COLLECTIVE


def rank_regions(
    bursts: Sequence[Burst], classify: CallClassifier | None = None
) -> tuple[list[CollectiveRegion], list[int]]:
    """Regions of one rank and the region_id of each burst."""
    if not bursts:
        return [], []
    boundaries = []
    ids = []
    prev = None
    for b in bursts:
        # a collective after the previous burst that is not this burst's
        # "before" means a zero-length gap was dropped in between
        if _is_collective(b.before, classify) or (
            prev is not None and _is_collective(prev.after, classify)
        ):
            boundaries.append(b.begin_time)
        ids.append(len(boundaries))
        prev = b
    starts = [bursts[0].begin_time] + boundaries
    ends = boundaries + [max(bursts[-1].end_time, starts[-1])]
    regions = [CollectiveRegion(s, e, i) for i, (s, e) in enumerate(zip(starts, ends))]
    return regions, ids


def define_regions(
    dataset: ExecutionDataset, classify: CallClassifier | None = None
) -> tuple[ExecutionDataset, dict[int, list[CollectiveRegion]]]:
    """Annotate every burst with its collective region.

    Region boundaries are the end times of collective calls; a burst
    beginning exactly at a boundary belongs to the later region.
    """
    regions = {}
    ranks = {}
    for rank in dataset.rank_ids:
        bursts = dataset.ranks[rank]
        regions[rank], ids = rank_regions(bursts, classify)
        ranks[rank] = tuple(b.replace(region_id=i) for b, i in zip(bursts, ids))
    return dataset.replace(ranks=ranks), regions


# ---------------------------------------------------------------- distances


def relative_position(b: Burst, region: CollectiveRegion) -> float:
    if region.length <= 0:
        return 0.0
    return min(1.0, max(0.0, (b.midpoint - region.t_start) / region.length))


def temporal_distance(
    ref: Burst, cand: Burst, ref_region: CollectiveRegion, cand_region: CollectiveRegion
) -> float:
    return abs(relative_position(ref, ref_region) - relative_position(cand, cand_region))


def _size_term(a: int | None, b: int | None) -> float | None:
    if a is None or b is None:
        return None
    return abs(a - b) / max(a, b, 1)


def size_distance(ref: Burst, cand: Burst) -> float:
    terms = [
        t
        for t in (
            _size_term(ref.before.size, cand.before.size),
            _size_term(ref.after.size, cand.after.size),
        )
        if t is not None
    ]
    return sum(terms) / len(terms) if terms else 0.0


def partner_distance(ref: Burst, cand: Burst) -> float:
    def side(a, b):
        return 1.0 if a is not None and b is not None and a != b else 0.0

    return (side(ref.before.partner, cand.before.partner) + side(ref.after.partner, cand.after.partner)) / 2


def similarity_score(
    ref: Burst,
    cand: Burst,
    ref_region: CollectiveRegion,
    cand_region: CollectiveRegion,
    weights: SimilarityWeights = SimilarityWeights(),
) -> float:
    return (
        weights.w_temporal * temporal_distance(ref, cand, ref_region, cand_region)
        + weights.w_size * size_distance(ref, cand)
        + weights.w_partner * partner_distance(ref, cand)
    )


# ----------------------------------------------------------------- grouping


def group_unmatched(
    unmatched: Mapping[str, Iterable[Burst]],
) -> dict[StructureKey, dict[str, list[Burst]]]:
    """Group one rank's leftover bursts by (pattern, region_id).

    Groups seen in fewer than two executions are dropped.
    """
    groups: dict[StructureKey, dict[str, list[Burst]]] = defaultdict(lambda: defaultdict(list))
    for e, bursts in unmatched.items():
        for b in bursts:
            if b.region_id is None:
                raise ValueError(f"burst {b.ref} of {e} has no region_id; run define_regions first")
            groups[StructureKey(b.pattern, b.region_id)][e].append(b)
    out = {}
    for key in sorted(groups, key=lambda k: (k.region_id, k.pattern)):
        members = groups[key]
        if len(members) < 2:
            continue
        out[key] = {e: sorted(members[e], key=lambda b: b.begin_time) for e in sorted(members)}
    return out


class _Candidates:
    """Vectorised view of one execution's bursts inside a group."""

    def __init__(self, bursts: Sequence[Burst], regions: Sequence[CollectiveRegion]):
        self.bursts = bursts
        self.pos = np.array([relative_position(b, regions[b.region_id]) for b in bursts])

        def arr(values):
            return np.array([np.nan if v is None else v for v in values], dtype=float)

        self.size_b = arr([b.before.size for b in bursts])
        self.size_a = arr([b.after.size for b in bursts])
        self.partner_b = arr([b.before.partner for b in bursts])
        self.partner_a = arr([b.after.partner for b in bursts])
        self.used = np.zeros(len(bursts), dtype=bool)

    def scores(self, ref: Burst, ref_pos: float, w: SimilarityWeights) -> np.ndarray:
        dt = np.abs(self.pos - ref_pos)
        ds_terms = []
        for mine, theirs in ((self.size_b, ref.before.size), (self.size_a, ref.after.size)):
            if theirs is None:
                ds_terms.append(np.full(len(mine), np.nan))
            else:
                ds_terms.append(np.abs(mine - theirs) / np.maximum(np.maximum(mine, theirs), 1))
        terms = np.vstack(ds_terms)
        defined = ~np.isnan(terms)
        n = defined.sum(axis=0)
        ds = np.where(n > 0, np.nansum(terms, axis=0) / np.maximum(n, 1), 0.0)
        dp = np.zeros(len(self.bursts))
        for mine, theirs in ((self.partner_b, ref.before.partner), (self.partner_a, ref.after.partner)):
            if theirs is not None:
                dp += np.where(np.isnan(mine), 0.0, (mine != theirs).astype(float))
        dp /= 2
        return w.w_temporal * dt + w.w_size * ds + w.w_partner * dp


def match_groups(
    rank: int,
    groups: Mapping[StructureKey, Mapping[str, Sequence[Burst]]],
    regions: Mapping[str, Sequence[CollectiveRegion]],
    weights: SimilarityWeights = SimilarityWeights(),
) -> tuple[list[MatchGroup], set[tuple[str, Ref]]]:
    """Greedy structural matching of one rank's groups.

    Returns the new groups and the (exec_id, ref) pairs they consumed.
    """
    out: list[MatchGroup] = []
    consumed: set[tuple[str, Ref]] = set()
    for key, members in groups.items():
        ref_exec = min(members, key=lambda e: (-len(members[e]), e))
        others = [e for e in sorted(members) if e != ref_exec]
        cands = {e: _Candidates(members[e], regions[e]) for e in others}
        label = f"r{rank}_s_{key}"
        j = 0
        for ref in members[ref_exec]:
            ref_pos = relative_position(ref, regions[ref_exec][ref.region_id])
            accepted: dict[str, Ref] = {}
            worst = 0.0
            for e in others:
                c = cands[e]
                if c.used.all():
                    continue
                s = c.scores(ref, ref_pos, weights)
                s[c.used] = np.inf
                k = int(np.argmin(s))
                cand = c.bursts[k]
                exact = similarity_score(
                    ref, cand, regions[ref_exec][ref.region_id], regions[e][cand.region_id], weights
                )
                if exact < weights.threshold:
                    c.used[k] = True
                    accepted[e] = cand.ref
                    worst = max(worst, exact)
            if accepted:
                j += 1
                ms = {ref_exec: ref.ref, **accepted}
                out.append(
                    MatchGroup(f"{label}_{j}", {e: ms[e] for e in sorted(ms)}, STRUCTURAL, worst)
                )
                consumed.update((e, r) for e, r in ms.items())
    return out, consumed


def stage2_match(
    executions: Sequence[ExecutionDataset],
    unmatched: Mapping[str, Sequence[Ref]],
    weights: SimilarityWeights = SimilarityWeights(),
    classify: CallClassifier | None = None,
) -> tuple[list[MatchGroup], dict[str, list[Ref]]]:
    annotated = {}
    regions = {}
    for ds in executions:
        annotated[ds.exec_id], regions[ds.exec_id] = define_regions(ds, classify)
    groups: list[MatchGroup] = []
    still: dict[str, list[Ref]] = {e.exec_id: [] for e in executions}
    by_rank: dict[int, dict[str, list[Ref]]] = defaultdict(lambda: defaultdict(list))
    for e, refs in unmatched.items():
        for r in refs:
            by_rank[r[0]][e].append(r)
    for rank in sorted(by_rank):
        g, leftover = stage2_rank(
            rank,
            {e: [annotated[e].burst(*r) for r in refs] for e, refs in by_rank[rank].items()},
            {e: regions[e][rank] for e in annotated},
            weights,
        )
        groups += g
        for e, refs in leftover.items():
            still[e] += refs
    groups.sort(key=group_sort_key)
    return groups, still


def stage2_rank(
    rank: int,
    unmatched: Mapping[str, Sequence[Burst]],
    regions: Mapping[str, Sequence[CollectiveRegion]],
    weights: SimilarityWeights = SimilarityWeights(),
) -> tuple[list[MatchGroup], dict[str, list[Ref]]]:
    counts = {e: len(r) for e, r in regions.items()}
    if len(set(counts.values())) > 1:
        logger.warning("rank %d: collective region counts differ across executions: %s", rank, counts)
    grouped = group_unmatched(unmatched)
    new, consumed = match_groups(rank, grouped, regions, weights)
    leftover = {
        e: [b.ref for b in bursts if (e, b.ref) not in consumed] for e, bursts in unmatched.items()
    }
    return new, leftover
