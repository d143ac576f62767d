"""Two-stage matching over whole executions, one rank at a time."""

from __future__ import annotations

from collections import Counter
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor

from .matchset import MatchGroup, MatchSet, Ref, group_sort_key, match_stats, pattern_label
from .model import DEFAULT_COLLECTIVES, Burst, CallClassifier, ExecutionDataset
from .stage1 import check_executions, match_rank
from .stage2 import SimilarityWeights, rank_regions, stage2_rank


def _match_one_rank(
    rank: int,
    seqs: dict[str, Sequence[Burst]],
    weights: SimilarityWeights,
    collectives: Sequence[str],
    use_stage2: bool,
) -> tuple[list[MatchGroup], dict[str, list[Ref]], dict[str, list[Ref]]]:
    groups, after1 = match_rank(rank, seqs)
    if not use_stage2 or not any(after1.values()):
        return groups, after1, after1
    classify = CallClassifier(collectives)
    regions = {}
    leftovers = {}
    for e, bursts in seqs.items():
        regions[e], ids = rank_regions(bursts, classify)
        wanted = set(after1[e])
        leftovers[e] = [b.replace(region_id=i) for b, i in zip(bursts, ids) if b.ref in wanted]
    new, after2 = stage2_rank(rank, leftovers, regions, weights)
    return groups + new, after1, after2


def _residuals(executions, refs_by_exec) -> dict[str, int]:
    counts: Counter[str] = Counter()
    for ds in executions:
        for r in refs_by_exec.get(ds.exec_id, ()):
            counts[pattern_label(ds.burst(*r).pattern)] += 1
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def match_executions(
    executions: Sequence[ExecutionDataset],
    weights: SimilarityWeights = SimilarityWeights(),
    collectives: Sequence[str] = DEFAULT_COLLECTIVES,
    workers: int = 1,
    stage2: bool = True,
) -> MatchSet:
    """Run Stage 1 and, on its leftovers, Stage 2 for every rank.

    ``workers > 1`` fans ranks out to a process pool; the result is the
    same as the sequential run.
    """
    check_executions(executions)
    ranks = executions[0].rank_ids
    jobs = [
        (r, {e.exec_id: e.ranks[r] for e in executions}, weights, tuple(collectives), stage2)
        for r in ranks
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_match_one_rank, *zip(*jobs)))
    else:
        results = [_match_one_rank(*job) for job in jobs]

    execs = [e.exec_id for e in executions]
    groups: list[MatchGroup] = []
    after1: dict[str, list[Ref]] = {e: [] for e in execs}
    unmatched: dict[str, list[Ref]] = {e: [] for e in execs}
    for g, u1, u2 in results:
        groups += g
        for e in execs:
            after1[e] += u1[e]
            unmatched[e] += u2[e]
    groups.sort(key=group_sort_key)
    ms = MatchSet(execs, groups, unmatched)
    ms.stats = match_stats(ms, {e.exec_id: e.n_bursts for e in executions})
    ms.stats["stage1_unmatched"] = {e: len(after1[e]) for e in execs}
    ms.stats["residual_patterns_stage1"] = _residuals(executions, after1)
    ms.stats["residual_patterns_final"] = _residuals(executions, unmatched)
    return ms
