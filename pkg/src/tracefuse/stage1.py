"""Primary matching: positional when structures agree, pattern-frequency otherwise."""

from __future__ import annotations

from collections import Counter, defaultdict
from collections.abc import Mapping, Sequence

from .matchset import DIRECT, PATTERN, MatchGroup, Ref, group_sort_key, pattern_label
from .model import Burst, ExecutionDataset


class MatchInputError(ValueError):
    pass


def check_executions(executions: Sequence[ExecutionDataset]) -> None:
    if len(executions) < 2:
        raise MatchInputError("matching needs at least two executions")
    ids = [e.exec_id for e in executions]
    if len(set(ids)) != len(ids):
        raise MatchInputError(f"duplicate exec_id among {ids}")
    for e in executions:
        if e.n_bursts == 0:
            raise MatchInputError(f"execution {e.exec_id} has no bursts")
    ranks = [set(e.ranks) for e in executions]
    if any(r != ranks[0] for r in ranks):
        counts = {e.exec_id: len(e.ranks) for e in executions}
        raise MatchInputError(f"executions differ in rank count: {counts}")


def match_rank(
    rank: int, seqs: Mapping[str, Sequence[Burst]]
) -> tuple[list[MatchGroup], dict[str, list[Ref]]]:
    """Stage 1 for one rank; ``seqs`` maps exec_id to the rank's bursts."""
    execs = list(seqs)
    patterns = {e: [b.pattern for b in seqs[e]] for e in execs}
    first = patterns[execs[0]]

    if all(patterns[e] == first for e in execs):
        groups = [
            MatchGroup(f"r{rank}_d_{j + 1}", {e: seqs[e][j].ref for e in execs}, DIRECT)
            for j in range(len(first))
        ]
        return groups, {e: [] for e in execs}

    occurrences: dict[str, dict[tuple, list[Burst]]] = {}
    for e in execs:
        occ: dict[tuple, list[Burst]] = defaultdict(list)
        for b in seqs[e]:
            occ[b.pattern].append(b)
        occurrences[e] = occ
    freqs = {e: Counter({p: len(v) for p, v in occurrences[e].items()}) for e in execs}
    all_patterns = set().union(*(freqs[e] for e in execs))
    kept = {p for p in all_patterns if len({freqs[e][p] for e in execs}) == 1}

    groups = []
    for p in sorted(kept):
        label = pattern_label(p)
        for j in range(freqs[execs[0]][p]):
            members = {e: occurrences[e][p][j].ref for e in execs}
            groups.append(MatchGroup(f"r{rank}_p_{label}_{j + 1}", members, PATTERN))
    unmatched = {e: [b.ref for b in seqs[e] if b.pattern not in kept] for e in execs}
    return groups, unmatched


def stage1_match(
    executions: Sequence[ExecutionDataset],
) -> tuple[list[MatchGroup], dict[str, list[Ref]]]:
    check_executions(executions)
    groups: list[MatchGroup] = []
    unmatched: dict[str, list[Ref]] = {e.exec_id: [] for e in executions}
    for rank in executions[0].rank_ids:
        g, u = match_rank(rank, {e.exec_id: e.ranks[rank] for e in executions})
        groups += g
        for e, refs in u.items():
            unmatched[e] += refs
    groups.sort(key=group_sort_key)
    return groups, unmatched
