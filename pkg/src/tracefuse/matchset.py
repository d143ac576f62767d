"""Cross-execution burst correspondences and their JSON file format."""

from __future__ import annotations

import json
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

DIRECT = "direct"
PATTERN = "pattern"
STRUCTURAL = "structural"
TRUTH = "truth"
STAGES = (DIRECT, PATTERN, STRUCTURAL, TRUTH)

Ref = tuple[int, int]  # (rank, seq_index)


@dataclass(frozen=True)
class MatchGroup:
    burst_id: str
    members: Mapping[str, Ref]
    stage: str
    score: float | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if len(self.members) < 2:
            raise ValueError(f"group {self.burst_id} has fewer than two members")
        if len({r for r, _ in self.members.values()}) != 1:
            raise ValueError(f"group {self.burst_id} spans several ranks")

    @property
    def rank(self) -> int:
        return next(iter(self.members.values()))[0]


def pattern_label(pattern: tuple[str, str]) -> str:
    return f"{pattern[0]}→{pattern[1]}"


def _natural(s: str):
    return [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", s)]


def group_sort_key(g: MatchGroup):
    return (g.rank, _natural(g.burst_id))


@dataclass
class MatchSet:
    executions: list[str]
    groups: list[MatchGroup] = field(default_factory=list)
    unmatched: dict[str, list[Ref]] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def matched_refs(self, exec_id: str) -> set[Ref]:
        return {g.members[exec_id] for g in self.groups if exec_id in g.members}

    def full_groups(self) -> list[MatchGroup]:
        need = set(self.executions)
        return [g for g in self.groups if set(g.members) == need]

    def partial_groups(self) -> list[MatchGroup]:
        need = set(self.executions)
        return [g for g in self.groups if set(g.members) != need]

    def to_json(self) -> str:
        doc = {
            "executions": list(self.executions),
            "groups": [
                {
                    "burst_id": g.burst_id,
                    "stage": g.stage,
                    **({"score": g.score} if g.score is not None else {}),
                    "members": {
                        e: {"rank": g.members[e][0], "seq_index": g.members[e][1]}
                        for e in self.executions
                        if e in g.members
                    },
                }
                for g in self.groups
            ],
            "unmatched": {
                e: [{"rank": r, "seq_index": s} for r, s in self.unmatched.get(e, [])]
                for e in self.executions
            },
        }
        if self.stats:
            doc["stats"] = self.stats
        return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> MatchSet:
        doc = json.loads(text)
        groups = [
            MatchGroup(
                burst_id=g["burst_id"],
                stage=g["stage"],
                score=g.get("score"),
                members={e: (m["rank"], m["seq_index"]) for e, m in g["members"].items()},
            )
            for g in doc["groups"]
        ]
        unmatched = {
            e: [(m["rank"], m["seq_index"]) for m in refs] for e, refs in doc.get("unmatched", {}).items()
        }
        return cls(list(doc["executions"]), groups, unmatched, doc.get("stats", {}))


def check_partition(ms: MatchSet, bursts: Mapping[str, Iterable[Ref]]) -> list[str]:
    """Problems with the partition property; empty list when it holds.

    Every burst of every execution must sit in exactly one group or appear
    exactly once among the unmatched.
    """
    problems = []
    for e in ms.executions:
        seen: Counter[Ref] = Counter()
        for g in ms.groups:
            if e in g.members:
                seen[g.members[e]] += 1
        seen.update(ms.unmatched.get(e, []))
        universe = set(bursts[e])
        for ref, n in seen.items():
            if n > 1:
                problems.append(f"{e}: burst {ref} appears {n} times")
            if ref not in universe:
                problems.append(f"{e}: unknown burst {ref}")
        for ref in universe - set(seen):
            problems.append(f"{e}: burst {ref} neither matched nor unmatched")
    return problems


def _pairs(groups: Iterable[MatchGroup], execs: Sequence[str]) -> set:
    out = set()
    for g in groups:
        members = [(e, g.members[e]) for e in execs if e in g.members]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                out.add((members[i], members[j]))
    return out


def recovery(predicted: MatchSet, truth: MatchSet, stages: Sequence[str] | None = None) -> float:
    """Fraction of ground-truth burst pairs that the prediction also pairs.

    ``stages`` restricts the prediction to groups of those stages.
    """
    execs = truth.executions
    want = _pairs(truth.groups, execs)
    if not want:
        return 1.0
    groups = [g for g in predicted.groups if stages is None or g.stage in stages]
    got = _pairs(groups, execs)
    return len(want & got) / len(want)


def match_stats(ms: MatchSet, totals: Mapping[str, int]) -> dict:
    by_stage = Counter(g.stage for g in ms.groups)
    matched = {e: len(ms.matched_refs(e)) for e in ms.executions}
    return {
        "groups_by_stage": {s: by_stage.get(s, 0) for s in (DIRECT, PATTERN, STRUCTURAL)},
        "matched_pct": {
            e: (100.0 * matched[e] / totals[e]) if totals[e] else 100.0 for e in ms.executions
        },
        "unmatched": {e: len(ms.unmatched.get(e, [])) for e in ms.executions},
        "complete_groups": len(ms.full_groups()),
    }
