"""Issue-key extraction from commit summaries and link refinement.

Refinement runs in a fixed order: path requirement, merge disambiguation,
unique entry point, then pruning of keys unknown to the issue tracker.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import total_ordering
from pathlib import Path
from typing import Iterable, Sequence

from .commit_graph import AncestorSets, CommitGraph, CommitId, merged_branch, path_requirement, unique_entry_point
from .errors import SchemaError

_KEY_RE = re.compile(r"^([A-Z][A-Z0-9_]*)-([1-9]\d*)$")


@total_ordering
@dataclass(frozen=True)
class IssueKey:
    project_prefix: str
    number: int

    @classmethod
    def parse(cls, text: str) -> "IssueKey":
        m = _KEY_RE.match(text.strip())
        if not m:
            raise ValueError(f"not an issue key: {text!r}")
        return cls(m.group(1), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.project_prefix}-{self.number}"

    def __lt__(self, other: "IssueKey") -> bool:
        return (self.project_prefix, self.number) < (other.project_prefix, other.number)


@dataclass(frozen=True)
class LinkRecord:
    issue: IssueKey
    commits: tuple[CommitId, ...]

    def to_json(self, dropped_stage: str | None = None) -> dict:
        out = {"issue": str(self.issue), "commits": list(self.commits)}
        if dropped_stage:
            out["dropped_stage"] = dropped_stage
        return out


@dataclass(frozen=True)
class StageResult:
    kept: list[LinkRecord]
    dropped: list[IssueKey]


@dataclass
class MiningReport:
    unknown_issues: int = 0
    max_linkable: int = 0
    linked: int = 0
    discarded_path: int = 0
    discarded_merge: int = 0
    discarded_entry: int = 0

    def as_dict(self) -> dict:
        return dict(vars(self))


def _order_key(graph: CommitGraph):
    def key(cid: CommitId):
        return graph.position[cid], graph.records[cid].author_time, cid
    return key


def mine_raw_links(graph: CommitGraph, project_prefix: str) -> list[LinkRecord]:
    """Collect ``PREFIX-<n>`` mentions from commit summaries only."""
    if not project_prefix or project_prefix != project_prefix.upper():
        raise ValueError(f"project prefix must be non-empty uppercase: {project_prefix!r}")
    pattern = re.compile(rf"\b{re.escape(project_prefix)}-(\d+)\b")
    found: dict[IssueKey, list[CommitId]] = {}
    for cid in graph.topo_order:
        numbers = dict.fromkeys(int(n) for n in pattern.findall(graph.records[cid].summary))
        for n in numbers:
            if n > 0:
                found.setdefault(IssueKey(project_prefix, n), []).append(cid)
    key = _order_key(graph)
    return [LinkRecord(issue, tuple(sorted(cs, key=key))) for issue, cs in sorted(found.items())]


def apply_path_requirement(links: Sequence[LinkRecord], graph: CommitGraph,
                           ancestors: AncestorSets) -> StageResult:
    kept, dropped = [], []
    for link in links:
        if path_requirement(graph, ancestors, link.commits):
            kept.append(link)
        else:
            dropped.append(link.issue)
    return StageResult(kept, dropped)


def disambiguate_merges(links: Sequence[LinkRecord], graph: CommitGraph,
                        ancestors: AncestorSets) -> StageResult:
    """Strip merge-commit links whose merged branch already carries links.

    Issues that then lose every commit are dropped.
    """
    linked_commits = {c for link in links for c in link.commits}
    discard: set[CommitId] = set()
    for cid in sorted(linked_commits, key=graph.position.__getitem__):
        if not graph.records[cid].is_merge:
            continue
        branch = merged_branch(graph, ancestors, cid) - {cid}
        if branch & linked_commits:
            discard.add(cid)
    kept, dropped = [], []
    for link in links:
        commits = tuple(c for c in link.commits if c not in discard)
        if commits:
            kept.append(LinkRecord(link.issue, commits))
        else:
            dropped.append(link.issue)
    return StageResult(kept, dropped)


def apply_entry_point_requirement(links: Sequence[LinkRecord], graph: CommitGraph,
                                  ancestors: AncestorSets) -> StageResult:
    """Drop issues linked to a merge commit whose branch has no unique entry point."""
    cache: dict[CommitId, bool] = {}

    def ok(cid: CommitId) -> bool:
        if cid not in cache:
            cache[cid] = unique_entry_point(graph, ancestors, cid) is not None
        return cache[cid]

    kept, dropped = [], []
    for link in links:
        if all(ok(c) for c in link.commits if graph.records[c].is_merge):
            kept.append(link)
        else:
            dropped.append(link.issue)
    return StageResult(kept, dropped)


@dataclass
class RefinedLinks:
    raw: list[LinkRecord]
    links: list[LinkRecord]
    report: MiningReport
    dropped_stage: dict[IssueKey, str] = field(default_factory=dict)


def mining_report(raw: Sequence[LinkRecord], refined: Sequence[LinkRecord],
                  issue_corpus: Iterable[IssueKey],
                  dropped: dict[str, Iterable[IssueKey]] | None = None
                  ) -> tuple[MiningReport, list[LinkRecord]]:
    """Count issues per refinement outcome and prune keys missing from the tracker.

    Discard counts only include keys known to the tracker, so
    ``linked + discarded_* == max_linkable``.
    """
    known = set(issue_corpus)
    raw_keys = {link.issue for link in raw}
    pruned = [link for link in refined if link.issue in known]
    dropped = dropped or {}

    def count(stage):
        return len({k for k in dropped.get(stage, ()) if k in known})

    report = MiningReport(
        unknown_issues=len(raw_keys - known),
        max_linkable=len(raw_keys & known),
        linked=len(pruned),
        discarded_path=count("path"),
        discarded_merge=count("merge"),
        discarded_entry=count("entry"),
    )
    return report, pruned


def refine_links(graph: CommitGraph, ancestors: AncestorSets, project_prefix: str,
                 issue_corpus: Iterable[IssueKey]) -> RefinedLinks:
    raw = mine_raw_links(graph, project_prefix)
    stages = [("path", apply_path_requirement), ("merge", disambiguate_merges),
              ("entry", apply_entry_point_requirement)]
    current: list[LinkRecord] = raw
    dropped: dict[str, list[IssueKey]] = {}
    dropped_stage: dict[IssueKey, str] = {}
    for name, stage in stages:
        result = stage(current, graph, ancestors)
        dropped[name] = result.dropped
        dropped_stage.update((k, name) for k in result.dropped)
        current = result.kept
    known = set(issue_corpus)
    report, pruned = mining_report(raw, current, known, dropped)
    dropped_stage.update((link.issue, "unknown") for link in current if link.issue not in known)
    return RefinedLinks(raw, pruned, report, dropped_stage)


def write_links(refined: RefinedLinks, path) -> None:
    """One JSON object per mined issue; dropped issues carry ``dropped_stage``."""
    kept = {link.issue: link for link in refined.links}
    with open(path, "w", encoding="utf-8") as fh:
        for link in refined.raw:
            if link.issue in kept:
                obj = kept[link.issue].to_json()
            else:
                obj = link.to_json(refined.dropped_stage.get(link.issue, "unknown"))
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_links(path, include_dropped: bool = False) -> list[LinkRecord]:
    links = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            record = LinkRecord(IssueKey.parse(obj["issue"]), tuple(obj["commits"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"bad link record: {exc}", lineno) from exc
        if include_dropped or not obj.get("dropped_stage"):
            links.append(record)
    return links
