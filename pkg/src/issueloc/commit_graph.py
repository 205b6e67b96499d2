"""Commit DAG loading and the ancestry algorithms used for link refinement.

Ancestor sets are stored as Python ints used as bitsets over positions in
``topo_order``; ``AncestorSets`` exposes them as frozensets of commit ids.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

from .errors import NotAMerge, UnsupportedMerge
from .gitio import Repo

CommitId = str


@dataclass(frozen=True)
class CommitRecord:
    id: CommitId
    parents: tuple[CommitId, ...]
    summary: str
    author_time: int = 0

    @property
    def is_merge(self) -> bool:
        return len(self.parents) == 2

    @property
    def is_root(self) -> bool:
        return not self.parents


@dataclass(frozen=True)
class CommitGraph:
    records: Mapping[CommitId, CommitRecord]
    head: CommitId
    topo_order: tuple[CommitId, ...]
    position: Mapping[CommitId, int] = field(repr=False)

    @classmethod
    def from_records(cls, records: Iterable[CommitRecord], head: CommitId) -> "CommitGraph":
        """Build a graph of everything reachable from ``head``.

        Raises ``UnsupportedMerge`` for commits with more than two parents and
        ``ValueError`` for dangling parents or cycles.
        """
        by_id: dict[CommitId, CommitRecord] = {}
        for rec in records:
            if not rec.id:
                raise ValueError("empty commit id")
            if rec.id in by_id:
                raise ValueError(f"duplicate commit {rec.id}")
            by_id[rec.id] = rec
        if head not in by_id:
            raise ValueError(f"head {head} not among records")

        reachable: dict[CommitId, CommitRecord] = {}
        stack = [head]
        while stack:
            cid = stack.pop()
            if cid in reachable:
                continue
            rec = by_id.get(cid)
            if rec is None:
                raise ValueError(f"parent {cid} does not resolve")
            if len(rec.parents) > 2:
                raise UnsupportedMerge(f"commit {cid} has {len(rec.parents)} parents")
            reachable[cid] = rec
            stack.extend(rec.parents)

        order = _topological_order(reachable)
        return cls(reachable, head, tuple(order), {c: i for i, c in enumerate(order)})

    def __contains__(self, cid: object) -> bool:
        return cid in self.records

    def __getitem__(self, cid: CommitId) -> CommitRecord:
        return self.records[cid]

    def __len__(self) -> int:
        return len(self.records)

    def merges(self) -> list[CommitId]:
        return [c for c in self.topo_order if self.records[c].is_merge]


def _topological_order(records: Mapping[CommitId, CommitRecord]) -> list[CommitId]:
    # Kahn's algorithm; ready commits are released by (author_time, id) so the
    # order is independent of git's traversal.
    pending = {c: len(set(r.parents)) for c, r in records.items()}
    children: dict[CommitId, list[CommitId]] = {c: [] for c in records}
    for c, r in records.items():
        for p in set(r.parents):
            children[p].append(c)
    heap = [(r.author_time, c) for c, r in records.items() if pending[c] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, c = heapq.heappop(heap)
        order.append(c)
        for child in children[c]:
            pending[child] -= 1
            if pending[child] == 0:
                heapq.heappush(heap, (records[child].author_time, child))
    if len(order) != len(records):
        raise ValueError("commit graph contains a cycle")
    return order


def load_history(repo_path, head_ref: str = "HEAD") -> CommitGraph:
    """Read all commits reachable from ``head_ref``, keeping only message summaries."""
    repo = Repo(repo_path)
    head = repo.resolve(head_ref)
    records = []
    for raw in repo.log(head):
        if len(raw.parents) > 2:
            raise UnsupportedMerge(f"commit {raw.sha} has {len(raw.parents)} parents")
        summary = raw.message.split("\n", 1)[0].rstrip("\r")
        records.append(CommitRecord(raw.sha, raw.parents, summary, raw.author_time))
    return CommitGraph.from_records(records, head)


class AncestorSets:
    """For each commit, the set of commits that came before it (itself included)."""

    def __init__(self, graph: CommitGraph):
        self.graph = graph
        bits: list[int] = []
        pos = graph.position
        for cid in graph.topo_order:
            acc = 1 << pos[cid]
            for p in graph.records[cid].parents:
                acc |= bits[pos[p]]
            bits.append(acc)
        self._bits = bits

    def bits(self, cid: CommitId) -> int:
        return self._bits[self.graph.position[cid]]

    def contains(self, cid: CommitId, ancestor: CommitId) -> bool:
        """True when ``ancestor`` is in the ancestor set of ``cid``."""
        return bool(self.bits(cid) >> self.graph.position[ancestor] & 1)

    def _decode(self, bits: int) -> frozenset[CommitId]:
        order = self.graph.topo_order
        out = []
        i = 0
        while bits:
            if bits & 1:
                out.append(order[i])
            bits >>= 1
            i += 1
        return frozenset(out)

    def __getitem__(self, cid: CommitId) -> frozenset[CommitId]:
        return self._decode(self.bits(cid))

    @property
    def sets(self) -> dict[CommitId, frozenset[CommitId]]:
        return {c: self[c] for c in self.graph.topo_order}


def ancestor_sets(graph: CommitGraph) -> AncestorSets:
    return AncestorSets(graph)


def _require_merge(graph: CommitGraph, merge: CommitId) -> CommitRecord:
    rec = graph.records[merge]
    if not rec.is_merge:
        raise NotAMerge(f"{merge} is not a 2-way merge commit")
    return rec


def _merged_branch_bits(graph: CommitGraph, ancestors: AncestorSets, merge: CommitId) -> int:
    first, second = _require_merge(graph, merge).parents
    branch = ancestors.bits(second) | 1 << graph.position[merge]
    return branch & ~ancestors.bits(first)


def merged_branch(graph: CommitGraph, ancestors: AncestorSets, merge: CommitId) -> frozenset[CommitId]:
    """Commits brought in by ``merge``: ancestors of its second parent plus the
    merge itself, minus ancestors of the first parent."""
    return ancestors._decode(_merged_branch_bits(graph, ancestors, merge))


class PathDecision(NamedTuple):
    accepted: bool
    reason: str = ""
    pair: tuple[CommitId, CommitId] | None = None

    def __bool__(self) -> bool:
        return self.accepted


def _anchor(graph: CommitGraph, cid: CommitId) -> CommitId:
    rec = graph.records[cid]
    return rec.parents[1] if rec.is_merge else cid


def precedes(graph: CommitGraph, ancestors: AncestorSets, c: CommitId, d: CommitId) -> bool:
    """c comes before d on a path that enters d through its merged branch."""
    return ancestors.contains(_anchor(graph, d), c)


def path_requirement(graph: CommitGraph, ancestors: AncestorSets,
                     linked: Iterable[CommitId]) -> PathDecision:
    """Check that the linked commits lie on one root-to-head path.

    A linked merge commit must be reached through the branch it merges, so it
    is anchored to its second parent when ordering.
    """
    commits = sorted(set(linked), key=graph.position.__getitem__)
    if not commits:
        raise ValueError("no linked commits")
    for c in commits:
        if not ancestors.contains(graph.head, c):
            return PathDecision(False, f"{c} is not an ancestor of head", (c, graph.head))
    for c, d in itertools.combinations(commits, 2):
        if not (precedes(graph, ancestors, c, d) or precedes(graph, ancestors, d, c)):
            return PathDecision(False, f"{c} and {d} are not on a common path", (c, d))
    return PathDecision(True)


def unique_entry_point(graph: CommitGraph, ancestors: AncestorSets,
                       merge: CommitId) -> tuple[CommitId, CommitId] | None:
    """Return (entry commit, a-priori parent) when the merged branch has a single
    entry, else None."""
    branch_bits = _merged_branch_bits(graph, ancestors, merge) & ~(1 << graph.position[merge])
    pos = graph.position
    found = None
    for cid in ancestors._decode(branch_bits):
        outside = [p for p in graph.records[cid].parents if not branch_bits >> pos[p] & 1]
        if not outside:
            continue
        if found is not None or len(outside) != 1:
            return None
        found = (cid, outside[0])
    return found
