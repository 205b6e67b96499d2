"""Label extraction and First-Commit-Only dataset construction."""

from __future__ import annotations

import enum
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path, PurePosixPath
from typing import Iterable, Mapping, Sequence

from .commit_graph import AncestorSets, CommitGraph, CommitId, unique_entry_point
from .errors import SchemaError, UnsupportedVariant
from .gitio import Repo
from .links import IssueKey, LinkRecord

log = logging.getLogger(__name__)

DEFAULT_EXTENSIONS = frozenset({
    "java", "py", "c", "h", "cpp", "hpp", "cs", "go", "js", "ts",
    "rb", "php", "rs", "ml", "scala", "kt",
})


class DatasetVariant(enum.Enum):
    FIRST_COMMIT_ONLY = "first_commit_only"
    ALL_FUTURE_FILES = "all_future_files"
    EXACT_COMMITS = "exact_commits"


def _iso(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, (int, float)):
        return datetime.fromtimestamp(value, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return str(value)


@dataclass(frozen=True)
class Issue:
    key: IssueKey
    raw_type: str
    title: str
    body: str = ""
    created: str = ""

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.body}"


def read_issues(path) -> dict[IssueKey, Issue]:
    """Load the issue corpus: JSONL with key, type, title, body, created."""
    issues: dict[IssueKey, Issue] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            issue = Issue(IssueKey.parse(obj["key"]), str(obj.get("type") or ""),
                          str(obj.get("title") or ""), str(obj.get("body") or ""),
                          _iso(obj.get("created")))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise SchemaError(f"bad issue record: {exc}", lineno) from exc
        if issue.key in issues:
            raise SchemaError(f"duplicate issue {issue.key}", lineno)
        issues[issue.key] = issue
    return issues


@dataclass(frozen=True)
class SnapshotRef:
    commit: CommitId
    diff_commit: CommitId


@dataclass(frozen=True)
class ExtensionFilter:
    allowed: frozenset[str] = DEFAULT_EXTENSIONS

    def __post_init__(self):
        allowed = frozenset(e.lower().lstrip(".") for e in self.allowed)
        if not allowed:
            raise ValueError("extension filter must allow at least one extension")
        object.__setattr__(self, "allowed", allowed)

    def matches(self, path: str) -> bool:
        name = PurePosixPath(path).name
        if "." not in name:
            return False
        return name.rsplit(".", 1)[1].lower() in self.allowed


@dataclass(frozen=True)
class LabeledSample:
    issue: IssueKey
    issue_type: str
    snapshot: SnapshotRef
    positives: frozenset[str]
    snapshot_file_count: int
    title: str = ""
    body: str = ""
    created: str = ""

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.body}"

    def to_json(self) -> dict:
        return {
            "issue": str(self.issue),
            "issue_type": self.issue_type,
            "title": self.title,
            "body": self.body,
            "created": self.created,
            "diff_commit": self.snapshot.diff_commit,
            "snapshot_commit": self.snapshot.commit,
            "positives": sorted(self.positives),
            "snapshot_file_count": self.snapshot_file_count,
        }


SAMPLE_FIELDS = frozenset({
    "issue", "issue_type", "title", "body", "created", "diff_commit",
    "snapshot_commit", "positives", "snapshot_file_count",
})


def resolve_apriori(graph: CommitGraph, ancestors: AncestorSets, commit: CommitId) -> SnapshotRef | None:
    rec = graph.records[commit]
    if rec.is_root:
        return None
    if not rec.is_merge:
        return SnapshotRef(rec.parents[0], commit)
    entry = unique_entry_point(graph, ancestors, commit)
    if entry is None:
        return None
    return SnapshotRef(entry[1], commit)


@dataclass(frozen=True)
class _Labels:
    positives: frozenset[str]
    negatives: frozenset[str]
    outside_snapshot: frozenset[str]


def _first_parent(graph: CommitGraph | None, repo: Repo, commit: CommitId) -> CommitId | None:
    if graph is not None and commit in graph:
        parents = graph.records[commit].parents
        return parents[0] if parents else None
    out = repo._run(["rev-list", "--parents", "-n", "1", commit]).stdout.decode().split()
    return out[1] if len(out) > 1 else None


def _label(repo: Repo, diff_commit: CommitId, snapshot: SnapshotRef, ext: ExtensionFilter,
           graph: CommitGraph | None = None, snapshot_files: Iterable[str] | None = None) -> _Labels:
    parent = _first_parent(graph, repo, diff_commit)
    touched = set()
    for change in repo.diff(parent, diff_commit):
        # additions (including the new side of renames and copies) are never positives
        if change.status in "MTD" or change.status == "R":
            touched.add(change.old_path)
    if snapshot_files is None:
        snapshot_files = repo.ls_files(snapshot.commit)
    code_files = {p for p in snapshot_files if ext.matches(p)}
    candidates = {p for p in touched if ext.matches(p)}
    positives = frozenset(candidates & code_files)
    return _Labels(positives, frozenset(code_files - positives), frozenset(candidates - code_files))


def extract_labels(repo: Repo, diff_commit: CommitId, snapshot: SnapshotRef,
                   filter: ExtensionFilter) -> tuple[frozenset[str], frozenset[str]]:
    """Positive and negative source files of ``snapshot`` for the change made by ``diff_commit``.

    The diff is taken against the first parent. Modified and deleted files are
    positives; added files, including rename targets, are not labelled.
    """
    labels = _label(repo, diff_commit, snapshot, filter)
    return labels.positives, labels.negatives


def snapshot_sources(repo: Repo, commit: CommitId, filter: ExtensionFilter) -> list[str]:
    return sorted(p for p in repo.ls_files(commit) if filter.matches(p))


@dataclass
class BuildStats:
    discarded: list[IssueKey] = field(default_factory=list)
    flagged: list[IssueKey] = field(default_factory=list)


def build_dataset(graph: CommitGraph, ancestors: AncestorSets, links: Sequence[LinkRecord],
                  issues: Mapping[IssueKey, Issue], filter: ExtensionFilter, repo: Repo,
                  variant: DatasetVariant = DatasetVariant.FIRST_COMMIT_ONLY,
                  workers: int = 1, stats: BuildStats | None = None) -> list[LabeledSample]:
    """One sample per issue from its first linked commit that has code positives."""
    if variant is not DatasetVariant.FIRST_COMMIT_ONLY:
        raise UnsupportedVariant(f"dataset variant {variant.value} is not supported")
    stats = stats if stats is not None else BuildStats()
    tree_cache: dict[CommitId, dict[str, str]] = {}

    def files_of(commit):
        if commit not in tree_cache:
            tree_cache[commit] = repo.ls_files(commit)
        return tree_cache[commit]

    def one(link: LinkRecord):
        issue = issues.get(link.issue)
        if issue is None:
            return None, False
        for commit in link.commits:
            snapshot = resolve_apriori(graph, ancestors, commit)
            if snapshot is None:
                continue
            labels = _label(repo, commit, snapshot, filter, graph, files_of(snapshot.commit))
            if not labels.positives:
                continue
            if labels.outside_snapshot:
                log.warning("%s: dropped positives outside snapshot %s: %s", link.issue,
                            snapshot.commit[:10], sorted(labels.outside_snapshot))
            return LabeledSample(
                issue=link.issue, issue_type=issue.raw_type, snapshot=snapshot,
                positives=labels.positives,
                snapshot_file_count=len(labels.positives) + len(labels.negatives),
                title=issue.title, body=issue.body, created=issue.created,
            ), bool(labels.outside_snapshot)
        return None, False

    ordered = sorted(links, key=lambda link: link.issue)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, ordered))
    else:
        results = [one(link) for link in ordered]

    samples = []
    for link, (sample, flagged) in zip(ordered, results):
        if sample is None:
            stats.discarded.append(link.issue)
            continue
        if flagged:
            stats.flagged.append(link.issue)
        samples.append(sample)
    return samples


def materialise_negatives(sample: LabeledSample, repo: Repo, filter: ExtensionFilter) -> frozenset[str]:
    files = snapshot_sources(repo, sample.snapshot.commit, filter)
    return frozenset(files) - sample.positives


def commit_size_distribution(links: Sequence[LinkRecord], repo: Repo,
                             graph: CommitGraph | None = None) -> dict[int, list[float]]:
    """Share of changed files per commit position, over issues with several commits.

    Returns position (1-based) -> list of shares, one entry per issue that has
    a commit at that position.
    """
    table: dict[int, list[float]] = {}
    for link in sorted(links, key=lambda x: x.issue):
        if len(link.commits) < 2:
            continue
        sizes = [len(repo.diff(_first_parent(graph, repo, c), c)) for c in link.commits]
        total = sum(sizes)
        if total == 0:
            continue
        for pos, size in enumerate(sizes, 1):
            table.setdefault(pos, []).append(size / total)
    return table


def dataset_summary(samples: Sequence[LabeledSample]) -> dict:
    """In-dataset count plus min/max/mean/median of files and positives per issue."""
    def describe(values):
        if not values:
            return {"min": None, "max": None, "mean": None, "median": None}
        return {"min": min(values), "max": max(values),
                "mean": statistics.fmean(values), "median": statistics.median(values)}

    return {
        "in_dataset": len(samples),
        "files_per_issue": describe([s.snapshot_file_count for s in samples]),
        "positives_per_issue": describe([len(s.positives) for s in samples]),
    }


def write_dataset(samples: Iterable[LabeledSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def _sample_from_json(obj: dict) -> LabeledSample:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    unknown = set(obj) - SAMPLE_FIELDS
    if unknown:
        raise ValueError(f"unknown fields {sorted(unknown)}")
    missing = SAMPLE_FIELDS - set(obj)
    if missing:
        raise ValueError(f"missing fields {sorted(missing)}")
    positives = obj["positives"]
    if not isinstance(positives, list) or not all(isinstance(p, str) for p in positives):
        raise ValueError("positives must be a list of paths")
    count = obj["snapshot_file_count"]
    if not isinstance(count, int) or count < len(positives) or not positives:
        raise ValueError("inconsistent positives / snapshot_file_count")
    return LabeledSample(
        issue=IssueKey.parse(obj["issue"]),
        issue_type=str(obj["issue_type"]),
        snapshot=SnapshotRef(str(obj["snapshot_commit"]), str(obj["diff_commit"])),
        positives=frozenset(positives),
        snapshot_file_count=count,
        title=str(obj["title"]), body=str(obj["body"]), created=str(obj["created"]),
    )


def read_dataset(path) -> list[LabeledSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                samples.append(_sample_from_json(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise SchemaError(str(exc), lineno) from exc
    return samples
