"""Temporal splitting and the per-issue ranking metrics."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import EmptyInput, PositivesNotRanked
from .links import IssueKey
from .retrieval import Ranking

KS = (1, 5, 10)


@dataclass(frozen=True)
class Split:
    validation: list
    test: list
    boundary_time: int | None


def temporal_split(samples: Sequence, commit_time: Mapping | Callable, ratio: float = 0.5) -> Split:
    """Order samples by the time of their resolving commit (issue key breaks
    ties) and put the first ``ceil(ratio * n)`` in the validation half.

    ``commit_time`` maps a diff commit id to its author timestamp.
    """
    if not samples:
        raise EmptyInput("no samples to split")
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must lie in [0, 1]")
    lookup = commit_time if callable(commit_time) else commit_time.__getitem__
    keyed = sorted(samples, key=lambda s: (lookup(s.snapshot.diff_commit), s.issue))
    cut = math.ceil(ratio * len(keyed))
    boundary = lookup(keyed[cut - 1].snapshot.diff_commit) if cut else None
    return Split(keyed[:cut], keyed[cut:], boundary)


@dataclass(frozen=True)
class MetricsRow:
    issue: IssueKey
    hit: Mapping[int, int]
    precision: Mapping[int, float]
    recall: Mapping[int, float]
    r_precision: float
    reciprocal_rank: float
    first_positive_rank: int
    true_positives: Mapping[int, int] = field(default_factory=dict)
    n_positives: int = 0
    n_ranked: int = 0

    def flat(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for k in sorted(self.hit):
            out[f"hit@{k}"] = self.hit[k]
        for k in sorted(self.precision):
            out[f"p@{k}"] = self.precision[k]
        for k in sorted(self.recall):
            out[f"r@{k}"] = self.recall[k]
        out["rp"] = self.r_precision
        out["mrr"] = self.reciprocal_rank
        return out


def metrics_for_issue(ranking: Ranking | Sequence[str], positives: Iterable[str],
                      ks: Iterable[int] = KS, issue: IssueKey | None = None) -> MetricsRow:
    """hit@k, precision@k, recall@k, R-precision and reciprocal rank for one ranking.

    precision@k divides by min(k, number of ranked files).
    """
    paths = ranking.paths if isinstance(ranking, Ranking) else list(ranking)
    pos = set(positives)
    if not pos:
        raise PositivesNotRanked("no positives given")
    missing = pos - set(paths)
    if missing:
        raise PositivesNotRanked(f"positives not in ranking: {sorted(missing)[:5]}")
    n = len(paths)
    # cumulative true positives by depth
    cum = [0]
    for p in paths:
        cum.append(cum[-1] + (p in pos))
    first = next(i for i, p in enumerate(paths, 1) if p in pos)
    ks = sorted(set(ks))
    tp = {k: cum[min(k, n)] for k in ks}
    return MetricsRow(
        issue=issue,
        hit={k: int(tp[k] >= 1) for k in ks},
        precision={k: tp[k] / min(k, n) for k in ks},
        recall={k: tp[k] / len(pos) for k in ks},
        r_precision=cum[len(pos)] / len(pos),
        reciprocal_rank=1 / first,
        first_positive_rank=first,
        true_positives=tp,
        n_positives=len(pos),
        n_ranked=n,
    )


_METRIC_NAME = re.compile(r"^(?:(?:p|r|hit)@\d+|rp|mrr)$")


@dataclass(frozen=True)
class AggregateReport:
    means: dict[str, float]
    count: int


def aggregate(rows: Sequence[MetricsRow | Mapping[str, float]]) -> AggregateReport:
    """Arithmetic mean of every metric; ``mrr`` is the mean reciprocal rank."""
    if not rows:
        raise EmptyInput("no metric rows to aggregate")
    flats = [r.flat() if isinstance(r, MetricsRow) else dict(r) for r in rows]
    names = [m for m in flats[0] if _METRIC_NAME.match(m)]
    means = {m: math.fsum(f[m] for f in flats) / len(flats) for m in names}
    return AggregateReport(means, len(flats))


def row_to_json(row: MetricsRow, model: str, issue_type: str = "", **extra) -> dict:
    obj = {"issue": str(row.issue), "model": model, "issue_type": issue_type,
           "first_positive_rank": row.first_positive_rank,
           "n_positives": row.n_positives, "n_ranked": row.n_ranked}
    obj.update(row.flat())
    obj.update(extra)
    return obj


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


METRIC_ORDER = ("p@1", "p@5", "p@10", "hit@1", "hit@5", "hit@10",
                "r@1", "r@5", "r@10", "rp", "mrr")


def format_table(columns: Mapping[str, AggregateReport], digits: int = 3) -> str:
    """CSV with one row per metric and one column per model (or project)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = list(columns)
    writer.writerow(["metric", *names])
    present = [m for m in METRIC_ORDER if any(m in r.means for r in columns.values())]
    for metric in present:
        writer.writerow([metric, *(
            f"{columns[n].means[metric]:.{digits}f}" if metric in columns[n].means else ""
            for n in names)])
    writer.writerow(["n", *(columns[n].count for n in names)])
    return buf.getvalue()
