"""Issue-type and identifier analyses: Kruskal-Wallis with epsilon-squared,
Conover-Iman post-hoc comparisons and Spearman correlation."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as _dist

from .errors import DegenerateInput, InsufficientGroups, LengthMismatch

CATEGORIES = ("Bug", "New Feature", "Improvement", "Task", "Other")
STAT_METRICS = ("p@1", "p@5", "p@10", "r@1", "r@5", "r@10", "rp", "mrr")
ALPHA = 0.05


@dataclass(frozen=True)
class TypeMapping:
    table: Mapping[str, str] = field(default_factory=lambda: {
        "Bug": "Bug", "New Feature": "New Feature", "Improvement": "Improvement", "Task": "Task",
    })

    def __post_init__(self):
        bad = {c for c in self.table.values() if c not in CATEGORIES}
        if bad:
            raise ValueError(f"unknown categories {sorted(bad)}; expected {CATEGORIES}")

    def category(self, raw_type: str) -> str:
        if raw_type in self.table:
            return self.table[raw_type]
        folded = {k.casefold(): v for k, v in self.table.items()}
        return folded.get((raw_type or "").strip().casefold(), "Other")


def consolidate_types(issues: Iterable, mapping: TypeMapping | None = None) -> dict:
    """Map each issue (or sample) key to its category via ``raw_type``/``issue_type``."""
    mapping = mapping or TypeMapping()
    out = {}
    for item in issues:
        raw = getattr(item, "raw_type", None)
        if raw is None:
            raw = getattr(item, "issue_type", "")
        key = getattr(item, "key", None) or getattr(item, "issue")
        out[key] = mapping.category(raw)
    return out


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2
        i = j + 1
    return ranks


def _tie_sizes(ranks: np.ndarray) -> np.ndarray:
    _, counts = np.unique(ranks, return_counts=True)
    return counts[counts > 1].astype(float)


@dataclass(frozen=True)
class GroupTestResult:
    H: float
    p: float
    epsilon_sq: float
    group_sizes: tuple[int, ...]
    labels: tuple[str, ...] = ()
    small_groups: bool = False

    @property
    def significant(self) -> bool:
        return self.p < ALPHA


def _normalise_groups(groups) -> tuple[list[str], list[np.ndarray]]:
    if isinstance(groups, Mapping):
        labels = [str(k) for k in groups]
        values = [np.asarray(list(v), dtype=float) for v in groups.values()]
    else:
        values = [np.asarray(list(v), dtype=float) for v in groups]
        labels = [str(i) for i in range(len(values))]
    if len(values) < 2:
        raise DegenerateInput("at least two groups are required")
    if any(len(v) == 0 for v in values):
        raise DegenerateInput("groups must be non-empty")
    if sum(len(v) for v in values) < 3:
        raise DegenerateInput("at least three observations are required")
    return labels, values


def kruskal_wallis(groups) -> GroupTestResult:
    """Tie-corrected Kruskal-Wallis H with chi-square p-value and epsilon-squared."""
    labels, values = _normalise_groups(groups)
    sizes = np.array([len(v) for v in values], dtype=float)
    n = sizes.sum()
    ranks = average_ranks(np.concatenate(values))
    bounds = np.cumsum(sizes).astype(int)
    rank_sums = np.array([r.sum() for r in np.split(ranks, bounds[:-1])])
    h = 12.0 / (n * (n + 1)) * np.sum(rank_sums ** 2 / sizes) - 3.0 * (n + 1)
    ties = _tie_sizes(ranks)
    correction = 1.0 - np.sum(ties ** 3 - ties) / (n ** 3 - n)
    if correction <= 0:
        h, p = 0.0, 1.0
    else:
        h = max(h / correction, 0.0)
        p = float(_dist.chi2.sf(h, len(values) - 1))
    eps = h * (n + 1) / (n ** 2 - 1)
    return GroupTestResult(float(h), min(max(p, 0.0), 1.0), float(eps),
                           tuple(int(s) for s in sizes), tuple(labels), bool((sizes < 5).any()))


@dataclass(frozen=True)
class PosthocMatrix:
    labels: tuple[str, ...]
    p_values: np.ndarray

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = (self.labels.index(x) for x in pair)
        return float(self.p_values[i, j])


def conover_posthoc(groups) -> PosthocMatrix:
    """Two-sided Conover-Iman pairwise p-values (no multiplicity adjustment)."""
    labels, values = _normalise_groups(groups)
    k = len(values)
    sizes = np.array([len(v) for v in values], dtype=float)
    n = sizes.sum()
    if n - k <= 0:
        raise DegenerateInput("Conover's test needs more observations than groups")
    ranks = average_ranks(np.concatenate(values))
    bounds = np.cumsum(sizes).astype(int)
    mean_ranks = np.array([r.mean() for r in np.split(ranks, bounds[:-1])])
    h = kruskal_wallis(values).H
    s2 = (np.sum(ranks ** 2) - n * (n + 1) ** 2 / 4) / (n - 1)
    scale = s2 * (n - 1 - h) / (n - k)
    out = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            diff = abs(mean_ranks[i] - mean_ranks[j])
            denom = scale * (1 / sizes[i] + 1 / sizes[j])
            if diff == 0:
                p = 1.0
            elif denom <= 0:
                p = 0.0
            else:
                p = float(2 * _dist.t.sf(diff / math.sqrt(denom), n - k))
            out[i, j] = out[j, i] = p
    return PosthocMatrix(tuple(labels), out)


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p: float
    n: int
    method: str = "t-approximation"

    @property
    def significant(self) -> bool:
        return self.p < ALPHA


def spearman(xs: Sequence[float], ys: Sequence[float]) -> CorrelationResult:
    """Spearman's rho on average ranks; p from the t distribution with n - 2 df."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} vs {len(ys)} values")
    n = len(xs)
    if n < 3:
        raise DegenerateInput("at least three pairs are required")
    rx, ry = average_ranks(xs), average_ranks(ys)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise DegenerateInput("rho is undefined for constant input")
    rho = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / ((1 - rho) * (1 + rho)))
        p = float(2 * _dist.t.sf(abs(t), n - 2))
    return CorrelationResult(rho, p, n)


# --- identifier counting -----------------------------------------------------

_CAMEL = r"(?<![A-Za-z0-9_])(?:[a-z][a-z0-9]*(?:[A-Z][a-zA-Z0-9]*)+|[A-Z][a-z0-9]+(?:[A-Z][a-zA-Z0-9]*)+)(?![A-Za-z0-9_])"
_CALL = r"(?<![A-Za-z0-9_])[A-Za-z_][A-Za-z0-9_]*\(\)"


def identifier_patterns(extensions: Iterable[str]) -> list[re.Pattern]:
    exts = "|".join(sorted((re.escape(e) for e in extensions), key=len, reverse=True))
    filename = rf"(?<![A-Za-z0-9_\-.])[A-Za-z0-9_\-]+\.(?:{exts})(?![A-Za-z0-9_])"
    return [re.compile(_CAMEL), re.compile(_CALL), re.compile(filename, re.I)]


def count_identifiers(text: str, extensions: Iterable[str] | None = None,
                      patterns: Sequence[re.Pattern] | None = None) -> int:
    """Count camelCase identifiers, ``name()`` calls and source file names.

    Overlapping matches from different patterns are resolved leftmost-longest
    and counted once.
    """
    if patterns is None:
        from .dataset import DEFAULT_EXTENSIONS
        patterns = identifier_patterns(extensions or DEFAULT_EXTENSIONS)
    spans = sorted({(m.start(), m.end()) for p in patterns for m in p.finditer(text)},
                   key=lambda s: (s[0], -s[1]))
    count, covered = 0, -1
    for start, end in spans:
        if start >= covered:
            count += 1
            covered = end
    return count


# --- effect size labels ------------------------------------------------------

def epsilon_label(eps: float) -> str:
    if eps < 0.01:
        return "negligible"
    if eps < 0.06:
        return "small"
    if eps < 0.14:
        return "medium"
    return "large"


def rho_label(rho: float) -> str:
    r = abs(rho)
    for bound, label in ((0.2, "very weak"), (0.4, "weak"), (0.6, "moderate"), (0.8, "strong")):
        if r < bound:
            return label
    return "very strong"


def bin_effect_sizes(result) -> str:
    """Magnitude label for a group test (epsilon-squared) or correlation (|rho|)."""
    if isinstance(result, GroupTestResult):
        return epsilon_label(result.epsilon_sq)
    if isinstance(result, CorrelationResult):
        return rho_label(result.rho)
    raise TypeError(f"cannot bin {type(result).__name__}")


def format_cell(result, digits: int | None = None) -> str:
    """Effect size (or rho) with a trailing ``*`` when significant at ALPHA."""
    if isinstance(result, GroupTestResult):
        value, digits = result.epsilon_sq, digits or 3
    else:
        value, digits = result.rho, digits or 2
    return f"{value:.{digits}f}" + ("*" if result.p < ALPHA else "")


# --- grouped comparisons -----------------------------------------------------

@dataclass(frozen=True)
class GroupedComparison:
    metric: str
    mode: str
    test: GroupTestResult
    posthoc: PosthocMatrix | None


def holdout_compare(rows: Sequence[Mapping[str, float]], categories: Sequence[str],
                    mode: str = "isolate", metrics: Sequence[str] = STAT_METRICS,
                    include: Iterable[str] | None = None) -> dict[str, GroupedComparison]:
    """Kruskal-Wallis across issue types, per metric.

    ``isolate`` groups rows by category; ``holdout`` builds, for each category,
    the group of all rows *not* of that category. hit@k metrics are never
    tested. Conover's post-hoc matrix is attached when the test is significant.
    """
    if mode not in ("isolate", "holdout"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(rows) != len(categories):
        raise LengthMismatch("rows and categories differ in length")
    present = sorted(set(categories) if include is None else set(categories) & set(include),
                     key=lambda c: CATEGORIES.index(c) if c in CATEGORIES else len(CATEGORIES))
    if len(present) < 2:
        raise InsufficientGroups(f"need at least two issue categories, found {present}")
    results = {}
    for metric in metrics:
        if metric.startswith("hit@"):
            continue
        groups: dict[str, list[float]] = {}
        for cat in present:
            if mode == "isolate":
                groups[cat] = [r[metric] for r, c in zip(rows, categories) if c == cat]
            else:
                groups[f"without {cat}"] = [r[metric] for r, c in zip(rows, categories)
                                            if c != cat and c in present]
        test = kruskal_wallis(groups)
        posthoc = None
        if test.significant:
            try:
                posthoc = conover_posthoc(groups)
            except DegenerateInput:
                posthoc = None
        results[metric] = GroupedComparison(metric, mode, test, posthoc)
    return results
