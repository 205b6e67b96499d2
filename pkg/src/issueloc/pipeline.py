"""End-to-end stages behind the CLI subcommands.

Each stage reads its inputs from disk, writes its artifacts into the output
directory in a deterministic order, and returns a small summary dict.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import analysis
from .commit_graph import ancestor_sets, load_history
from .config import RunConfig, parse_model
from .dataset import (BuildStats, build_dataset, commit_size_distribution, dataset_summary,
                      read_dataset, read_issues, write_dataset)
from .errors import DataError, DegenerateInput, InsufficientGroups
from .evaluation import (METRIC_ORDER, AggregateReport, aggregate, format_table,
                         metrics_for_issue, read_metrics, row_to_json, temporal_split)
from .gitio import Repo
from .links import read_links, refine_links, write_links
from .retrieval import ModelConfig, SnapshotCache, build_index, score
from .text import PreprocessConfig, preprocess_file, preprocess_issue, preprocess_text

log = logging.getLogger(__name__)


def _out(cfg: RunConfig) -> Path:
    cfg.output.mkdir(parents=True, exist_ok=True)
    return cfg.output


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_meta(cfg: RunConfig, stage: str) -> None:
    path = _out(cfg) / "run_meta.json"
    meta = json.loads(path.read_text()) if path.exists() else {}
    meta.update(project=cfg.project, head=cfg.head)
    meta.setdefault("stages", [])
    if stage not in meta["stages"]:
        meta["stages"].append(stage)
    _write_json(path, meta)


# --- mine / build ------------------------------------------------------------

def run_mine(cfg: RunConfig) -> dict:
    cfg.require("repo", "project", "issues")
    issues = read_issues(cfg.issues)
    graph = load_history(cfg.repo, cfg.head)
    refined = refine_links(graph, ancestor_sets(graph), cfg.project, issues.keys())
    out = _out(cfg)
    write_links(refined, out / "links.jsonl")
    report = refined.report.as_dict()
    _write_json(out / "mining_report.json", report)
    _write_meta(cfg, "mine")
    return report


def run_build(cfg: RunConfig, links_path: Path | None = None) -> dict:
    cfg.require("repo", "issues")
    links_path = Path(links_path or cfg.output / "links.jsonl")
    if not links_path.is_file():
        raise DataError(f"links file not found: {links_path}")
    links = read_links(links_path)
    issues = read_issues(cfg.issues)
    repo = Repo(cfg.repo)
    graph = load_history(cfg.repo, cfg.head)
    unknown = [str(link.issue) for link in links for c in link.commits if c not in graph]
    if unknown:
        raise DataError(f"links reference commits outside {cfg.head}: {unknown[:3]}")
    stats = BuildStats()
    samples = build_dataset(graph, ancestor_sets(graph), links, issues, cfg.extensions, repo,
                            workers=cfg.workers, stats=stats)
    if not samples:
        log.warning("dataset is empty: no linked issue changed a source file")
    out = _out(cfg)
    write_dataset(samples, out / "dataset.jsonl")
    summary = dataset_summary(samples)
    summary["discarded"] = len(stats.discarded)
    summary["flagged"] = [str(k) for k in stats.flagged]
    _write_json(out / "dataset_summary.json", summary)

    sizes = commit_size_distribution(links, repo, graph)
    with open(out / "commit_sizes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["position", "issues", "mean_share", "median_share"])
        for pos in sorted(sizes):
            shares = sizes[pos]
            writer.writerow([pos, len(shares), f"{statistics.fmean(shares):.6f}",
                             f"{statistics.median(shares):.6f}"])
    _write_meta(cfg, "build")
    return summary


# --- evaluate ----------------------------------------------------------------

def evaluate_samples(samples: Sequence, repo_path, preprocess: PreprocessConfig, ext_filter,
                     models: Sequence[ModelConfig], rankings: list | None = None) -> list[dict]:
    """Metric rows for every (model, sample) pair, ordered by model then input order."""
    repo = Repo(repo_path)
    cache = SnapshotCache(repo, ext_filter, preprocess)
    per_model: dict[str, list[dict]] = {m.label: [] for m in models}
    per_model_rankings: dict[str, list[dict]] = {m.label: [] for m in models}
    for sample in samples:
        index = cache.index(sample.snapshot.commit)
        query = preprocess_issue(sample, preprocess)
        for model in models:
            ranking = score(query, index, model)
            row = metrics_for_issue(ranking, sample.positives, issue=sample.issue)
            per_model[model.label].append(row_to_json(row, model.label, sample.issue_type))
            if rankings is not None:
                per_model_rankings[model.label].append(
                    {"issue": str(sample.issue), "model": model.label, "ranking": ranking.to_json()})
    if rankings is not None:
        rankings.extend(r for m in models for r in per_model_rankings[m.label])
    return [row for m in models for row in per_model[m.label]]


def _evaluate_chunk(args) -> tuple[list[dict], list | None]:
    samples, repo_path, preprocess, ext_filter, models, keep = args
    rankings = [] if keep else None
    return evaluate_samples(samples, repo_path, preprocess, ext_filter, models, rankings), rankings


def _evaluate_parallel(samples, cfg: RunConfig, preprocess, models, keep_rankings: bool):
    # chunks stay contiguous so snapshot caches get reused and output order is fixed
    workers = min(cfg.workers, max(len(samples), 1))
    if workers <= 1:
        rankings = [] if keep_rankings else None
        return evaluate_samples(samples, cfg.repo, preprocess, cfg.extensions, models, rankings), rankings
    size = -(-len(samples) // workers)
    chunks = [samples[i:i + size] for i in range(0, len(samples), size)]
    with ProcessPoolExecutor(workers) as pool:
        parts = list(pool.map(_evaluate_chunk, [
            (chunk, cfg.repo, preprocess, cfg.extensions, models, keep_rankings) for chunk in chunks]))
    rows = [row for m in models for rows_, _ in parts for row in rows_ if row["model"] == m.label]
    rankings = None
    if keep_rankings:
        rankings = [r for m in models for _, rk in parts for r in rk if r["model"] == m.label]
    return rows, rankings


def _aggregates(rows: list[dict], labels: Sequence[str]) -> dict[str, AggregateReport]:
    out = {}
    for label in labels:
        selected = [{m: r[m] for m in METRIC_ORDER if m in r} for r in rows if r["model"] == label]
        if selected:
            out[label] = aggregate(selected)
    return out


def run_evaluate(cfg: RunConfig, dataset_path: Path | None = None, split: str | None = None,
                 save_rankings: bool = False, grid: bool = False) -> dict:
    cfg.require("repo")
    dataset_path = Path(dataset_path or cfg.output / "dataset.jsonl")
    if not dataset_path.is_file():
        raise DataError(f"dataset not found: {dataset_path}")
    samples = read_dataset(dataset_path)
    out = _out(cfg)
    split = split or cfg.split_use
    if not samples:
        log.warning("empty dataset; nothing to evaluate")
        (out / "metrics.jsonl").write_text("")
        (out / "aggregate.csv").write_text(format_table({}))
        return {"evaluated": 0}

    graph = load_history(cfg.repo, cfg.head)
    missing = [s.snapshot.diff_commit for s in samples if s.snapshot.diff_commit not in graph]
    if missing:
        raise DataError(f"dataset commits not reachable from {cfg.head}: {missing[:3]}")
    parts = temporal_split(samples, lambda c: graph.records[c].author_time, cfg.split_ratio)
    _write_json(out / "split.json", {
        "boundary_time": parts.boundary_time,
        "validation": [str(s.issue) for s in parts.validation],
        "test": [str(s.issue) for s in parts.test],
    })
    chosen = {"validation": parts.validation, "test": parts.test,
              "all": parts.validation + parts.test}[split]

    rows, rankings = _evaluate_parallel(chosen, cfg, cfg.preprocess, cfg.models, save_rankings)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if rankings is not None:
        with open(out / "rankings.jsonl", "w", encoding="utf-8") as fh:
            for r in rankings:
                fh.write(json.dumps(r) + "\n")
    aggregates = _aggregates(rows, cfg.model_labels)
    (out / "aggregate.csv").write_text(format_table(aggregates), encoding="utf-8")

    if grid and cfg.grid:
        _run_grid(cfg, parts.validation, out)
    _write_meta(cfg, "evaluate")
    return {"evaluated": len(chosen), "split": split,
            "mrr": {k: v.means["mrr"] for k, v in aggregates.items()}}


def _describe(pre: PreprocessConfig) -> str:
    flags = [pre.markup_mode.value]
    flags += [name for name in ("lowercase", "stem", "subtoken_split") if getattr(pre, name)]
    return "+".join(flags)


def _run_grid(cfg: RunConfig, validation: Sequence, out: Path) -> None:
    with open(out / "grid.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["preprocess", "model", *METRIC_ORDER])
        for pre in cfg.grid:
            rows, _ = _evaluate_parallel(list(validation), cfg, pre, cfg.models, False)
            for label, report in _aggregates(rows, cfg.model_labels).items():
                writer.writerow([_describe(pre), label,
                                 *(f"{report.means[m]:.6f}" for m in METRIC_ORDER)])


# --- rank --------------------------------------------------------------------

def run_rank(cfg: RunConfig, commit: str, issue_text: str, k: int | None = None,
             model: str | None = None) -> list[tuple[str, float]]:
    """Rank the source files of ``commit``'s tree against free issue text."""
    cfg.require("repo")
    repo = Repo(cfg.repo)
    sha = repo.resolve(commit)
    model_cfg = parse_model(model, cfg.raw["bm25"]) if model else cfg.models[0]
    files = {p: b for p, b in repo.ls_files(sha).items() if cfg.extensions.matches(p)}
    blobs = repo.read_blobs(list(files.values()))
    docs = [preprocess_file(p, blobs[b], cfg.preprocess) for p, b in sorted(files.items())]
    ranking = score(preprocess_text(issue_text, cfg.preprocess), build_index(docs), model_cfg)
    return ranking.top(k or cfg.top_k)


# --- analyze -----------------------------------------------------------------

def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def run_analyze(cfg: RunConfig, metrics_path: Path | None = None,
                dataset_path: Path | None = None, model: str | None = None) -> dict:
    metrics_path = Path(metrics_path or cfg.output / "metrics.jsonl")
    dataset_path = Path(dataset_path or cfg.output / "dataset.jsonl")
    for p in (metrics_path, dataset_path):
        if not p.is_file():
            raise DataError(f"input not found: {p}")
    rows = read_metrics(metrics_path)
    models = sorted({r["model"] for r in rows})
    model = model or (cfg.analysis_model if cfg.analysis_model in models else (models[0] if models else None))
    rows = [r for r in rows if r["model"] == model]
    if not rows:
        raise DataError(f"no metric rows for model {model!r}")
    texts = {str(s.issue): s.text for s in read_dataset(dataset_path)}
    categories = [cfg.type_mapping.category(r["issue_type"]) for r in rows]
    project = cfg.project or "project"
    out = _out(cfg)
    metrics = [m for m in analysis.STAT_METRICS if m in rows[0]]
    warnings = []

    cells: dict[str, dict[str, str]] = {}
    detail, posthoc_rows, perf_rows = [], [], []
    for mode in ("isolate", "holdout"):
        cells[mode] = {}
        try:
            results = analysis.holdout_compare(rows, categories, mode, metrics,
                                               include=cfg.analysis_categories)
        except (InsufficientGroups, DegenerateInput) as exc:
            warnings.append(f"{mode}: {exc}")
            log.warning("%s comparison skipped: %s", mode, exc)
            cells[mode] = {m: "skipped" for m in metrics}
            continue
        for metric, res in results.items():
            t = res.test
            cells[mode][metric] = analysis.format_cell(t)
            detail.append([mode, metric, f"{t.H:.9g}", f"{t.p:.9g}", f"{t.epsilon_sq:.9g}",
                           analysis.epsilon_label(t.epsilon_sq), int(t.significant),
                           " ".join(f"{lab}={n}" for lab, n in zip(t.labels, t.group_sizes)),
                           int(t.small_groups)])
            if res.posthoc is not None:
                labs = res.posthoc.labels
                for i in range(len(labs)):
                    for j in range(i + 1, len(labs)):
                        posthoc_rows.append([mode, metric, labs[i], labs[j],
                                             f"{res.posthoc.p_values[i, j]:.9g}"])
        for cat in [c for c in analysis.CATEGORIES if c in cfg.analysis_categories]:
            if mode == "isolate":
                group = [r for r, c in zip(rows, categories) if c == cat]
            else:
                group = [r for r, c in zip(rows, categories) if c != cat and c in cfg.analysis_categories]
            label = cat if mode == "isolate" else f"without {cat}"
            for metric in metrics:
                if group:
                    perf_rows.append([mode, label, metric,
                                      f"{statistics.fmean(r[metric] for r in group):.6f}", len(group)])

    for mode in ("isolate", "holdout"):
        _write_rows(out / f"kw_{mode}.csv", ["metric", project],
                    [[m, cells[mode].get(m, "")] for m in metrics])
    _write_rows(out / "kw_detail.csv", ["mode", "metric", "H", "p", "epsilon_sq", "effect",
                                        "significant", "groups", "small_groups"], detail)
    _write_rows(out / "posthoc.csv", ["mode", "metric", "group_a", "group_b", "p"], posthoc_rows)
    _write_rows(out / "type_performance.csv", ["mode", "group", "metric", "mean", "n"], perf_rows)

    counts = [analysis.count_identifiers(texts.get(r["issue"], ""), cfg.extensions.allowed) for r in rows]
    corr_cells, corr_rows = {}, []
    scopes = [("all", None)] + [(c, c) for c in analysis.CATEGORIES if c in cfg.analysis_categories]
    for scope, cat in scopes:
        idx = [i for i, c in enumerate(categories) if cat is None or c == cat]
        for metric in metrics:
            xs = [counts[i] for i in idx]
            ys = [rows[i][metric] for i in idx]
            try:
                res = analysis.spearman(xs, ys)
            except DegenerateInput as exc:
                corr_rows.append([scope, metric, "undefined", "undefined", len(idx), "undefined", 0, str(exc)])
                if cat is None:
                    corr_cells[metric] = "undefined"
                continue
            corr_rows.append([scope, metric, f"{res.rho:.9g}", f"{res.p:.9g}", res.n,
                              analysis.rho_label(res.rho), int(res.significant), res.method])
            if cat is None:
                corr_cells[metric] = analysis.format_cell(res)
    _write_rows(out / "correlation.csv", ["metric", project],
                [[m, corr_cells.get(m, "")] for m in metrics])
    _write_rows(out / "correlation_detail.csv",
                ["scope", "metric", "rho", "p", "n", "strength", "significant", "method"], corr_rows)
    _write_rows(out / "identifier_counts.csv", ["issue", "category", "identifiers"],
                [[r["issue"], c, n] for r, c, n in zip(rows, categories, counts)])
    _write_meta(cfg, "analyze")
    return {"model": model, "rows": len(rows), "warnings": warnings,
            "kw_isolate": cells.get("isolate", {}), "correlation": corr_cells}


# --- report ------------------------------------------------------------------

def _read_json(path: Path):
    return json.loads(path.read_text()) if path.is_file() else None


def run_report(dirs: Sequence[Path], output: Path | None = None) -> str:
    """Combine per-project output directories into dataset and performance tables."""
    projects = []
    for d in dirs:
        d = Path(d)
        meta = _read_json(d / "run_meta.json") or {}
        projects.append((meta.get("project") or d.name, d))

    lines = ["# Dataset", ""]
    header = ["project", "unknown", "max_linkable", "linked", "in_dataset",
              "files_min", "files_max", "files_mean", "files_median",
              "pos_min", "pos_max", "pos_mean", "pos_median"]
    table2 = []
    for name, d in projects:
        mining = _read_json(d / "mining_report.json") or {}
        summary = _read_json(d / "dataset_summary.json") or {}
        f = summary.get("files_per_issue", {})
        p = summary.get("positives_per_issue", {})

        def fmt(v):
            return "" if v is None else (f"{v:.1f}" if isinstance(v, float) else str(v))

        table2.append([name, fmt(mining.get("unknown_issues")), fmt(mining.get("max_linkable")),
                       fmt(mining.get("linked")), fmt(summary.get("in_dataset")),
                       *(fmt(f.get(k)) for k in ("min", "max", "mean", "median")),
                       *(fmt(p.get(k)) for k in ("min", "max", "mean", "median"))])
    lines.append(",".join(header))
    lines += [",".join(r) for r in table2]

    all_rows, per_project = [], {}
    for name, d in projects:
        if (d / "metrics.jsonl").is_file():
            rows = read_metrics(d / "metrics.jsonl")
            all_rows += rows
            per_project[name] = rows
    labels = list(dict.fromkeys(r["model"] for r in all_rows))
    flags = []
    if all_rows:
        by_model = _aggregates(all_rows, labels)
        lines += ["", "# Performance per model (all projects)", "", format_table(by_model).rstrip()]
        project_tables = {}
        for name, rows in per_project.items():
            models = _aggregates(rows, labels)
            means = {m: statistics.fmean(r.means[m] for r in models.values())
                     for m in next(iter(models.values())).means}
            project_tables[name] = AggregateReport(means, len(rows) // max(len(models), 1))
            if "bm25" in models and "rvsm" in models:
                ok = models["bm25"].means["mrr"] >= models["rvsm"].means["mrr"]
                flags.append(f"{name}: BM25 MRR {models['bm25'].means['mrr']:.3f} "
                             f"{'>=' if ok else '<'} rVSM MRR {models['rvsm'].means['mrr']:.3f}"
                             f"{'' if ok else '  (unexpected ordering)'}")
        lines += ["", "# Performance per project (mean over models)", "",
                  format_table(project_tables).rstrip()]
    if flags:
        lines += ["", "# Directional check (BM25 vs rVSM)", "", *flags]

    for stem in ("kw_isolate", "kw_holdout", "correlation"):
        merged: dict[str, dict[str, str]] = {}
        names = []
        for name, d in projects:
            path = d / f"{stem}.csv"
            if not path.is_file():
                continue
            names.append(name)
            with open(path, encoding="utf-8") as fh:
                for row in list(csv.reader(fh))[1:]:
                    merged.setdefault(row[0], {})[name] = row[1]
        if merged:
            lines += ["", f"# {stem}", "", ",".join(["metric", *names])]
            lines += [",".join([m, *(merged[m].get(n, "") for n in names)]) for m in merged]

    text = "\n".join(lines) + "\n"
    if output is not None:
        output.mkdir(parents=True, exist_ok=True)
        (output / "report.txt").write_text(text, encoding="utf-8")
    return text
