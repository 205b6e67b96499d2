"""Acceptance criteria; each test prints one PASS/FAIL line."""

import itertools
import math
import random
import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest
import scipy.stats

from conftest import DATA, FIG2_CASES, FIG2_COMMITS, FIG3_COMMITS, FIG3_SETS, describe, make_graph
from issueloc.analysis import conover_posthoc, kruskal_wallis, spearman
from issueloc.cli import main
from issueloc.commit_graph import ancestor_sets, load_history, path_requirement, unique_entry_point
from issueloc.evaluation import metrics_for_issue
from issueloc.links import IssueKey, LinkRecord, refine_links
from issueloc.retrieval import (bm25_idf, bm25_scores, bm25_term_score, build_index, cosine_scores,
                                length_boost, lsi_scores, smooth_idf, ModelConfig, Ranking)
from issueloc.synthetic import build_repo
from issueloc.text import Document

sp = pytest.importorskip("scikit_posthocs")


@pytest.fixture
def verdict(capsys, request):
    """Print PASS/FAIL for the criterion, then fail the test if needed."""

    def report(ok, detail=""):
        name = request.node.name.removeprefix("test_")
        line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line

    return report


def random_corpus(rng, max_docs=15, max_terms=30):
    n_terms = rng.randint(2, max_terms)
    vocab = [f"t{i}" for i in range(n_terms)]
    docs = [Document(f"f{i:02d}.java", (f"n{i}",), tuple(rng.choices(vocab, k=rng.randint(1, 25))))
            for i in range(rng.randint(1, max_docs))]
    query = rng.choices(vocab + ["unseen"], k=rng.randint(1, 8))
    return build_index(docs), query


def order(paths, scores):
    return Ranking.from_scores(paths, scores).paths


# --- commit graph ------------------------------------------------------------

def test_figure2_suite(tmp_path, verdict):
    start = time.perf_counter()
    shas = build_repo(tmp_path / "fig2", describe(FIG2_COMMITS), head="c16")
    graph = load_history(tmp_path / "fig2")
    anc = ancestor_sets(graph)
    got = {case: path_requirement(graph, anc, [shas[c] for c in linked]).accepted
           for case, (linked, _) in FIG2_CASES.items()}
    elapsed = time.perf_counter() - start
    expected = {case: exp for case, (_, exp) in FIG2_CASES.items()}
    verdict(got == expected and elapsed < 1.0,
            f"{''.join('A' if got[c] else 'R' for c in sorted(got))} in {elapsed:.3f}s")


def test_figure3_suite(verdict):
    graph = make_graph(FIG3_COMMITS, head="M3")
    anc = ancestor_sets(graph)
    sets_ok = {c: set(s) for c, s in anc.sets.items()} == FIG3_SETS
    m1 = unique_entry_point(graph, anc, "M1")
    m3 = unique_entry_point(graph, anc, "M3")
    verdict(sets_ok and m1 == ("5", "2") and m3 is None, f"sets={sets_ok} M1={m1} M3={m3}")


def test_merge_disambiguation(verdict):
    def refine(summaries, keys):
        g = make_graph(FIG3_COMMITS, head="M3", summaries=summaries)
        return refine_links(g, ancestor_sets(g), "P", [IssueKey("P", k) for k in keys])

    # branch unlinked: the merge keeps its link
    kept = refine({"M1": "P-1 merge feature"}, [1])
    case1 = kept.links == [LinkRecord(IssueKey("P", 1), ("M1",))]
    # branch linked: the merge link goes, an issue left with nothing is dropped
    dropped = refine({"5": "P-1 branch work", "M1": "Merge P-2"}, [1, 2])
    case2 = (dropped.links == [LinkRecord(IssueKey("P", 1), ("5",))]
             and dropped.report.discarded_merge == 1)
    verdict(case1 and case2, f"unlinked-branch={case1} linked-branch={case2}")


# --- formulas ----------------------------------------------------------------

def test_formula_oracles(verdict):
    mpmath.mp.dps = 50
    rng = random.Random(20240)
    m = mpmath.mpf
    worst = 0.0

    def rel(got, exact):
        exact = float(exact)
        return abs(got - exact) / abs(exact) if exact else abs(got)

    tuples = 0
    for _ in range(250):
        N = rng.randint(1, 10**6)
        n = rng.randint(0, N)
        tf = rng.randint(0, 300)
        length = rng.randint(1, 5000)
        avg = rng.uniform(1, 5000)
        k1, b, delta = rng.uniform(0.1, 3), rng.random(), rng.uniform(0, 2)
        lo, hi = sorted(rng.sample(range(0, 10**5), 2))
        x = rng.randint(lo, hi)
        worst = max(
            worst,
            rel(smooth_idf(N, n), mpmath.log((m(N) + 1) / (m(n) + 1)) + 1),
            rel(bm25_idf(N, n), mpmath.log((m(N) - n + m("0.5")) / (m(n) + m("0.5")) + 1)),
            rel(bm25_term_score(tf, length, avg, k1, b, delta),
                (m(k1) + 1) * tf / (tf + m(k1) * (1 - m(b) + m(b) * length / m(avg))) + m(delta)),
            rel(length_boost(x, lo, hi), 1 / (1 + mpmath.exp(-(m(x) - lo) / (hi - lo)))),
        )
        tuples += 1
    verdict(tuples >= 100 and worst <= 1e-9, f"{tuples} tuples, worst relative error {worst:.2e}")


# --- metrics -----------------------------------------------------------------

def test_metric_oracle(verdict):
    docs = "abcdef"
    cases = mismatches = 0
    for perm in itertools.permutations(docs):
        for r in range(1, len(docs) + 1):
            for pos in itertools.combinations(docs, r):
                pos = set(pos)
                row = metrics_for_issue(list(perm), pos)
                cases += 1
                first = next(i for i, d in enumerate(perm, 1) if d in pos)
                ok = row.first_positive_rank == first and row.reciprocal_rank == float(Fraction(1, first))
                for k in row.hit:
                    tp = sum(d in pos for d in perm[:k])
                    prec = Fraction(tp, min(k, len(perm)))
                    ok &= (row.true_positives[k] == tp
                           and Fraction(tp, min(k, row.n_ranked)) == prec
                           and row.precision[k] == float(prec)
                           and row.recall[k] == float(Fraction(tp, len(pos)))
                           and row.hit[k] == (tp > 0))
                rp = Fraction(sum(d in pos for d in perm[:len(pos)]), len(pos))
                ok &= row.r_precision == float(rp)
                mismatches += not ok
    verdict(cases == 720 * 63 and mismatches == 0, f"{cases} cases, {mismatches} mismatches")


# --- retrieval ---------------------------------------------------------------

def test_lsi_equivalence(verdict):
    rng = random.Random(7)
    worst, same = 0.0, 0
    for _ in range(20):
        idx, query = random_corpus(rng)
        lsi = lsi_scores(query, idx, idx.N + len(idx.df))
        vsm = cosine_scores(query, idx)
        worst = max(worst, max(abs(a - b) for a, b in zip(lsi, vsm)))
        # scores that agree to 1e-9 are the same score; round before ordering
        same += order(idx.paths, np.round(lsi, 9)) == order(idx.paths, np.round(vsm, 9))
    verdict(same == 20 and worst <= 1e-6, f"{same}/20 orderings equal, max |diff| {worst:.1e}")


@pytest.mark.xfail(strict=True, reason=(
    "per-document matched-only delta is not a constant shift: it differs from the unconditional "
    "form by delta times the IDF of the query terms a document lacks; see the counterexample below"))
def test_bm25_shift_invariance(verdict):
    rng = random.Random(11)
    same = 0
    for _ in range(100):
        idx, query = random_corpus(rng)
        full = bm25_scores(query, idx)
        matched = bm25_scores(query, idx, delta_matched_only=True)
        same += order(idx.paths, full) == order(idx.paths, matched)
    verdict(same == 100, f"{same}/100 orderings equal")


def test_bm25_matched_only_counterexample():
    idx = build_index([Document("a.py", (), tuple("xwz")), Document("b.py", (), ("z",)),
                       Document("c.py", (), ("y",))])
    query = ["z", "y", "w"]
    assert order(idx.paths, bm25_scores(query, idx)) == ["c.py", "a.py", "b.py"]
    assert order(idx.paths, bm25_scores(query, idx, delta_matched_only=True)) == ["a.py", "c.py", "b.py"]


def test_bm25_delta_constant_offset(verdict):
    # the offset that is constant per query: delta * sum of IDF over all query tokens
    rng = random.Random(11)
    same, worst = 0, 0.0
    no_delta = ModelConfig(delta=0.0)
    for _ in range(100):
        idx, query = random_corpus(rng)
        full = bm25_scores(query, idx)
        plain = bm25_scores(query, idx, no_delta)
        offset = math.fsum(bm25_idf(idx.N, idx.df.get(t, 0)) for t in query)
        worst = max(worst, max(abs(f - p - offset) for f, p in zip(full, plain)))
        same += order(idx.paths, np.round(full, 9)) == order(idx.paths, np.round(plain, 9))
    verdict(same == 100 and worst < 1e-9, f"{same}/100 orderings equal, offset err {worst:.1e}")


def test_vsm_tf_scaling_invariance(verdict):
    rng = random.Random(13)
    same = 0
    for _ in range(100):
        idx, query = random_corpus(rng)
        same += order(idx.paths, cosine_scores(query, idx, "raw")) == \
            order(idx.paths, cosine_scores(query, idx, "vsm"))
    verdict(same == 100, f"{same}/100 orderings equal")


# --- statistics --------------------------------------------------------------

def test_statistics_oracles(verdict):
    rng = random.Random(17)
    stat_err = p_err = 0.0
    datasets = 0
    while datasets < 50:
        groups = [[rng.randint(0, 6) for _ in range(rng.randint(2, 10))] for _ in range(rng.randint(2, 5))]
        xs = [rng.randint(0, 5) for _ in range(rng.randint(4, 30))]
        ys = [rng.randint(0, 5) for _ in xs]
        values = [v for g in groups for v in g]
        if len(set(values)) < 2 or len(set(xs)) < 2 or len(set(ys)) < 2:
            continue
        datasets += 1
        kw, ref = kruskal_wallis(groups), scipy.stats.kruskal(*groups)
        stat_err = max(stat_err, abs(kw.H - ref.statistic) / max(abs(ref.statistic), 1e-300))
        p_err = max(p_err, abs(kw.p - ref.pvalue))
        post = conover_posthoc(groups).p_values
        ref_post = np.asarray(sp.posthoc_conover([list(map(float, g)) for g in groups]))
        p_err = max(p_err, float(np.max(np.abs(post - ref_post))))
        sr, ref_sr = spearman(xs, ys), scipy.stats.spearmanr(xs, ys)
        stat_err = max(stat_err, abs(sr.rho - ref_sr.statistic))
        if abs(ref_sr.statistic) < 1:
            p_err = max(p_err, abs(sr.p - ref_sr.pvalue))
    verdict(stat_err <= 1e-9 and p_err <= 1e-6,
            f"{datasets} datasets, statistic err {stat_err:.1e}, p err {p_err:.1e}")


# --- end to end --------------------------------------------------------------

OUTPUTS = ("links.jsonl", "mining_report.json", "dataset.jsonl", "dataset_summary.json",
           "commit_sizes.csv", "split.json", "metrics.jsonl", "aggregate.csv", "rankings.jsonl")


def test_end_to_end_determinism(synthetic_repo, tmp_path, verdict):
    repo, issues, _ = synthetic_repo
    start = time.perf_counter()
    codes = []
    for run in ("one", "two"):
        common = ["--repo", str(repo), "--project", "DEMO", "--issues", str(issues),
                  "-o", str(tmp_path / run)]
        codes += [main(["mine", *common]), main(["build", *common]),
                  main(["evaluate", *common, "--models", "all", "--split", "all", "--save-rankings"])]
    elapsed = time.perf_counter() - start
    identical = all((tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()
                    for f in OUTPUTS)
    golden = (tmp_path / "one" / "dataset.jsonl").read_bytes() == (DATA / "golden_dataset.jsonl").read_bytes()
    verdict(codes == [0] * 6 and identical and golden and elapsed < 30,
            f"identical={identical} golden={golden} in {elapsed:.1f}s")


def test_directional_sanity_non_binding(synthetic_repo, tmp_path, capsys):
    # not a gate: the fixture is too small to say anything about model quality
    repo, issues, _ = synthetic_repo
    common = ["--repo", str(repo), "--project", "DEMO", "--issues", str(issues), "-o", str(tmp_path)]
    for cmd in (["mine"], ["build"], ["evaluate", "--models", "rvsm,bm25", "--split", "all"]):
        assert main([*cmd, *common]) == 0
    main(["report", str(tmp_path), "-o", str(tmp_path)])
    text = (tmp_path / "report.txt").read_text()
    flag = next(line for line in text.splitlines() if "BM25 MRR" in line)
    with capsys.disabled():
        print(f"\nNOTE directional_sanity (non-binding): {flag}")
    assert "Directional check" in text
