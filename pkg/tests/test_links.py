import json

import pytest
from hypothesis import given, strategies as st

from conftest import FIG3_COMMITS, make_graph
from issueloc.commit_graph import ancestor_sets
from issueloc.errors import SchemaError
from issueloc.links import (IssueKey, LinkRecord, MiningReport, RefinedLinks, apply_path_requirement,
                            disambiguate_merges, mine_raw_links, mining_report, read_links,
                            refine_links, write_links)


def K(n, prefix="P"):
    return IssueKey(prefix, n)


def fig3(summaries):
    return make_graph(FIG3_COMMITS, head="M3", summaries=summaries)


# --- issue keys --------------------------------------------------------------

def test_issue_key_parse_and_order():
    assert IssueKey.parse("HADOOP-123") == K(123, "HADOOP")
    assert str(K(7, "AB_2")) == "AB_2-7"
    assert sorted([K(10), K(9), K(1, "A")]) == [K(1, "A"), K(9), K(10)]
    for bad in ("hadoop-1", "P-0", "P-", "P1", "-3"):
        with pytest.raises(ValueError):
            IssueKey.parse(bad)


@given(st.from_regex(r"[A-Z][A-Z0-9_]{0,6}", fullmatch=True), st.integers(1, 10**6))
def test_issue_key_round_trip(prefix, number):
    key = IssueKey(prefix, number)
    assert IssueKey.parse(str(key)) == key


# --- mining ------------------------------------------------------------------

def test_mining_uses_word_boundaries():
    g = make_graph([("a", []), ("b", ["a"]), ("c", ["b"]), ("d", ["c"]), ("e", ["d"])], summaries={
        "a": "P-1: fix", "b": "XP-2 and P-3a", "c": "[P-4] and (P-5), P-4 again",
        "d": "p-6 lower case", "e": "P-1 follow-up; P-07",
    })
    links = {str(l.issue): l.commits for l in mine_raw_links(g, "P")}
    assert links == {"P-1": ("a", "e"), "P-4": ("c",), "P-5": ("c",), "P-7": ("e",)}


def test_mining_ignores_message_body(fig2_repo):
    from issueloc.commit_graph import load_history
    from issueloc.synthetic import build_repo
    path = fig2_repo[0].parent / "body_only"
    build_repo(path, [
        {"name": "a", "parents": [], "message": "Initial\n\nFixes P-1", "files": {"x.py": "1"}},
        {"name": "b", "parents": ["a"], "message": "P-2 fix\n\nsee P-3", "files": {"x.py": "2"}},
    ])
    keys = [str(l.issue) for l in mine_raw_links(load_history(path), "P")]
    assert keys == ["P-2"]


def test_mining_requires_uppercase_prefix():
    with pytest.raises(ValueError):
        mine_raw_links(make_graph([("a", [])]), "p")


def test_linked_commits_in_topological_order():
    g = make_graph([("a", []), ("b", ["a"]), ("c", ["b"])], summaries={"a": "P-1", "c": "P-1", "b": "x"})
    assert mine_raw_links(g, "P")[0].commits == ("a", "c")


# --- refinement --------------------------------------------------------------

def test_merge_with_unlinked_branch_keeps_link():
    g = fig3({"M1": "P-1: merge feature"})
    refined = refine_links(g, ancestor_sets(g), "P", [K(1)])
    assert refined.links == [LinkRecord(K(1), ("M1",))]
    assert refined.report.linked == 1
    assert refined.report.discarded_merge == 0


def test_merge_with_linked_branch_discards_merge_link():
    g = fig3({"5": "P-1: work on branch", "M1": "Merge P-2"})
    refined = refine_links(g, ancestor_sets(g), "P", [K(1), K(2)])
    assert refined.links == [LinkRecord(K(1), ("5",))]
    assert refined.report.discarded_merge == 1
    assert refined.dropped_stage[K(2)] == "merge"


def test_merge_link_stripped_but_issue_kept():
    g = fig3({"5": "P-1: work", "M1": "Merge P-1"})
    result = disambiguate_merges(mine_raw_links(g, "P"), g, ancestor_sets(g))
    assert result.kept == [LinkRecord(K(1), ("5",))]
    assert result.dropped == []


def test_entry_point_requirement():
    g = fig3({"M3": "P-1: merge everything", "M1": "P-2: merge"})
    refined = refine_links(g, ancestor_sets(g), "P", [K(1), K(2)])
    assert [l.issue for l in refined.links] == [K(2)]
    assert refined.report.discarded_entry == 1
    assert refined.dropped_stage[K(1)] == "entry"


def test_path_requirement_stage():
    g = fig3({"3": "P-1", "5": "P-1 again", "4": "P-2", "M1": "x"})
    result = apply_path_requirement(mine_raw_links(g, "P"), g, ancestor_sets(g))
    assert [l.issue for l in result.kept] == [K(2)]
    assert result.dropped == [K(1)]


def test_unknown_keys_pruned_and_counted():
    g = fig3({"3": "P-1 P-2", "4": "P-3", "6": "P-4"})
    refined = refine_links(g, ancestor_sets(g), "P", [K(1), K(3)])
    assert [l.issue for l in refined.links] == [K(1), K(3)]
    assert refined.report == MiningReport(unknown_issues=2, max_linkable=2, linked=2)
    assert refined.dropped_stage[K(2)] == "unknown"


def test_report_balances():
    g = fig3({"3": "P-1", "5": "P-1", "M3": "P-2", "M1": "P-3", "2": "P-3", "7": "P-4", "6": "P-9"})
    refined = refine_links(g, ancestor_sets(g), "P", [K(i) for i in range(1, 6)])
    r = refined.report
    assert r.linked + r.discarded_path + r.discarded_merge + r.discarded_entry == r.max_linkable
    assert r.unknown_issues == 1


def test_mining_report_counts_known_only():
    raw = [LinkRecord(K(1), ("a",)), LinkRecord(K(2), ("b",)), LinkRecord(K(3), ("c",))]
    report, pruned = mining_report(raw, raw[:1], [K(1), K(2)], {"path": [K(2), K(3)]})
    assert report.as_dict() == {"unknown_issues": 1, "max_linkable": 2, "linked": 1,
                                "discarded_path": 1, "discarded_merge": 0, "discarded_entry": 0}
    assert pruned == raw[:1]


def test_fig3_mine_on_m1_and_m3():
    for merge, linked, entry in (("M1", 1, 0), ("M3", 0, 1)):
        g = fig3({merge: "P-1: merge"})
        report = refine_links(g, ancestor_sets(g), "P", [K(1)]).report
        assert (report.linked, report.discarded_entry) == (linked, entry)


# --- persistence -------------------------------------------------------------

def test_links_round_trip(tmp_path):
    g = fig3({"3": "P-1", "5": "P-1 again", "4": "P-2", "7": "P-3"})
    refined = refine_links(g, ancestor_sets(g), "P", [K(1), K(2)])
    path = tmp_path / "links.jsonl"
    write_links(refined, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["issue"] for r in rows] == ["P-1", "P-2", "P-3"]
    assert rows[0]["dropped_stage"] == "path"
    assert rows[2]["dropped_stage"] == "unknown"
    assert read_links(path) == refined.links
    assert len(read_links(path, include_dropped=True)) == 3


def test_read_links_reports_line(tmp_path):
    path = tmp_path / "links.jsonl"
    path.write_text('{"issue": "P-1", "commits": ["a"]}\n{"issue": "bad"}\n')
    with pytest.raises(SchemaError, match="line 2"):
        read_links(path)


def test_empty_refinement():
    g = make_graph([("a", [])])
    refined = refine_links(g, ancestor_sets(g), "P", [])
    assert isinstance(refined, RefinedLinks)
    assert refined.links == [] and refined.report == MiningReport()
