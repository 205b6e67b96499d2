import json
from pathlib import Path

import pytest

from issueloc.commit_graph import CommitGraph, CommitRecord
from issueloc.synthetic import build_repo, load_description

DATA = Path(__file__).parent / "data"

# Four linked-commit configurations over one graph: a mainline c11..c16 with a
# side branch c21, c22 forked at c12 and merged back by c15.
FIG2_COMMITS = [
    ("c11", []), ("c12", ["c11"]), ("c13", ["c12"]), ("c21", ["c12"]),
    ("c14", ["c13"]), ("c22", ["c21"]), ("c15", ["c14", "c22"]), ("c16", ["c15"]),
]
FIG2_CASES = {
    "a": ({"c13", "c14"}, True),
    "b": ({"c15", "c21"}, True),
    "c": ({"c13", "c22"}, False),
    "d": ({"c13", "c15"}, False),
}

# Ten-commit graph with nested merges; the merge named M3 has a merged branch
# reachable through two different fork points.
FIG3_COMMITS = [
    ("1", []), ("2", ["1"]), ("3", ["2"]), ("5", ["2"]), ("7", ["2"]),
    ("M1", ["3", "5"]), ("M2", ["5", "7"]), ("4", ["M1"]), ("6", ["M2"]), ("M3", ["4", "6"]),
]
FIG3_SETS = {
    "1": {"1"},
    "2": {"1", "2"},
    "3": {"1", "2", "3"},
    "5": {"1", "2", "5"},
    "7": {"1", "2", "7"},
    "M1": {"1", "2", "3", "5", "M1"},
    "4": {"1", "2", "3", "4", "5", "M1"},
    "M2": {"1", "2", "5", "7", "M2"},
    "6": {"1", "2", "5", "6", "7", "M2"},
    "M3": {"1", "2", "3", "4", "5", "6", "7", "M1", "M2", "M3"},
}


def make_graph(commits, head=None, summaries=None):
    """In-memory graph from (name, parents) pairs; times follow list order."""
    summaries = summaries or {}
    records = [CommitRecord(name, tuple(parents), summaries.get(name, name), i)
               for i, (name, parents) in enumerate(commits)]
    return CommitGraph.from_records(records, head or commits[-1][0])


def describe(commits, messages=None, files=None):
    """Turn (name, parents) pairs into a synthetic repository description."""
    messages = messages or {}
    files = files or {}
    return [{"name": n, "parents": list(p), "message": messages.get(n, f"commit {n}"),
             "time": 60 * i, "files": files.get(n, {f"f_{n}.txt": n})}
            for i, (n, p) in enumerate(commits)]


@pytest.fixture
def fig2_graph():
    return make_graph(FIG2_COMMITS, head="c16")


@pytest.fixture
def fig3_graph():
    return make_graph(FIG3_COMMITS, head="M3")


@pytest.fixture(scope="session")
def fig2_repo(tmp_path_factory):
    path = tmp_path_factory.mktemp("fig2")
    shas = build_repo(path, describe(FIG2_COMMITS), head="c16")
    return path, shas


@pytest.fixture(scope="session")
def fig3_repo(tmp_path_factory):
    path = tmp_path_factory.mktemp("fig3")
    shas = build_repo(path, describe(FIG3_COMMITS), head="M3")
    return path, shas


@pytest.fixture(scope="session")
def synthetic_description():
    return load_description(DATA / "synthetic_repo.json")


@pytest.fixture(scope="session")
def synthetic_repo(tmp_path_factory, synthetic_description):
    """The bundled demo repository plus its issue export."""
    root = tmp_path_factory.mktemp("synthetic")
    shas = build_repo(root / "repo", synthetic_description["commits"])
    issues = root / "issues.jsonl"
    issues.write_text("".join(json.dumps(i, sort_keys=True) + "\n"
                              for i in synthetic_description["issues"]))
    return root / "repo", issues, shas
