"""Build small git repositories from a declarative commit list.

Used for fixtures and demos. Commits are written with ``commit-tree`` under
fixed author/committer identities and timestamps, so the same description
always yields the same commit hashes.

A description is a list of dicts::

    {"name": "c1", "parents": [], "message": "AVRO-1: init",
     "time": 1000, "files": {"src/A.java": "class A {}", "old.py": None}}

``files`` maps paths to new content (``None`` deletes). A merge starts from
its first parent's tree and takes every path the second parent changed
relative to their merge base; ``files`` is applied on top.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
from pathlib import Path

from .gitio import git_executable

BASE_TIME = 1_600_000_000


def _git(repo: Path, args: list[str], *, input: bytes | None = None,
         env: dict | None = None) -> str:
    proc = subprocess.run([git_executable(), "-C", str(repo), *args], input=input,
                          capture_output=True, env=env, check=False)
    if proc.returncode != 0:
        raise RuntimeError(f"git {args[0]} failed: {proc.stderr.decode()}")
    return proc.stdout.decode().strip()


def _merge_base(trees: dict[str, dict], parents_of: dict[str, list[str]], a: str, b: str) -> dict:
    def ancestors(c):
        seen, stack = set(), [c]
        while stack:
            x = stack.pop()
            if x not in seen:
                seen.add(x)
                stack.extend(parents_of[x])
        return seen

    common = ancestors(a) & ancestors(b)
    # best common ancestor: one that is not an ancestor of another common one
    best = [c for c in common if not any(c != o and c in ancestors(o) for o in common)]
    return trees[sorted(best)[0]] if best else {}


def build_repo(path, commits: list[dict], branch: str = "main",
               head: str | None = None) -> dict[str, str]:
    """Create the repository at ``path``; returns commit name -> sha.

    ``branch`` points at ``head`` (default: the last commit listed).
    """
    repo = Path(path)
    repo.mkdir(parents=True, exist_ok=True)
    _git(repo, ["init", "-q"])
    _git(repo, ["symbolic-ref", "HEAD", f"refs/heads/{branch}"])

    trees: dict[str, dict[str, str]] = {}
    parents_of: dict[str, list[str]] = {}
    shas: dict[str, str] = {}
    blob_cache: dict[str, str] = {}

    with tempfile.TemporaryDirectory() as tmp:
        for i, spec in enumerate(commits):
            name = spec["name"]
            parents = list(spec.get("parents", []))
            files: dict[str, str] = dict(trees[parents[0]]) if parents else {}
            if len(parents) == 2:
                base = _merge_base(trees, parents_of, parents[0], parents[1])
                theirs = trees[parents[1]]
                for p in set(base) | set(theirs):
                    if base.get(p) != theirs.get(p):
                        if p in theirs:
                            files[p] = theirs[p]
                        else:
                            files.pop(p, None)
            for p, content in spec.get("files", {}).items():
                if content is None:
                    files.pop(p, None)
                else:
                    files[p] = content
            trees[name] = files
            parents_of[name] = parents

            lines = []
            for p in sorted(files):
                content = files[p]
                if content not in blob_cache:
                    blob_cache[content] = _git(repo, ["hash-object", "-w", "--stdin"],
                                               input=content.encode())
                lines.append(f"100644 {blob_cache[content]}\t{p}")
            env = dict(os.environ, GIT_INDEX_FILE=str(Path(tmp) / f"index{i}"))
            _git(repo, ["read-tree", "--empty"], env=env)
            if lines:
                _git(repo, ["update-index", "--index-info"],
                     input=("\n".join(lines) + "\n").encode(), env=env)
            tree = _git(repo, ["write-tree"], env=env)

            when = f"{BASE_TIME + int(spec.get('time', i * 60))} +0000"
            env.update(GIT_AUTHOR_NAME="Fixture", GIT_AUTHOR_EMAIL="fixture@example.org",
                       GIT_COMMITTER_NAME="Fixture", GIT_COMMITTER_EMAIL="fixture@example.org",
                       GIT_AUTHOR_DATE=when, GIT_COMMITTER_DATE=when)
            args = ["commit-tree", tree]
            for p in parents:
                args += ["-p", shas[p]]
            shas[name] = _git(repo, args, input=spec.get("message", name).encode(), env=env)

    if head is None and commits:
        head = commits[-1]["name"]
    if head is not None:
        _git(repo, ["update-ref", f"refs/heads/{branch}", shas[head]])
    return shas


def load_description(path) -> dict:
    """Read a fixture file: {"commits": [...], "issues": [...]}."""
    return json.loads(Path(path).read_text())
