"""Thin subprocess wrapper around the git CLI.

Every call is a separate read-only ``git`` process, so a ``Repo`` holds no
mutable state and may be shared between threads.
"""

from __future__ import annotations

import os
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path

from .errors import GitObjectMissing, RefNotFound, RepoNotFound

GIT_ENV_VAR = "ISSUELOC_GIT"
EMPTY_TREE = "4b825dc642cb6eb9a060e54bf8d69288fbee4904"


def git_executable() -> str:
    exe = os.environ.get(GIT_ENV_VAR) or shutil.which("git")
    if not exe:
        raise RepoNotFound(f"git executable not found (set {GIT_ENV_VAR})")
    return exe


@dataclass(frozen=True)
class Change:
    """One entry of ``git diff-tree --name-status``."""

    status: str  # single letter: A, M, D, R, C, T
    old_path: str | None
    new_path: str | None


@dataclass(frozen=True)
class RawCommit:
    sha: str
    parents: tuple[str, ...]
    author_time: int
    message: str


class Repo:
    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        if not self.path.is_dir():
            raise RepoNotFound(f"no such directory: {self.path}")
        proc = self._run(["rev-parse", "--git-dir"], check=False)
        if proc.returncode != 0:
            raise RepoNotFound(f"not a git repository: {self.path}")

    def _run(self, args: list[str], *, check: bool = True,
             input: bytes | None = None) -> subprocess.CompletedProcess:
        proc = subprocess.run(
            [git_executable(), "-C", str(self.path), *args],
            input=input,
            capture_output=True,
        )
        if check and proc.returncode != 0:
            err = proc.stderr.decode("utf-8", "replace").strip()
            raise GitObjectMissing(f"git {' '.join(args[:2])} failed: {err}")
        return proc

    def resolve(self, ref: str) -> str:
        proc = self._run(["rev-parse", "--verify", "-q", f"{ref}^{{commit}}"], check=False)
        if proc.returncode != 0:
            raise RefNotFound(f"cannot resolve {ref!r} in {self.path}")
        return proc.stdout.decode().strip()

    def log(self, head: str) -> list[RawCommit]:
        proc = self._run(["log", "--format=%H%x00%P%x00%at%x00%B%x1e", head])
        commits = []
        for chunk in proc.stdout.decode("utf-8", "replace").split("\x1e"):
            chunk = chunk.lstrip("\n")
            if not chunk:
                continue
            sha, parents, at, message = chunk.split("\x00", 3)
            commits.append(RawCommit(sha, tuple(parents.split()), int(at), message))
        return commits

    def ls_files(self, commit: str) -> dict[str, str]:
        """Regular files of ``commit`` as path -> blob sha (symlinks and submodules skipped)."""
        proc = self._run(["ls-tree", "-r", "-z", "--full-tree", commit])
        files = {}
        for entry in proc.stdout.decode("utf-8", "surrogateescape").split("\x00"):
            if not entry:
                continue
            meta, path = entry.split("\t", 1)
            mode, kind, sha = meta.split()
            if kind == "blob" and mode in ("100644", "100755"):
                files[path] = sha
        return files

    def diff(self, old: str | None, new: str) -> list[Change]:
        """Name-status diff between two commits with git's default rename detection."""
        proc = self._run(["diff-tree", "-r", "-z", "-M", "--name-status",
                          "--no-commit-id", old or EMPTY_TREE, new])
        fields = proc.stdout.decode("utf-8", "surrogateescape").split("\x00")
        changes = []
        i = 0
        while i < len(fields) and fields[i]:
            status = fields[i][0]
            if status in "RC":
                changes.append(Change(status, fields[i + 1], fields[i + 2]))
                i += 3
            else:
                path = fields[i + 1]
                old_path = None if status == "A" else path
                new_path = None if status == "D" else path
                changes.append(Change(status, old_path, new_path))
                i += 2
        return changes

    def read_blobs(self, shas: list[str]) -> dict[str, bytes]:
        if not shas:
            return {}
        unique = list(dict.fromkeys(shas))
        proc = self._run(["cat-file", "--batch"], input=("\n".join(unique) + "\n").encode())
        out = proc.stdout
        blobs: dict[str, bytes] = {}
        pos = 0
        for sha in unique:
            nl = out.index(b"\n", pos)
            header = out[pos:nl].decode().split()
            if len(header) < 3 or header[1] == "missing":
                raise GitObjectMissing(f"blob {sha} missing")
            size = int(header[2])
            blobs[sha] = out[nl + 1: nl + 1 + size]
            pos = nl + 1 + size + 1
        return blobs
