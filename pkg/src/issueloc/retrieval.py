"""Per-issue corpus index and the four ranking models (VSM, LSI, rVSM, BM25F+).

All logarithms are natural. Sums go through ``math.fsum`` so a document's
score does not depend on the order its terms are visited in.
"""

from __future__ import annotations

import math
import threading
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DecompositionFailure, EmptyCorpus
from .text import Document, PreprocessConfig, preprocess_file, preprocess_issue

MODELS = ("vsm", "lsi", "rvsm", "bm25")


# --- closed-form pieces ------------------------------------------------------

def smooth_idf(n_docs: int, doc_freq: int) -> float:
    return math.log((n_docs + 1) / (doc_freq + 1)) + 1.0


def bm25_idf(n_docs: int, doc_freq: int) -> float:
    return math.log((n_docs - doc_freq + 0.5) / (doc_freq + 0.5) + 1.0)


def bm25_term_score(tf: float, length: float, avg_length: float,
                    k1: float = 1.2, b: float = 0.75, delta: float = 1.0) -> float:
    """Saturated term frequency plus the BM25+ lower bound ``delta``."""
    if tf == 0:
        return delta
    ratio = length / avg_length if avg_length > 0 else 1.0
    return (k1 + 1) * tf / (tf + k1 * (1 - b + b * ratio)) + delta


def length_boost(length: float, min_length: float, max_length: float) -> float:
    """rVSM logistic multiplier on the min-max normalised document length."""
    g = 0.0 if max_length == min_length else (length - min_length) / (max_length - min_length)
    return 1.0 / (1.0 + math.exp(-g))


# --- index -------------------------------------------------------------------

@dataclass
class CorpusIndex:
    docs: list[Document]
    name_tf: list[Counter]
    content_tf: list[Counter]
    tf: list[Counter]  # concatenated name + content
    df: Counter
    name_len: list[int]
    content_len: list[int]
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @property
    def N(self) -> int:
        return len(self.docs)

    @property
    def paths(self) -> list[str]:
        return [d.path for d in self.docs]

    @property
    def lengths(self) -> list[int]:
        return [a + b for a, b in zip(self.name_len, self.content_len)]

    @property
    def min_len(self) -> int:
        return min(self.lengths)

    @property
    def max_len(self) -> int:
        return max(self.lengths)

    def weighted_lengths(self, weights: Mapping[str, float]) -> list[float]:
        wn, wc = weights.get("name", 1.0), weights.get("content", 1.0)
        return [wn * a + wc * b for a, b in zip(self.name_len, self.content_len)]

    def avg_weighted_len(self, weights: Mapping[str, float] | None = None) -> float:
        return math.fsum(self.weighted_lengths(weights or {})) / self.N

    def cached(self, key, compute):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = compute()
            return self._cache[key]


def build_index(documents: Iterable[Document]) -> CorpusIndex:
    """Index documents; they are stored sorted by path so results never depend
    on input order."""
    docs = sorted(documents, key=lambda d: d.path)
    if not docs:
        raise EmptyCorpus("cannot index an empty corpus")
    if len({d.path for d in docs}) != len(docs):
        raise ValueError("duplicate document paths")
    name_tf = [Counter(d.name_field) for d in docs]
    content_tf = [Counter(d.content_field) for d in docs]
    tf = [a + b for a, b in zip(name_tf, content_tf)]
    df: Counter = Counter()
    for counts in tf:
        df.update(counts.keys())
    return CorpusIndex(docs, name_tf, content_tf, tf, df,
                       [len(d.name_field) for d in docs], [len(d.content_field) for d in docs])


def idf_smooth(index: CorpusIndex, term: str) -> float:
    return smooth_idf(index.N, index.df.get(term, 0))


def idf_bm25(index: CorpusIndex, term: str) -> float:
    return bm25_idf(index.N, index.df.get(term, 0))


# --- rankings ----------------------------------------------------------------

@dataclass(frozen=True)
class Ranking:
    """(path, score) pairs, best first; equal scores fall back to path order."""

    entries: tuple[tuple[str, float], ...]

    @classmethod
    def from_scores(cls, paths: Sequence[str], scores: Sequence[float]) -> "Ranking":
        pairs = sorted(zip(paths, (float(s) for s in scores)), key=lambda p: (-p[1], p[0]))
        return cls(tuple(pairs))

    @property
    def paths(self) -> list[str]:
        return [p for p, _ in self.entries]

    @property
    def scores(self) -> dict[str, float]:
        return dict(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def top(self, k: int) -> list[tuple[str, float]]:
        return list(self.entries[:k])

    def to_json(self) -> list[dict]:
        return [{"path": p, "score": s} for p, s in self.entries]


@dataclass(frozen=True)
class ModelConfig:
    model: str = "bm25"
    k1: float = 1.2
    b: float = 0.75
    delta: float = 1.0
    field_weights: Mapping[str, float] = field(
        default_factory=lambda: {"name": 1.0, "content": 1.0})
    lsi_dims: int = 500

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0 <= self.b <= 1:
            raise ValueError("b must lie in [0, 1]")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        weights = dict(self.field_weights)
        if set(weights) - {"name", "content"}:
            raise ValueError("field weights are defined for 'name' and 'content' only")
        if any(w < 0 for w in weights.values()) or not any(weights.values()):
            raise ValueError("field weights must be non-negative and not all zero")
        if self.lsi_dims < 1:
            raise ValueError("lsi_dims must be at least 1")

    @property
    def label(self) -> str:
        return f"lsi-{self.lsi_dims}" if self.model == "lsi" else self.model


# --- cosine models -----------------------------------------------------------

def _vsm_weight(tf: int, length: int) -> float:
    return tf / length if length else 0.0


def _log_weight(tf: int, _length: int) -> float:
    return math.log(tf + 1)


def _raw_weight(tf: int, _length: int) -> float:
    return float(tf)


_TF_SCHEMES = {"vsm": _vsm_weight, "rvsm": _log_weight, "raw": _raw_weight}


def _doc_vectors(index: CorpusIndex, scheme: str) -> list[tuple[dict[str, float], float]]:
    def compute():
        weight = _TF_SCHEMES[scheme]
        out = []
        for counts, length in zip(index.tf, index.lengths):
            vec = {t: weight(f, length) * idf_smooth(index, t) for t, f in counts.items()}
            out.append((vec, math.sqrt(math.fsum(w * w for w in vec.values()))))
        return out

    return index.cached(("vectors", scheme), compute)


def _query_vector(query: Sequence[str], index: CorpusIndex, scheme: str) -> dict[str, float]:
    counts = Counter(query)
    weight = _TF_SCHEMES[scheme]
    return {t: weight(f, len(query)) * idf_smooth(index, t) for t, f in sorted(counts.items())}


def _cosines(qvec: Mapping[str, float], index: CorpusIndex, scheme: str) -> list[float]:
    qnorm = math.sqrt(math.fsum(w * w for w in qvec.values()))
    scores = []
    for vec, dnorm in _doc_vectors(index, scheme):
        if qnorm == 0 or dnorm == 0:
            scores.append(0.0)
            continue
        dot = math.fsum(w * vec[t] for t, w in qvec.items() if t in vec)
        scores.append(dot / (qnorm * dnorm))
    return scores


def cosine_scores(query: Sequence[str], index: CorpusIndex, tf_scheme: str = "vsm") -> list[float]:
    """Cosine of TF-IDF vectors in index document order (``tf_scheme``: vsm, rvsm or raw)."""
    return _cosines(_query_vector(query, index, tf_scheme), index, tf_scheme)


def score_vsm(query: Sequence[str], index: CorpusIndex) -> Ranking:
    return Ranking.from_scores(index.paths, cosine_scores(query, index, "vsm"))


def score_rvsm(query: Sequence[str], index: CorpusIndex) -> Ranking:
    lo, hi = index.min_len, index.max_len
    cos = cosine_scores(query, index, "rvsm")
    return Ranking.from_scores(
        index.paths, [length_boost(n, lo, hi) * c for n, c in zip(index.lengths, cos)])


# --- LSI ---------------------------------------------------------------------

def _term_doc_matrix(index: CorpusIndex) -> tuple[sp.csc_matrix, dict[str, int]]:
    def compute():
        vocab = {t: i for i, t in enumerate(sorted(index.df))}
        rows, cols, vals = [], [], []
        for j, (vec, _) in enumerate(_doc_vectors(index, "vsm")):
            for t, w in vec.items():
                rows.append(vocab[t])
                cols.append(j)
                vals.append(w)
        matrix = sp.csc_matrix((vals, (rows, cols)), shape=(len(vocab), index.N))
        return matrix, vocab

    return index.cached("term_doc", compute)


def _lsi_basis(index: CorpusIndex, dims: int, dense_limit: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """Top right-singular vectors and squared singular values of the term-document matrix.

    Uses the document Gram matrix, so only the N x N eigenproblem is solved.
    """
    def compute():
        matrix, _ = _term_doc_matrix(index)
        n = index.N
        try:
            if n <= dense_limit or dims >= n // 2:
                gram = (matrix.T @ matrix).toarray()
                evals, evecs = np.linalg.eigh(gram)
            else:
                op = spla.LinearOperator((n, n), matvec=lambda v: matrix.T @ (matrix @ v),
                                         dtype=np.float64)
                evals, evecs = spla.eigsh(op, k=dims, which="LA")
        except (np.linalg.LinAlgError, spla.ArpackError) as exc:
            raise DecompositionFailure(f"LSI decomposition failed: {exc}") from exc
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        top = evals[0] if len(evals) else 0.0
        keep = evals > max(top, 0.0) * n * np.finfo(float).eps
        k = min(dims, int(keep.sum()))
        return evecs[:, :k], evals[:k]

    return index.cached(("lsi", dims, dense_limit), compute)


def lsi_scores(query: Sequence[str], index: CorpusIndex, dims: int,
               dense_limit: int = 2000) -> list[float]:
    """Latent-space cosine between the folded-in query and each document.

    Documents are represented by their projections onto the top ``dims``
    left-singular vectors and the query by its own projection onto them. The
    query norm is taken in term space; it is the same for every document, so
    the ordering is that of the latent cosine, and at full rank the scores
    coincide with VSM.
    """
    if dims < 1:
        raise ValueError("dims must be at least 1")
    matrix, vocab = _term_doc_matrix(index)
    qvec = _query_vector(query, index, "vsm")
    qnorm = math.sqrt(math.fsum(w * w for w in qvec.values()))
    if qnorm == 0:
        return [0.0] * index.N
    q = np.zeros(len(vocab))
    for t, w in qvec.items():
        if t in vocab:
            q[vocab[t]] = w
    basis, evals = _lsi_basis(index, dims, dense_limit)
    # A^T q, projected onto the retained right-singular directions
    projected = basis @ (basis.T @ (matrix.T @ q))
    doc_norms = np.sqrt(np.maximum((basis ** 2) @ evals, 0.0))
    scores = np.zeros(index.N)
    nz = doc_norms > 0
    scores[nz] = projected[nz] / (qnorm * doc_norms[nz])
    return scores.tolist()


def score_lsi(query: Sequence[str], index: CorpusIndex, dims: int) -> Ranking:
    return Ranking.from_scores(index.paths, lsi_scores(query, index, dims))


# --- BM25F+ ------------------------------------------------------------------

def bm25_scores(query: Sequence[str], index: CorpusIndex, config: ModelConfig | None = None,
                delta_matched_only: bool = False) -> list[float]:
    """BM25F+ scores in index document order, summed over query tokens with multiplicity.

    ``delta_matched_only`` adds the BM25+ bound only for terms present in the
    document. Unlike the unconditional bound, which shifts every document by
    the same ``delta * sum(IDF)``, this variant can reorder documents; it is
    kept for comparison only.
    """
    config = config or ModelConfig()
    wn = config.field_weights.get("name", 1.0)
    wc = config.field_weights.get("content", 1.0)
    lengths = index.weighted_lengths(config.field_weights)
    avg = math.fsum(lengths) / index.N
    counts = sorted(Counter(query).items())
    idf = {t: idf_bm25(index, t) for t, _ in counts}
    scores = []
    for name_tf, content_tf, length in zip(index.name_tf, index.content_tf, lengths):
        parts = []
        for t, c in counts:
            tf = wn * name_tf.get(t, 0) + wc * content_tf.get(t, 0)
            if tf == 0 and delta_matched_only:
                continue
            parts.append(c * idf[t] * bm25_term_score(tf, length, avg, config.k1, config.b, config.delta))
        scores.append(math.fsum(parts))
    return scores


def score_bm25(query: Sequence[str], index: CorpusIndex, config: ModelConfig | None = None) -> Ranking:
    return Ranking.from_scores(index.paths, bm25_scores(query, index, config))


def score(query: Sequence[str], index: CorpusIndex, config: ModelConfig) -> Ranking:
    if config.model == "vsm":
        return score_vsm(query, index)
    if config.model == "rvsm":
        return score_rvsm(query, index)
    if config.model == "lsi":
        return score_lsi(query, index, config.lsi_dims)
    return score_bm25(query, index, config)


# --- snapshots ---------------------------------------------------------------

class SnapshotCache:
    """Preprocessed documents per (snapshot commit, preprocessing); safe for threads."""

    def __init__(self, repo, ext_filter, preprocess: PreprocessConfig, max_entries: int = 8):
        self.repo = repo
        self.filter = ext_filter
        self.preprocess = preprocess
        self.max_entries = max_entries
        self._indices: OrderedDict[str, CorpusIndex] = OrderedDict()
        self._lock = threading.Lock()

    def documents(self, commit: str) -> list[Document]:
        files = {p: sha for p, sha in self.repo.ls_files(commit).items() if self.filter.matches(p)}
        blobs = self.repo.read_blobs(list(files.values()))
        return [preprocess_file(p, blobs[sha], self.preprocess) for p, sha in sorted(files.items())]

    def index(self, commit: str) -> CorpusIndex:
        with self._lock:
            cached = self._indices.get(commit)
            if cached is not None:
                self._indices.move_to_end(commit)
                return cached
        built = build_index(self.documents(commit))
        with self._lock:
            index = self._indices.setdefault(commit, built)
            while len(self._indices) > self.max_entries:
                self._indices.popitem(last=False)
            return index


def rank_for_sample(sample, repo, config: ModelConfig, preprocess: PreprocessConfig,
                    ext_filter=None, cache: SnapshotCache | None = None) -> Ranking:
    """Rank every source file of the sample's snapshot against its issue text."""
    if cache is None:
        from .dataset import ExtensionFilter
        cache = SnapshotCache(repo, ext_filter or ExtensionFilter(), preprocess)
    index = cache.index(sample.snapshot.commit)
    return score(preprocess_issue(sample, preprocess), index, config)
