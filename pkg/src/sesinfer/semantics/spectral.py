"""Cosine similarity between word vectors and normalized spectral clustering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from sklearn.cluster import KMeans

__all__ = [
    "TopicModel",
    "similarity_matrix",
    "check_similarity",
    "normalized_laplacian",
    "spectral_cluster",
    "write_topic_model",
    "read_topic_model",
]

DENSE_EIGEN_LIMIT = 5000


def similarity_matrix(vectors: np.ndarray, words=None) -> np.ndarray:
    """Cosine similarity with negative values clamped to zero and unit diagonal."""
    U = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(U, axis=1)
    bad = np.flatnonzero(norms == 0)
    if len(bad):
        name = words[bad[0]] if words is not None else f"row {bad[0]}"
        raise ValueError(f"zero-norm embedding for {name!r}")
    U = U / norms[:, None]
    M = U @ U.T
    M = 0.5 * (M + M.T)
    np.clip(M, 0.0, 1.0, out=M)
    np.fill_diagonal(M, 1.0)
    check_similarity(M)
    return M


def check_similarity(M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("similarity matrix must be square")
    if not np.array_equal(M, M.T):
        raise ValueError("similarity matrix must be symmetric")
    if np.any(M < 0) or np.any(M > 1):
        raise ValueError("similarity entries must lie in [0, 1]")


def normalized_laplacian(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L = I - D^-1/2 M D^-1/2 over nodes of non-zero degree.

    Returns L and the indices of the nodes it covers.
    """
    deg = M.sum(axis=1)
    keep = np.flatnonzero(deg > 0)
    Mk = M[np.ix_(keep, keep)]
    s = 1.0 / np.sqrt(deg[keep])
    L = np.eye(len(keep)) - s[:, None] * Mk * s[None, :]
    return 0.5 * (L + L.T), keep


@dataclass
class TopicModel:
    """Hard assignment of every vocabulary word to one of K topics (0-based)."""

    words: tuple[str, ...]
    topics: np.ndarray
    n_topics: int
    labels: dict[int, str] = field(default_factory=dict)
    overflow_topic: int | None = None  # receives words with zero similarity degree

    def __post_init__(self):
        self.topics = np.asarray(self.topics, dtype=np.int64)
        if len(self.topics) != len(self.words):
            raise ValueError("one topic per word required")
        if len(self.topics) and (self.topics.min() < 0 or self.topics.max() >= self.n_topics):
            raise ValueError("topic id out of range")

    @property
    def word_topic(self) -> dict[str, int]:
        return dict(zip(self.words, self.topics.tolist()))

    def sizes(self) -> np.ndarray:
        return np.bincount(self.topics, minlength=self.n_topics)


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Number clusters by the first word (lowest index) they contain."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    mapping = np.empty(labels.max() + 1, dtype=np.int64)
    mapping[np.unique(labels)[order]] = np.arange(len(order))
    return mapping[labels]


def spectral_cluster(M: np.ndarray, K: int = 100, seed: int = 0, words=None,
                     n_init: int = 50) -> TopicModel:
    """Normalized spectral clustering of a similarity matrix into K topics.

    The K eigenvectors of L with smallest eigenvalues form an embedding whose
    unit-normalized rows go through k-means (k-means++, ``n_init`` restarts,
    best inertia). Zero-degree words cannot enter L; they all go to topic
    K - 1 and the remaining words are split into K - 1 clusters.
    """
    M = np.asarray(M, dtype=np.float64)
    V = M.shape[0]
    if words is None:
        words = tuple(str(i) for i in range(V))
    if K < 1 or K > V:
        raise ValueError(f"K={K} must lie in [1, {V}]")
    L, keep = normalized_laplacian(M)
    topics = np.full(V, K - 1, dtype=np.int64)
    overflow = None
    k_eff = K
    if len(keep) < V:
        overflow = K - 1
        k_eff = K - 1
        if k_eff < 1 or k_eff > len(keep):
            raise ValueError("not enough connected words for the requested K")
    if len(keep):
        n = len(keep)
        if n <= DENSE_EIGEN_LIMIT:
            _, vecs = scipy.linalg.eigh(L, subset_by_index=[0, k_eff - 1])
        else:
            v0 = np.random.default_rng(seed).random(n)
            _, vecs = scipy.sparse.linalg.eigsh(L, k=k_eff, sigma=-1e-3, which="LM", v0=v0)
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        Y = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)
        km = KMeans(n_clusters=k_eff, init="k-means++", n_init=n_init, random_state=seed)
        topics[keep] = _relabel(km.fit_predict(Y))
    return TopicModel(tuple(words), topics, K, overflow_topic=overflow)


def write_topic_model(model: TopicModel, fh: TextIO, header: str | None = None) -> None:
    """``word,topic_id`` table with 1-based topic ids."""
    if header:
        fh.write(header)
    fh.write("word,topic_id\n")
    for w, t in zip(model.words, model.topics):
        fh.write(f"{w},{int(t) + 1}\n")


def read_topic_model(path: str, n_topics: int) -> TopicModel:
    words, topics = [], []
    with open(path, encoding="utf-8") as fh:
        body = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    for ln in body[1:]:
        w, t = ln.rsplit(",", 1)
        words.append(w)
        topics.append(int(t) - 1)
    return TopicModel(tuple(words), np.array(topics), n_topics)


def read_topic_labels(path: str) -> dict[int, str]:
    """Optional human labels: ``topic_id,label`` with 1-based ids."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if ln.startswith("#") or ln.startswith("topic_id") or not ln.strip():
                continue
            t, label = ln.rstrip("\n").split(",", 1)
            out[int(t) - 1] = label
    return out
