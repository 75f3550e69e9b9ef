"""Per-user topic distributions and topic-level statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, TextIO

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import squareform

from ..corpus import UserTimeline
from .spectral import TopicModel

__all__ = [
    "user_topic_distribution",
    "topic_distributions",
    "TopicCorrelation",
    "topic_correlation",
    "TopicIncomeGap",
    "topic_income_discrimination",
    "write_distributions",
    "read_distributions",
]


def user_topic_distribution(timeline: UserTimeline, model: TopicModel) -> np.ndarray:
    """Share of the user's vocabulary-word occurrences falling in each topic.

    Only cleaned tweet tokens count; the profile description is not used.
    The zero vector is returned when no token is in the vocabulary.
    """
    wt = model.word_topic
    hits = [wt[w] for toks in timeline.token_lists() for w in toks if w in wt]
    out = np.zeros(model.n_topics)
    if not hits:
        return out
    counts = np.bincount(hits, minlength=model.n_topics).astype(np.float64)
    return counts / counts.sum()


def topic_distributions(timelines: Mapping[str, UserTimeline], model: TopicModel,
                        user_ids=None) -> np.ndarray:
    ids = sorted(timelines) if user_ids is None else user_ids
    if not ids:
        return np.zeros((0, model.n_topics))
    return np.vstack([user_topic_distribution(timelines[u], model) for u in ids])


@dataclass
class TopicCorrelation:
    matrix: np.ndarray       # K x K Pearson correlation in topic order
    order: np.ndarray        # display permutation from average-linkage clustering
    zero_variance: np.ndarray  # topics whose correlations were set to 0

    @property
    def ordered(self) -> np.ndarray:
        return self.matrix[np.ix_(self.order, self.order)]


def topic_correlation(P: np.ndarray) -> TopicCorrelation:
    """Pearson correlation between topic columns of a users x K matrix.

    A column with zero variance gets correlation 0 with everything (1 on
    the diagonal) and is flagged. The display order comes from average
    linkage on the distance 1 - r.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ValueError("need at least 2 users")
    Z = P - P.mean(axis=0)
    sd = np.sqrt((Z * Z).sum(axis=0))
    flat = np.ptp(P, axis=0) == 0
    Zn = np.divide(Z, sd, out=np.zeros_like(Z), where=~flat)
    R = Zn.T @ Zn
    np.clip(R, -1.0, 1.0, out=R)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    K = R.shape[0]
    if K > 1:
        D = 1.0 - R
        np.fill_diagonal(D, 0.0)
        order = leaves_list(linkage(squareform(D, checks=False), method="average"))
    else:
        order = np.zeros(1, dtype=np.int64)
    return TopicCorrelation(R, np.asarray(order), np.flatnonzero(flat))


@dataclass
class TopicIncomeGap:
    mention_mean: np.ndarray      # NaN when the group is empty
    other_mean: np.ndarray
    mention_n: np.ndarray
    other_n: np.ndarray
    flags: list[str] = field(default_factory=list)

    @property
    def gap(self) -> np.ndarray:
        return self.mention_mean - self.other_mean


def topic_income_discrimination(P: np.ndarray, incomes: np.ndarray) -> TopicIncomeGap:
    """Mean income of users with positive usage of each topic vs the rest."""
    P = np.asarray(P, dtype=np.float64)
    inc = np.asarray(incomes, dtype=np.float64)
    if len(inc) != P.shape[0]:
        raise ValueError("one income per user required")
    if not np.all(np.isfinite(inc)):
        raise ValueError("income missing for some users")
    M = P > 0
    n1 = M.sum(axis=0)
    n0 = M.shape[0] - n1
    s1 = inc @ M
    s0 = inc.sum() - s1
    with np.errstate(invalid="ignore", divide="ignore"):
        m1 = np.where(n1 > 0, s1 / np.maximum(n1, 1), np.nan)
        m0 = np.where(n0 > 0, s0 / np.maximum(n0, 1), np.nan)
    flags = [f"topic {t + 1}: no mentioners" for t in np.flatnonzero(n1 == 0)]
    flags += [f"topic {t + 1}: no non-mentioners" for t in np.flatnonzero(n0 == 0)]
    return TopicIncomeGap(m1, m0, n1, n0, flags)


def write_distributions(user_ids, P: np.ndarray, fh: TextIO, header: str | None = None) -> None:
    """``user_id,t1..tK`` table."""
    if header:
        fh.write(header)
    K = P.shape[1]
    fh.write("user_id," + ",".join(f"t{k + 1}" for k in range(K)) + "\n")
    for u, row in zip(user_ids, P):
        fh.write(u + "," + ",".join(repr(float(x)) for x in row) + "\n")


def read_distributions(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        body = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    K = len(body[0].split(",")) - 1
    ids, rows = [], []
    for ln in body[1:]:
        parts = ln.split(",")
        ids.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return ids, np.array(rows).reshape(len(ids), K)
