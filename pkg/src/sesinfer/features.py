"""Per-user feature vectors: user-level counts, tf-idf selected n-grams, topics."""
from __future__ import annotations

import hashlib
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

import numpy as np

from .corpus import UserTimeline, extract_ngrams

__all__ = [
    "USER_FEATURES",
    "FeatureSchema",
    "FeatureVector",
    "NgramSelection",
    "user_level_features",
    "user_document",
    "select_ngrams",
    "build_schema",
    "assemble",
    "assemble_matrix",
    "write_schema",
    "read_schema",
    "write_matrix",
    "read_matrix",
]

USER_FEATURES = (
    "retweet_count",
    "retweet_rate",
    "mention_count",
    "mention_rate",
    "friends",
    "followers",
    "friends_followers_ratio",
)
PAD_PREFIX = "__pad"


def user_level_features(tl: UserTimeline) -> tuple[np.ndarray, list[str]]:
    """The 7 user-level values and the degenerate-case flags raised.

    Rates are per raw tweet (retweets included). A ratio with zero followers
    and rates with zero tweets are set to 0 and flagged.
    """
    flags = []
    n = tl.raw_tweet_count
    if n > 0:
        rt_rate, m_rate = tl.retweet_count / n, tl.mention_count / n
    else:
        rt_rate = m_rate = 0.0
        flags.append("no_tweets")
    if tl.followers > 0:
        ratio = tl.friends / tl.followers
    else:
        ratio = 0.0
        flags.append("zero_followers")
    v = np.array([tl.retweet_count, rt_rate, tl.mention_count, m_rate, tl.friends, tl.followers, ratio],
                 dtype=np.float64)
    return v, flags


def user_document(tl: UserTimeline) -> list[list[str]]:
    """Token sequences of one user: the profile description, then every tweet.

    N-grams never cross a sequence boundary.
    """
    seqs = [tl.description_tokens()] + tl.token_lists()
    return [s for s in seqs if s]


def _doc_counts(seqs: Sequence[Sequence[str]], n: int) -> Counter:
    c = Counter()
    for s in seqs:
        c.update(extract_ngrams(s, n))
    return c


@dataclass(frozen=True)
class NgramSelection:
    unigrams: tuple[tuple[str, ...], ...]
    bigrams: tuple[tuple[str, ...], ...]
    n1: int
    n2: int


def _rank(docs: list[Counter], lengths: np.ndarray, k: int) -> list[tuple[str, ...]]:
    """Top ``k`` n-grams by max-over-documents tf-idf, idf = ln(N/df).

    tf is the n-gram count over the document's token count. Ties fall back
    to the total corpus frequency, then lexicographic order.
    """
    N = len(docs)
    df, total, best = Counter(), Counter(), {}
    for c, L in zip(docs, lengths):
        for g, cnt in c.items():
            df[g] += 1
            total[g] += cnt
    idf = {g: math.log(N / d) for g, d in df.items()}
    for c, L in zip(docs, lengths):
        for g, cnt in c.items():
            s = cnt / L * idf[g]
            if s > best.get(g, -1.0):
                best[g] = s
    ranked = sorted(best, key=lambda g: (-best[g], -total[g], g))
    return ranked[:k]


def select_ngrams(documents: Mapping[str, Sequence[Sequence[str]]], n1: int = 450,
                  n2: int = 560) -> NgramSelection:
    """Select the vocabulary of the n-gram blocks; one document per user.

    The result does not depend on the order of ``documents``.
    """
    ids = sorted(documents)
    if not ids:
        raise ValueError("no documents")
    seqs = [documents[u] for u in ids]
    lengths = np.array([max(sum(len(s) for s in d), 1) for d in seqs])
    uni = _rank([_doc_counts(d, 1) for d in seqs], lengths, n1)
    bi = _rank([_doc_counts(d, 2) for d in seqs], lengths, n2)
    for name, got, want in (("1-grams", uni, n1), ("2-grams", bi, n2)):
        if len(got) < want:
            warnings.warn(f"only {len(got)} distinct {name} for {want} slots; padding with zero features",
                          stacklevel=2)
    return NgramSelection(tuple(uni), tuple(bi), n1, n2)


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    n_user: int
    n1: int
    n2: int
    n_topics: int
    unigrams: tuple[tuple[str, ...], ...] = field(repr=False)
    bigrams: tuple[tuple[str, ...], ...] = field(repr=False)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")
        if len(self.names) != self.n_user + self.n1 + self.n2 + self.n_topics:
            raise ValueError("schema block sizes do not add up")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()

    @property
    def blocks(self) -> dict[str, slice]:
        a = self.n_user
        b = a + self.n1
        c = b + self.n2
        return {"user": slice(0, a), "unigram": slice(a, b), "bigram": slice(b, c),
                "topic": slice(c, c + self.n_topics)}


def _schema_from_names(names: Sequence[str]) -> FeatureSchema:
    uni, bi, n_user, n1, n2, nt = [], [], 0, 0, 0, 0
    for nm in names:
        kind, _, body = nm.partition(":")
        if kind == "user":
            n_user += 1
        elif kind == "1g":
            n1 += 1
            if not body.startswith(PAD_PREFIX):
                uni.append((body,))
        elif kind == "2g":
            n2 += 1
            if not body.startswith(PAD_PREFIX):
                bi.append(tuple(body.split(" ")))
        elif kind == "topic":
            nt += 1
        else:
            raise ValueError(f"unknown feature name {nm!r}")
    return FeatureSchema(tuple(names), n_user, n1, n2, nt, tuple(uni), tuple(bi))


def build_schema(sel: NgramSelection, n_topics: int = 100) -> FeatureSchema:
    names = [f"user:{n}" for n in USER_FEATURES]
    names += [f"1g:{g[0]}" for g in sel.unigrams]
    names += [f"1g:{PAD_PREFIX}{i}" for i in range(sel.n1 - len(sel.unigrams))]
    names += [f"2g:{' '.join(g)}" for g in sel.bigrams]
    names += [f"2g:{PAD_PREFIX}{i}" for i in range(sel.n2 - len(sel.bigrams))]
    names += [f"topic:{k + 1}" for k in range(n_topics)]
    return _schema_from_names(names)


@dataclass
class FeatureVector:
    user_id: str
    values: np.ndarray
    schema_hash: str
    flags: list[str] = field(default_factory=list)


def _block(counts: Counter, grams, size: int, L: int) -> np.ndarray:
    out = np.zeros(size)
    if L == 0:
        return out
    for i, g in enumerate(grams):
        c = counts.get(g, 0)
        if c:
            out[i] = c / L
    return out


def assemble(tl: UserTimeline, schema: FeatureSchema, topic_distribution: np.ndarray,
             schema_hash: str | None = None) -> FeatureVector:
    """Concatenate the blocks for one user in schema order.

    N-gram values are the user's count of the n-gram over the user's token
    count (description plus tweets), 0 when the user has no tokens.
    """
    if schema_hash is not None and schema_hash != schema.hash:
        raise ValueError("schema hash mismatch")
    topic = np.asarray(topic_distribution, dtype=np.float64)
    if topic.shape != (schema.n_topics,):
        raise ValueError(f"topic distribution must have length {schema.n_topics}")
    user, flags = user_level_features(tl)
    doc = user_document(tl)
    L = sum(len(s) for s in doc)
    values = np.concatenate([
        user,
        _block(_doc_counts(doc, 1), schema.unigrams, schema.n1, L),
        _block(_doc_counts(doc, 2), schema.bigrams, schema.n2, L),
        topic,
    ])
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite feature for user {tl.user_id}")
    return FeatureVector(tl.user_id, values, schema.hash, flags)


def assemble_matrix(timelines: Mapping[str, UserTimeline], schema: FeatureSchema,
                    topics: Mapping[str, np.ndarray], user_ids: Sequence[str] | None = None
                    ) -> tuple[list[str], np.ndarray]:
    ids = sorted(timelines) if user_ids is None else list(user_ids)
    X = np.empty((len(ids), len(schema)))
    for i, u in enumerate(ids):
        X[i] = assemble(timelines[u], schema, topics[u]).values
    return ids, X


# --- persistence -------------------------------------------------------------

def write_schema(schema: FeatureSchema, fh: TextIO, header: str | None = None) -> None:
    if header:
        fh.write(header)
    fh.write(f"# schema_hash={schema.hash}\n")
    for nm in schema.names:
        fh.write(nm + "\n")


def read_schema(path: str) -> FeatureSchema:
    stated = None
    names = []
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.rstrip("\n")
            if ln.startswith("# schema_hash="):
                stated = ln.split("=", 1)[1]
            elif ln and not ln.startswith("#"):
                names.append(ln)
    schema = _schema_from_names(names)
    if stated is not None and stated != schema.hash:
        raise ValueError("schema file hash does not match its names")
    return schema


def write_matrix(user_ids: Sequence[str], X: np.ndarray, schema: FeatureSchema, fh: TextIO,
                 header: str | None = None) -> None:
    """Dense delimited matrix, one user per line, names in the header row."""
    if header:
        fh.write(header)
    fh.write(f"# schema_hash={schema.hash}\n")
    fh.write("user_id\t" + "\t".join(schema.names) + "\n")
    for u, row in zip(user_ids, X):
        fh.write(u + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def read_matrix(path: str) -> tuple[list[str], np.ndarray, list[str], str | None]:
    """Returns ``(user_ids, X, names, schema_hash)``."""
    stated = None
    ids, rows, names = [], [], None
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            ln = ln.rstrip("\n")
            if ln.startswith("# schema_hash="):
                stated = ln.split("=", 1)[1]
                continue
            if ln.startswith("#") or not ln:
                continue
            parts = ln.split("\t")
            if names is None:
                names = parts[1:]
                continue
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    X = np.array(rows, dtype=np.float64).reshape(len(ids), len(names or []))
    return ids, X, names or [], stated
