"""Vocabulary and skip-gram word embeddings trained with negative sampling."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np
from numba import njit

from ..corpus import UserTimeline

__all__ = [
    "Vocabulary",
    "SkipGramConfig",
    "EmbeddingMatrix",
    "build_vocabulary",
    "train_skipgram",
    "sgns_pair_loss_and_grad",
    "write_embeddings",
    "read_embeddings",
]


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    counts: tuple[int, ...]
    min_count: int

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate vocabulary entries")

    def __len__(self) -> int:
        return len(self.words)

    @property
    def index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.words)}


def _sentences(timelines: Mapping[str, UserTimeline]) -> Iterable[list[str]]:
    for uid in sorted(timelines):
        yield from timelines[uid].token_lists()


def build_vocabulary(timelines: Mapping[str, UserTimeline], min_count: int = 5) -> Vocabulary:
    """Tokens of the cleaned tweets with frequency >= ``min_count``.

    Ordered by descending frequency, then lexicographically.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for toks in _sentences(timelines):
        counts.update(toks)
    if not counts:
        raise ValueError("empty corpus")
    kept = sorted(((w, c) for w, c in counts.items() if c >= min_count), key=lambda wc: (-wc[1], wc[0]))
    return Vocabulary(tuple(w for w, _ in kept), tuple(c for _, c in kept), min_count)


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 50
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "window", "negatives", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class EmbeddingMatrix:
    words: tuple[str, ...]
    vectors: np.ndarray  # V x d input vectors
    config: SkipGramConfig
    epoch_loss: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.words):
            raise ValueError("one vector per word required")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("non-finite embedding entries")

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors[self.words.index(word)]


# --- objective -------------------------------------------------------------

def sgns_pair_loss_and_grad(u, v_pos, V_neg):
    """Negative-sampling loss of one (center, context, negatives) triple.

    loss = -log s(u.v_pos) - sum_k log s(-u.v_k). Returns the loss and its
    gradients with respect to ``u``, ``v_pos`` and each row of ``V_neg``.
    """
    u = np.asarray(u, dtype=np.float64)
    v_pos = np.asarray(v_pos, dtype=np.float64)
    V_neg = np.atleast_2d(np.asarray(V_neg, dtype=np.float64))
    sp = u @ v_pos
    sn = V_neg @ u
    loss = np.logaddexp(0.0, -sp) + np.logaddexp(0.0, sn).sum()
    gp = -1.0 / (1.0 + math.exp(sp))   # d loss / d sp = s(sp) - 1
    gn = 1.0 / (1.0 + np.exp(-sn))     # d loss / d sn = s(sn)
    grad_u = gp * v_pos + gn @ V_neg
    return float(loss), grad_u, gp * u, gn[:, None] * u[None, :]


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True, inline="always")
def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _train(tokens, sent_ptr, W_in, W_out, cum, window, negatives, epochs, lr0, lr_min, seed):
    np.random.seed(seed)
    V, d = W_in.shape
    n_tok = tokens.shape[0]
    total = epochs * n_tok
    processed = 0
    grad_u = np.zeros(d)
    losses = np.zeros(epochs)
    for ep in range(epochs):
        loss_sum = 0.0
        pairs = 0
        for s in range(sent_ptr.shape[0] - 1):
            a, b = sent_ptr[s], sent_ptr[s + 1]
            for i in range(a, b):
                lr = lr0 * (1.0 - processed / (total + 1.0))
                if lr < lr_min:
                    lr = lr_min
                processed += 1
                center = tokens[i]
                reach = window - np.random.randint(window)  # dynamic window in [1, window]
                lo = max(a, i - reach)
                hi = min(b, i + reach + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    ctx = tokens[j]
                    grad_u[:] = 0.0
                    for k in range(negatives + 1):
                        if k == 0:
                            target = ctx
                            label = 1.0
                        else:
                            target = np.searchsorted(cum, np.random.random() * cum[-1], side="right")
                            if target >= V:
                                target = V - 1
                            if target == ctx:
                                continue
                            label = 0.0
                        dot = 0.0
                        for q in range(d):
                            dot += W_in[center, q] * W_out[target, q]
                        if label == 1.0:
                            loss_sum += _softplus(-dot)
                        else:
                            loss_sum += _softplus(dot)
                        g = _sigmoid(dot) - label  # d loss / d dot
                        for q in range(d):
                            grad_u[q] += g * W_out[target, q]
                            W_out[target, q] -= lr * g * W_in[center, q]
                    for q in range(d):
                        W_in[center, q] -= lr * grad_u[q]
                    pairs += 1
        losses[ep] = loss_sum / max(pairs, 1)
    return losses


def _encode_corpus(timelines, vocab: Vocabulary):
    idx = vocab.index
    toks, ptr = [], [0]
    for sent in _sentences(timelines):
        ids = [idx[w] for w in sent if w in idx]
        if len(ids) > 1:
            toks.extend(ids)
            ptr.append(len(toks))
    return np.array(toks, dtype=np.int64), np.array(ptr, dtype=np.int64)


def train_skipgram(timelines: Mapping[str, UserTimeline], vocab: Vocabulary,
                   config: SkipGramConfig = SkipGramConfig()) -> EmbeddingMatrix:
    """SGD over (center, context) pairs of every tweet, in sorted user order.

    Negatives are drawn from the unigram distribution raised to 3/4; the
    learning rate decays linearly towards ``min_learning_rate``. Runs on one
    thread so a fixed seed gives bit-identical vectors.
    """
    V = len(vocab)
    if V == 0:
        raise ValueError("empty vocabulary")
    if V < config.negatives + 1:
        raise ValueError(f"vocabulary of {V} words is smaller than negatives + 1 = {config.negatives + 1}")
    rng = np.random.default_rng(config.seed)
    W_in = (rng.random((V, config.dim)) - 0.5) / config.dim
    W_out = np.zeros((V, config.dim))
    cum = np.cumsum(np.asarray(vocab.counts, dtype=np.float64) ** 0.75)
    tokens, ptr = _encode_corpus(timelines, vocab)
    losses = _train(tokens, ptr, W_in, W_out, cum, config.window, config.negatives, config.epochs,
                    config.learning_rate, config.min_learning_rate, config.seed)
    return EmbeddingMatrix(vocab.words, W_in, config, losses.tolist())


# --- persistence -------------------------------------------------------------

def write_embeddings(E: EmbeddingMatrix, fh: TextIO, header: str | None = None) -> None:
    """Text dump: metadata comment lines, ``V d``, then ``word x1 ... xd``."""
    if header:
        fh.write(header)
    meta = " ".join(f"{k}={v}" for k, v in asdict(E.config).items())
    fh.write(f"# sesinfer-embedding {meta}\n")
    fh.write(f"{len(E.words)} {E.vectors.shape[1]}\n")
    for w, row in zip(E.words, E.vectors):
        fh.write(w + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path: str) -> EmbeddingMatrix:
    config = SkipGramConfig()
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    for ln in lines:
        if ln.startswith("# sesinfer-embedding"):
            kv = dict(item.split("=", 1) for item in ln.split()[2:])
            config = SkipGramConfig(**{k: (float(v) if "rate" in k else int(v)) for k, v in kv.items()})
    body = [ln for ln in lines if not ln.startswith("#")]
    V, d = map(int, body[0].split())
    words, rows = [], np.empty((V, d))
    for i, ln in enumerate(body[1:V + 1]):
        parts = ln.split(" ")
        words.append(parts[0])
        rows[i] = [float(x) for x in parts[1:]]
    return EmbeddingMatrix(tuple(words), rows, config)
