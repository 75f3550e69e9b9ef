from collections import Counter

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from sesinfer.corpus import GeoTweet, UserTimeline
from sesinfer.semantics import (
    SkipGramConfig,
    TopicModel,
    build_vocabulary,
    normalized_laplacian,
    read_distributions,
    read_embeddings,
    read_topic_model,
    sgns_pair_loss_and_grad,
    similarity_matrix,
    spectral_cluster,
    topic_correlation,
    topic_distributions,
    topic_income_discrimination,
    train_skipgram,
    user_topic_distribution,
    write_distributions,
    write_embeddings,
    write_topic_model,
)


def timelines(per_user: dict[str, list[str]]) -> dict[str, UserTimeline]:
    return {u: UserTimeline(u, [GeoTweet(u, float(i), s) for i, s in enumerate(texts)])
            for u, texts in per_user.items()}


def topic_corpus(n_sent, seed=0, n_topics=5, per_topic=10, length=8):
    rng = np.random.default_rng(seed)
    sents = []
    for _ in range(n_sent):
        t = rng.integers(n_topics)
        sents.append(" ".join(f"w{t}x{i}" for i in rng.integers(per_topic, size=length)))
    return timelines({"u1": sents[::2], "u2": sents[1::2]})


# --- vocabulary ----------------------------------------------------------------

def test_vocabulary_trivial():
    T = timelines({"u": ["a a a b"]})
    assert build_vocabulary(T, 2).words == ("a",)
    assert set(build_vocabulary(T, 1).words) == {"a", "b"}
    with pytest.raises(ValueError):
        build_vocabulary(T, 0)
    with pytest.raises(ValueError):
        build_vocabulary(timelines({"u": [""]}), 1)


def test_vocabulary_matches_hashmap_oracle():
    T = topic_corpus(300, seed=3, per_topic=30)
    oracle = {}
    for tl in T.values():
        for tw in tl.tweets:
            for w in tw.text.split():
                oracle[w] = oracle.get(w, 0) + 1
    v = build_vocabulary(T, 5)
    expect = sorted((w for w, c in oracle.items() if c >= 5), key=lambda w: (-oracle[w], w))
    assert list(v.words) == expect
    assert list(v.counts) == [oracle[w] for w in expect]


# --- skip-gram -------------------------------------------------------------------

def _numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6))


def test_sgns_gradient_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        d, k = 50, int(rng.integers(1, 8))
        u, vp, Vn = rng.normal(0, 0.5, d), rng.normal(0, 0.5, d), rng.normal(0, 0.5, (k, d))
        _, gu, gv, gN = sgns_pair_loss_and_grad(u, vp, Vn)
        worst = max(worst,
                    _rel_err(gu, _numeric_grad(lambda x: sgns_pair_loss_and_grad(x, vp, Vn)[0], u)),
                    _rel_err(gv, _numeric_grad(lambda x: sgns_pair_loss_and_grad(u, x, Vn)[0], vp)),
                    _rel_err(gN, _numeric_grad(lambda x: sgns_pair_loss_and_grad(u, vp, x)[0], Vn)))
    assert worst < 1e-4


def test_sgns_loss_closed_form():
    u, v = np.array([1.0, 0.0]), np.array([2.0, 0.0])
    loss, *_ = sgns_pair_loss_and_grad(u, v, np.array([[0.0, 0.0]]))
    assert loss == pytest.approx(np.log1p(np.exp(-2.0)) + np.log(2.0), rel=1e-14)


def test_skipgram_deterministic():
    T = topic_corpus(200)
    v = build_vocabulary(T, 5)
    cfg = SkipGramConfig(dim=16, epochs=2, seed=4)
    a, b = train_skipgram(T, v, cfg), train_skipgram(T, v, cfg)
    assert np.array_equal(a.vectors, b.vectors)
    assert a.epoch_loss == b.epoch_loss
    c = train_skipgram(T, v, SkipGramConfig(dim=16, epochs=2, seed=5))
    assert not np.array_equal(a.vectors, c.vectors)


def test_skipgram_two_word_ordering():
    T = timelines({"u": ["a b a b a b a b a b"] * 200 + ["c d e f g"]})
    v = build_vocabulary(T, 1)
    for seed in range(3):
        E = train_skipgram(T, v, SkipGramConfig(dim=10, negatives=1, seed=seed))
        U = E.vectors / np.linalg.norm(E.vectors, axis=1, keepdims=True)
        ia, ib, ic = (v.index[w] for w in "abc")
        assert U[ia] @ U[ib] > max(U[ia] @ U[ic], U[ib] @ U[ic])


def test_skipgram_loss_decreases_early():
    T = topic_corpus(300, seed=1)
    v = build_vocabulary(T, 5)
    for seed in range(3):
        E = train_skipgram(T, v, SkipGramConfig(epochs=3, seed=seed))
        assert np.all(np.diff(E.epoch_loss) <= 0), E.epoch_loss


def test_skipgram_errors_and_defaults():
    T = timelines({"u": ["a b a b"]})
    v = build_vocabulary(T, 1)
    with pytest.raises(ValueError):
        train_skipgram(T, v, SkipGramConfig(negatives=5))
    with pytest.raises(ValueError):
        SkipGramConfig(window=0)
    cfg = SkipGramConfig()
    assert (cfg.dim, cfg.window, cfg.negatives, cfg.epochs, cfg.learning_rate) == (50, 5, 5, 5, 0.025)


def test_embedding_roundtrip(tmp_path):
    T = topic_corpus(100)
    v = build_vocabulary(T, 5)
    E = train_skipgram(T, v, SkipGramConfig(dim=8, epochs=1, seed=2))
    p = tmp_path / "emb.txt"
    with open(p, "w") as fh:
        write_embeddings(E, fh, header="# config=x seed=2\n")
    F = read_embeddings(str(p))
    assert F.words == E.words and np.array_equal(F.vectors, E.vectors) and F.config == E.config


# --- similarity -------------------------------------------------------------------

def test_similarity_trivial():
    M = similarity_matrix(np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [-1.0, 0.0]]))
    assert M[0, 1] == 1.0 and M[0, 2] == 0.0 and M[0, 3] == 0.0
    with pytest.raises(ValueError, match="zebra"):
        similarity_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]), words=["cat", "zebra"])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 10), st.integers(0, 2**31))
def test_similarity_invariants(V, d, seed):
    U = np.random.default_rng(seed).normal(size=(V, d))
    M = similarity_matrix(U)
    assert np.array_equal(M, M.T)
    assert np.all(np.diag(M) == 1.0)
    assert M.min() >= 0.0 and M.max() <= 1.0
    raw = (U @ U.T) / np.outer(np.linalg.norm(U, axis=1), np.linalg.norm(U, axis=1))
    off = ~np.eye(V, dtype=bool)
    assert np.all(M[off & (raw < 0)] == 0.0)


# --- spectral clustering -------------------------------------------------------

def block_matrix(sizes, noise=0.0, seed=0, within=1.0, between=0.0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    M = np.where(labels[:, None] == labels[None, :], within, between).astype(float)
    if noise:
        N = rng.uniform(0, noise, M.shape)
        M = np.clip(M + np.triu(N, 1) + np.triu(N, 1).T, 0, 1)
    np.fill_diagonal(M, 1.0)
    perm = rng.permutation(len(labels))
    return M[np.ix_(perm, perm)], labels[perm]


@pytest.mark.parametrize("K", [2, 5, 10])
def test_noiseless_blocks_exact(K):
    sizes = [4 + (3 * i) % 7 for i in range(K)]
    M, truth = block_matrix(sizes, seed=K)
    tm = spectral_cluster(M, K, seed=0)
    assert adjusted_rand_score(truth, tm.topics) == 1.0


def test_noisy_five_blocks_ten_seeds():
    for seed in range(10):
        M, truth = block_matrix([20, 25, 30, 15, 22], noise=0.3, seed=seed, within=0.7)
        tm = spectral_cluster(M, 5, seed=seed)
        assert adjusted_rand_score(truth, tm.topics) >= 0.99


def test_identity_gives_singletons():
    tm = spectral_cluster(np.eye(6), 6)
    assert sorted(tm.topics.tolist()) == list(range(6))


def test_partition_and_canonical_labels():
    M, _ = block_matrix([5, 6, 7], noise=0.1, seed=1, within=0.8)
    tm = spectral_cluster(M, 3, seed=3)
    assert len(tm.topics) == 18 and tm.sizes().sum() == 18
    firsts = [int(np.flatnonzero(tm.topics == t)[0]) for t in range(3)]
    assert firsts == sorted(firsts)


def test_isolated_words_go_to_overflow():
    M, truth = block_matrix([5, 5], seed=2)
    V = len(truth)
    big = np.zeros((V + 2, V + 2))
    big[:V, :V] = M
    # zero rows, including diagonal, mimic words with no similar neighbour
    tm = spectral_cluster(big, 3, seed=0)
    assert tm.overflow_topic == 2
    assert tm.topics[V:].tolist() == [2, 2]
    assert adjusted_rand_score(truth, tm.topics[:V]) == 1.0


def test_K_larger_than_V():
    with pytest.raises(ValueError):
        spectral_cluster(np.eye(3), 4)


@pytest.mark.parametrize("sizes", [[3], [4, 2], [3, 3, 5, 1], [2, 2, 2, 2, 2]])
def test_zero_eigenvalue_multiplicity(sizes):
    rng = np.random.default_rng(len(sizes))
    V = sum(sizes)
    M = np.zeros((V, V))
    start = 0
    for s in sizes:
        B = rng.uniform(0.2, 1.0, (s, s))
        M[start:start + s, start:start + s] = (B + B.T) / 2
        start += s
    np.fill_diagonal(M, 1.0)
    L, keep = normalized_laplacian(M)
    ev = scipy.linalg.eigvalsh(L)
    assert np.sum(np.abs(ev) < 1e-8) == len(sizes)


def test_topic_model_io(tmp_path):
    tm = TopicModel(("a", "b", "c"), np.array([0, 2, 1]), 3)
    p = tmp_path / "topics.csv"
    with open(p, "w") as fh:
        write_topic_model(tm, fh)
    assert p.read_text().splitlines()[1] == "a,1"
    back = read_topic_model(str(p), 3)
    assert back.words == tm.words and np.array_equal(back.topics, tm.topics)


# --- topic usage ------------------------------------------------------------------

def test_user_distribution_trivial():
    tm = TopicModel(("a", "b", "c", "d"), np.array([0, 1, 2, 2]), 4)
    T = timelines({"x": ["c d c", "zzz"], "y": ["nothing here"]})
    assert user_topic_distribution(T["x"], tm).tolist() == [0, 0, 1, 0]
    assert user_topic_distribution(T["y"], tm).tolist() == [0, 0, 0, 0]


def test_user_distribution_counting_oracle():
    T = topic_corpus(400, seed=7, per_topic=12)
    rng = np.random.default_rng(0)
    v = build_vocabulary(T, 1)
    tm = TopicModel(v.words, rng.integers(0, 7, len(v)), 7)
    P = topic_distributions(T, tm)
    for row, uid in zip(P, sorted(T)):
        counts = Counter()
        for tw in T[uid].tweets:
            for w in tw.text.split():
                counts[tm.word_topic[w]] += 1
        total = sum(counts.values())
        expect = [counts[t] / total for t in range(7)]
        assert np.allclose(row, expect, rtol=0, atol=1e-15)
        assert abs(row.sum() - 1) <= 1e-12


def test_distribution_io(tmp_path):
    P = np.array([[0.25, 0.75], [0.0, 0.0]])
    p = tmp_path / "d.csv"
    with open(p, "w") as fh:
        write_distributions(["u1", "u2"], P, fh)
    ids, Q = read_distributions(str(p))
    assert ids == ["u1", "u2"] and np.array_equal(P, Q)


def test_topic_correlation_cases():
    rng = np.random.default_rng(0)
    x = rng.random(50)
    P = np.column_stack([x, x, 1 - x, np.full(50, 0.3)])
    tc = topic_correlation(P)
    assert tc.matrix[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert tc.matrix[0, 2] == pytest.approx(-1.0, abs=1e-12)
    assert tc.matrix[3, 0] == 0.0 and tc.matrix[3, 3] == 1.0
    assert tc.zero_variance.tolist() == [3]
    assert sorted(tc.order.tolist()) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        topic_correlation(P[:1])


def test_topic_correlation_independent():
    P = np.random.default_rng(1).random((10_000, 6))
    R = topic_correlation(P).matrix
    assert np.max(np.abs(R[~np.eye(6, dtype=bool)])) < 0.1


def test_income_discrimination():
    P = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.0, 1.0]])
    inc = np.array([100.0, 80.0, 20.0, 10.0])
    g = topic_income_discrimination(P, inc)
    assert g.mention_mean.tolist() == [90.0, (80 + 20 + 10) / 3]
    assert g.other_mean.tolist() == [15.0, 100.0]
    assert g.mention_n.tolist() == [2, 3]
    allm = topic_income_discrimination(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
    assert np.isnan(allm.other_mean[0]) and allm.flags


def test_income_discrimination_planted():
    # mention probability of topic 0 is q_hi for high earners and q_lo for low earners
    rng = np.random.default_rng(5)
    n, q_hi, q_lo, hi, lo = 20_000, 0.8, 0.2, 3000.0, 1000.0
    rich = rng.random(n) < 0.5
    inc = np.where(rich, hi, lo) + rng.normal(0, 100, n)
    mention = rng.random(n) < np.where(rich, q_hi, q_lo)
    P = np.column_stack([mention * 1.0, 1.0 - mention])
    g = topic_income_discrimination(P, inc)
    expect_m = (q_hi * hi + q_lo * lo) / (q_hi + q_lo)
    expect_o = ((1 - q_hi) * hi + (1 - q_lo) * lo) / (2 - q_hi - q_lo)
    assert g.mention_mean[0] == pytest.approx(expect_m, abs=30)
    assert g.other_mean[0] == pytest.approx(expect_o, abs=30)
