"""The twelve acceptance criteria, one test each, at their stated tolerances."""
import itertools
import json
import os
import shutil
import time

import numpy as np
import pytest
import scipy.linalg
import shapely
from scipy.special import expit
from sklearn.metrics import adjusted_rand_score

from sesinfer import cli
from sesinfer.census import CensusIndex, gini, validate_cell
from sesinfer.evaluation import auc
from sesinfer.features import read_matrix, read_schema
from sesinfer.homeloc import select_homes
from sesinfer.learn import DESK_SPACES, CVPlan, Dataset, GBTParams, nested_cv, parse_space, train_gbt
from sesinfer.learn._core import leaf_index
from sesinfer.occupation import SalaryTable, SalaryTableEntry, levenshtein, match_title, seq_similarity
from sesinfer.semantics import normalized_laplacian, sgns_pair_loss_and_grad, spectral_cluster
from sesinfer.synth import BOT_REASONS, SynthSpec, generate_traces

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def run_stages(cfg, stages, extra=()):
    for s in stages:
        code = cli.main([s, "--config", str(cfg), "-q", *extra])
        if code != 0:
            raise RuntimeError(f"stage {s} exited with {code}")


# --- 1 ---------------------------------------------------------------------------------

def _planted_run(d, signal):
    cfg = {
        "track": "census",
        "workdir": "out",
        "seed": 0,
        "synth": {"out_dir": "data", "n_users": 2000, "signal_strength": signal},
        "inputs": {"stream": "data/stream.jsonl", "profiles": "data/profiles.csv", "cells": "data/cells.jsonl"},
        "train": {"families": ["gbt"], "outer_folds": 5, "inner_folds": 5, "inner_repeats": 2,
                  "n_configs": 20, "space": {"gbt": DESK_SPACES["gbt"]}},
    }
    (d / "cfg.json").write_text(json.dumps(cfg))
    run_stages(d / "cfg.json", ["synth", "preprocess", "homes", "census-join", "embed", "topics", "features",
                                "train", "evaluate"])
    doc = json.loads("".join(ln for ln in open(d / "out" / "cv_gbt.json") if not ln.startswith("#")))
    assert all(f["inner_fits_per_config"] == 10 for f in doc["folds"])
    assert len(doc["folds"][0]["inner_mean_auc"]) == 20
    return doc["auc_mean"]


def test_criterion_01_planted_signal_end_to_end(tmp_path, criterion):
    t0 = time.perf_counter()
    (tmp_path / "strong").mkdir()
    (tmp_path / "null").mkdir()
    strong = _planted_run(tmp_path / "strong", 1.0)
    null = _planted_run(tmp_path / "null", 0.0)
    elapsed = time.perf_counter() - t0
    ok = strong >= 0.85 and 0.45 <= null <= 0.55 and elapsed <= 600
    criterion(1, ok, f"strong AUC {strong:.3f} (>= 0.85), null AUC {null:.3f} (in [0.45, 0.55]), "
                     f"{elapsed:.0f} s (<= 600)")
    assert ok


# --- 2 ---------------------------------------------------------------------------------

def test_criterion_02_home_inference(criterion):
    t0 = time.perf_counter()
    spec = SynthSpec(n_users=1000, night_home_fraction=0.6, bot_fraction=0.1, bot_kinds=("speed", "burst"))
    pop = generate_traces(spec, seed=2024)
    homes, status = select_homes(pop.traces, pop.index)
    elapsed = time.perf_counter() - t0
    humans = [u for u in pop.traces if u not in pop.bots]
    recovered = np.mean([u in homes and homes[u].home == pop.homes[u] for u in humans])
    bots_ok = all(not status[u].passed and status[u].reasons
                  and set(status[u].reasons) <= set(BOT_REASONS[k]) for u, k in pop.bots.items())
    ok = recovered >= 0.95 and bots_ok and len(pop.bots) == 100 and elapsed <= 30
    criterion(2, ok, f"home recovery {recovered:.3f} (>= 0.95), {len(pop.bots)} bots all rejected with "
                     f"planted reasons: {bots_ok}, {elapsed:.1f} s (<= 30)")
    assert ok


# --- 3 ---------------------------------------------------------------------------------

def _pair_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def test_criterion_03_auc_oracle(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, n)
        y[:2] = (0, 1)
        s = rng.integers(0, max(2, n // 4), n).astype(float)  # many ties
        worst = max(worst, abs(auc(s, y) - _pair_auc(s, y)))
    ok = worst <= 1e-12
    criterion(3, ok, f"max |rank AUC - pair AUC| = {worst:.2e} over 200 instances (<= 1e-12)")
    assert ok


# --- 4 ---------------------------------------------------------------------------------

def test_criterion_04_gini(criterion):
    equal = all(gini(np.full(n, 7.5)) == 0.0 for n in (1, 2, 10, 1000))
    single = all(gini(np.r_[np.zeros(n - 1), 42.0]) == (n - 1) / n for n in (2, 3, 7, 100, 1001))
    rng = np.random.default_rng(4)
    worst_mad, worst_scale = 0.0, 0.0
    for _ in range(50):
        x = rng.lognormal(10, 0.6, int(rng.integers(2, 400)))
        mad = np.abs(x[:, None] - x[None, :]).sum() / (2 * len(x) ** 2 * x.mean())
        worst_mad = max(worst_mad, abs(gini(x) - mad))
        for c in (0.5, 3, 100):
            worst_scale = max(worst_scale, abs(gini(c * x) - gini(x)))
    ok = equal and single and worst_mad <= 1e-9 and worst_scale <= 1e-12
    criterion(4, ok, f"equal -> 0: {equal}, single holder -> (n-1)/n: {single}, MAD oracle err "
                     f"{worst_mad:.1e} (<= 1e-9), scale err {worst_scale:.1e}")
    assert ok


# --- 5 ---------------------------------------------------------------------------------

def test_criterion_05_skipgram_gradient(criterion):
    rng = np.random.default_rng(5)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        d, k = 50, int(rng.integers(1, 11))
        args = [rng.normal(0, 0.5, d), rng.normal(0, 0.5, d), rng.normal(0, 0.5, (k, d))]
        analytic = sgns_pair_loss_and_grad(*args)[1:]
        for which in range(3):
            x = args[which]
            num = np.zeros_like(x)
            for i in np.ndindex(x.shape):
                plus = [a.copy() for a in args]
                minus = [a.copy() for a in args]
                plus[which][i] += h
                minus[which][i] -= h
                num[i] = (sgns_pair_loss_and_grad(*plus)[0] - sgns_pair_loss_and_grad(*minus)[0]) / (2 * h)
            a = analytic[which]
            rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-6)
            worst = max(worst, float(rel.max()))
    ok = worst < 1e-4
    criterion(5, ok, f"max relative gradient error {worst:.2e} over 100 triples (< 1e-4)")
    assert ok


# --- 6 ---------------------------------------------------------------------------------

def _blocks(sizes, rng, noise=0.0, within=1.0):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    M = np.where(labels[:, None] == labels[None, :], within, 0.0)
    if noise:
        N = np.triu(rng.uniform(0, noise, M.shape), 1)
        M = np.clip(M + N + N.T, 0, 1)
    np.fill_diagonal(M, 1.0)
    perm = rng.permutation(len(labels))
    return M[np.ix_(perm, perm)], labels[perm]


def test_criterion_06_spectral(criterion):
    rng = np.random.default_rng(6)
    exact = []
    for K in (2, 5, 10):
        M, truth = _blocks(rng.integers(3, 12, K), rng)
        exact.append(adjusted_rand_score(truth, spectral_cluster(M, K, seed=0).topics))
    noisy = []
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        M, truth = _blocks(r.integers(15, 35, 5), r, noise=0.3, within=0.7)
        noisy.append(adjusted_rand_score(truth, spectral_cluster(M, 5, seed=seed).topics))
    mult_ok = True
    for comps in ([5], [3, 4], [2, 6, 3, 1], [4] * 6):
        V = sum(comps)
        M = np.zeros((V, V))
        start = 0
        for c in comps:
            B = rng.uniform(0.1, 1.0, (c, c))
            M[start:start + c, start:start + c] = (B + B.T) / 2
            start += c
        np.fill_diagonal(M, 1.0)
        p = rng.permutation(V)
        L, _ = normalized_laplacian(M[np.ix_(p, p)])
        mult_ok &= int(np.sum(np.abs(scipy.linalg.eigvalsh(L)) < 1e-8)) == len(comps)
    ok = all(a == 1.0 for a in exact) and min(noisy) >= 0.99 and mult_ok
    criterion(6, ok, f"noiseless ARI {exact} (== 1.0), noisy min ARI {min(noisy):.3f} over 10 seeds (>= 0.99), "
                     f"zero-eigenvalue multiplicity = components: {mult_ok}")
    assert ok


# --- 7 ---------------------------------------------------------------------------------

def test_criterion_07_gbt(criterion):
    rng = np.random.default_rng(7)
    n, p = 400, 12
    X = rng.normal(size=(n, p))
    X[rng.random((n, p)) < 0.3] = 0.0
    y = (X[:, 0] + X[:, 1] * X[:, 2] + rng.normal(0, 0.5, n) > 0).astype(int)
    prm = GBTParams(n_rounds=50, learning_rate=0.1, max_depth=4, reg_lambda=1.0)
    m = train_gbt(X, y, prm, seed=0)
    margin = np.full(n, m.base_margin)
    worst, n_leaves = 0.0, 0
    for tree in m.trees:
        q = expit(margin)
        g, h = q - y, q * (1 - q)
        leaves = leaf_index(X, tree.feature, tree.threshold, tree.left, tree.right)
        for leaf in np.unique(leaves):
            w = -g[leaves == leaf].sum() / (h[leaves == leaf].sum() + prm.reg_lambda)
            worst = max(worst, abs(tree.value[leaf] - w) / max(abs(w), 1e-12))
            n_leaves += 1
        margin += prm.learning_rate * tree.value[leaves]
    monotone = []
    for s in range(5):
        r = np.random.default_rng(70 + s)
        Xs = r.normal(size=(300, 8))
        ys = (Xs @ r.normal(size=8) + r.normal(0, 1, 300) > 0).astype(int)
        loss = train_gbt(Xs, ys, GBTParams(n_rounds=60, learning_rate=0.1), seed=s, track_loss=True
                         ).history["train_log_loss"]
        monotone.append(bool(np.all(np.diff(loss) <= 0)))
    ok = len(m.trees) == 50 and worst <= 1e-9 and all(monotone)
    criterion(7, ok, f"leaf identity rel err {worst:.1e} on {n_leaves} leaves of 50 trees; "
                     f"log-loss non-increasing on 5 datasets: {monotone}")
    assert ok


# --- 8 ---------------------------------------------------------------------------------

def test_criterion_08_nested_cv_bookkeeping(criterion):
    rng = np.random.default_rng(8)
    n = 157
    X = rng.normal(size=(n, 4))
    y = (X[:, 0] + rng.normal(0, 1, n) > 0.3).astype(int)
    data = Dataset(X, y, [f"id{i:03d}" for i in range(n)])
    plan = CVPlan(outer_folds=5, inner_folds=5, inner_repeats=10, n_configs=3, seed=8)
    rep = nested_cv(data, "gbt", plan, space=parse_space({"n_rounds": ["int", 2, 4]}),
                    fixed={"max_depth": 2})
    per_config = {f.inner_auc.shape[1] for f in rep.folds}
    ids = np.array(data.user_ids)
    overlap = 0
    strat_ok = True
    rate = y.mean()
    for f, splits in zip(rep.folds, rep.inner_splits):
        test = set(f.test_ids)
        for tr, va in splits:
            overlap += len(test & set(ids[tr])) + len(test & set(ids[va]))
            for part in (tr, va):
                strat_ok &= abs(y[part].sum() - rate * len(part)) <= 1
        te = np.isin(ids, f.test_ids)
        strat_ok &= abs(y[te].sum() - rate * te.sum()) <= 1
    ok = (per_config == {50} and overlap == 0 and strat_ok and rep.counters["leakage_violations"] == 0
          and rep.counters["inner_fits"] == plan.total_inner_fits)
    criterion(8, ok, f"inner AUC samples per config {sorted(per_config)} (== 50), outer/inner id overlap {overlap}, "
                     f"class counts within 1 of global: {strat_ok}, inner fits {rep.counters['inner_fits']}")
    assert ok


# --- 9 and 12 share two full runs of the bundled fixture ------------------------------------

ALL_STAGES = ["synth", "preprocess", "homes", "census-join", "occupations", "embed", "topics", "features",
              "train", "evaluate", "report"]


@pytest.fixture(scope="module")
def twin_runs(tmp_path_factory):
    dirs = []
    for name in ("a", "b"):
        d = tmp_path_factory.mktemp(f"run_{name}")
        shutil.copy(os.path.join(FIXTURES, "pipeline_small.json"), d / "cfg.json")
        run_stages(d / "cfg.json", ALL_STAGES)
        dirs.append(d)
    return dirs


def test_criterion_09_feature_schema(twin_runs, criterion):
    lengths, hashes = set(), set()
    for d in twin_runs:
        schema = read_schema(str(d / "out" / "schema.txt"))
        _, X, names, h = read_matrix(str(d / "out" / "features.tsv"))
        lengths.update({X.shape[1], len(schema), len(names)})
        hashes.update({h, schema.hash})
        blocks = (schema.n_user, schema.n1, schema.n2, schema.n_topics)
    ok = lengths == {1117} and len(hashes) == 1 and blocks == (7, 450, 560, 100)
    criterion(9, ok, f"vector lengths {sorted(lengths)} (== 1117), blocks {blocks}, "
                     f"schema hashes across reruns: {len(hashes)} distinct")
    assert ok


# --- 10 --------------------------------------------------------------------------------

def _dp(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def test_criterion_10_occupation_matching(criterion):
    rng = np.random.default_rng(10)
    alphabet = list("abcdeéè -")
    exact = True
    for _ in range(500):
        a = "".join(rng.choice(alphabet, int(rng.integers(0, 15))))
        b = "".join(rng.choice(alphabet, int(rng.integers(0, 15))))
        m = max(len(a), len(b))
        expect = 1.0 if m == 0 else 1 - _dp(a, b) / m
        exact &= seq_similarity(a, b) == expect
    titles = ["ingénieur logiciel", "chef de projet informatique", "médecin généraliste", "serveur",
              "directeur commercial", "pharmacien", "agent d'entretien", "caissière", "architecte",
              "consultant en stratégie"]
    table = SalaryTable([SalaryTableEntry(str(100 + i), t, 20_000.0 + 1000 * i) for i, t in enumerate(titles)])
    cases = []
    for i in range(50):
        src = titles[i % len(titles)]
        k = i % 4
        pos = sorted(rng.choice(len(src), k, replace=False).tolist())
        noisy = list(src)
        for q in pos:
            noisy[q] = "ж"  # absent from every title, so each substitution costs exactly 1
        cases.append(("".join(noisy), str(100 + i % len(titles)), k, len(src)))
    analytic = {n for n, _, k, L in cases if 1 - k / L >= 0.9}
    got90 = {n for n, *_ in cases if match_title(n, table, 0.90).resolved}
    got95 = {n for n, *_ in cases if match_title(n, table, 0.95).resolved}
    ids_ok = all(match_title(n, table).occupation_id == src for n, src, *_ in cases if n in analytic)
    dist_ok = all(levenshtein(n, titles[int(s) - 100]) == k for n, s, k, _ in cases)
    ok = exact and got95 <= got90 and got90 == analytic and ids_ok and dist_ok
    criterion(10, ok, f"DP oracle exact on 500 pairs: {exact}, matched@0.95 subset of @0.90: {got95 <= got90}, "
                      f"50-title acceptance set == analytic ({len(analytic)} titles): {got90 == analytic and ids_ok}")
    assert ok


# --- 11 --------------------------------------------------------------------------------

def test_criterion_11_point_in_polygon(criterion):
    size, lat0, lon0 = 0.01, 48.0, 2.0
    cells = []
    for i, j in itertools.product(range(20), range(25)):
        ring = [[lat0 + i * size, lon0 + j * size], [lat0 + i * size, lon0 + (j + 1) * size],
                [lat0 + (i + 1) * size, lon0 + (j + 1) * size], [lat0 + (i + 1) * size, lon0 + j * size]]
        cells.append(validate_cell(f"c{i:02d}{j:02d}", [ring], [1, 2, 3, 4, 5, 6, 7, 8, 9]))
    idx = CensusIndex(cells)
    rng = np.random.default_rng(11)
    pts = np.column_stack([rng.uniform(47.99, 48.21, 10_000), rng.uniform(1.99, 2.26, 10_000)])
    # grid-aligned points hit shared edges and corners
    pts[:500] = np.round(pts[:500] / size) * size
    got = [idx.locate(a, b) for a, b in pts]
    expected = np.full(len(pts), None, dtype=object)
    geoms = shapely.points(pts[:, 1], pts[:, 0])
    for c in sorted(idx.cells, key=lambda c: c.cell_id, reverse=True):
        expected[shapely.covers(shapely.Polygon(c.rings[0][:, ::-1]), geoms)] = c.cell_id
    agree = got == list(expected)

    sq = lambda a, b: [[a, b], [a, b + 1], [a + 1, b + 1], [a + 1, b]]  # noqa: E731
    fixture = [validate_cell("b", [sq(0, 0)], [1] * 9), validate_cell("a", [sq(0, 1)], [1] * 9),
               validate_cell("c", [sq(1, 0)], [1] * 9)]
    boundary_ok = True
    for order in itertools.permutations(fixture):
        ix = CensusIndex(list(order))
        boundary_ok &= (ix.locate(0.5, 1.0), ix.locate(1.0, 0.5), ix.locate(1.0, 1.0)) == ("a", "b", "a")
    ok = agree and boundary_ok
    criterion(11, ok, f"locate == exhaustive scan on 10^4 points over 500 cells: {agree}; "
                      f"shared-edge resolution stable under 6 cell orders: {boundary_ok}")
    assert ok


# --- 12 --------------------------------------------------------------------------------

def test_criterion_12_determinism(twin_runs, criterion):
    a, b = (d / "out" / "report" for d in twin_runs)
    names = sorted(os.listdir(a))
    same_names = names == sorted(os.listdir(b))
    diff = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    ok = same_names and not diff and len(names) >= 8
    criterion(12, ok, f"{len(names)} report artifacts, byte-identical across two runs: {not diff and same_names}")
    assert ok
