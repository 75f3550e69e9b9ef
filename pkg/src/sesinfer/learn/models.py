"""Tree ensembles: second-order gradient boosting, random forest, discrete AdaBoost."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit, logit

from ._core import GINI, NEWTON, filter_rows, grow_tree, predict_forest, presort

__all__ = [
    "Dataset",
    "Tree",
    "EnsembleModel",
    "GBTParams",
    "RFParams",
    "AdaBoostParams",
    "Presorted",
    "train_gbt",
    "train_random_forest",
    "train_adaboost",
    "predict_proba",
    "save_model",
    "load_model",
]


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    user_ids: list[str]
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y).astype(np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y) or len(self.y) != len(self.user_ids):
            raise ValueError("X, y and user_ids must agree in length")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite entries")
        if not np.all(np.isin(self.y, (0, 1))):
            raise ValueError("labels must be 0/1")
        if self.feature_names is not None and len(self.feature_names) != self.X.shape[1]:
            raise ValueError("feature_names length does not match X width")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class Tree:
    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # go left iff x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # leaf output (also filled at internal nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    def is_leaf(self, i: int) -> bool:
        return self.feature[i] < 0

    def to_record(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                "left": self.to_record(int(self.left[i])), "right": self.to_record(int(self.right[i]))}

    @classmethod
    def from_record(cls, rec: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def visit(node):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "leaf" in node:
                value[i] = float(node["leaf"])
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                left[i] = visit(node["left"])
                right[i] = visit(node["right"])
            return i

        visit(rec)
        return cls(np.array(feature, dtype=np.int32), np.array(threshold), np.array(left, dtype=np.int32),
                   np.array(right, dtype=np.int32), np.array(value))


@dataclass(frozen=True)
class GBTParams:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 4
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    base_score: float = 0.5

    def __post_init__(self):
        if self.n_rounds < 0 or self.max_depth < 0:
            raise ValueError("n_rounds and max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.reg_lambda < 0 or self.min_child_weight < 0:
            raise ValueError("reg_lambda and min_child_weight must be >= 0")
        if not (0 < self.subsample <= 1 and 0 < self.colsample <= 1):
            raise ValueError("subsample and colsample must be in (0, 1]")
        if not 0 < self.base_score < 1:
            raise ValueError("base_score must be in (0, 1)")


@dataclass(frozen=True)
class RFParams:
    n_trees: int = 200
    max_depth: int = 8
    max_features: float | str = "sqrt"  # "sqrt" or a fraction of columns
    min_samples_leaf: float = 1.0
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 0:
            raise ValueError("n_trees must be >= 1 and max_depth >= 0")
        if self.max_features != "sqrt" and not (isinstance(self.max_features, (int, float))
                                                and 0 < self.max_features <= 1):
            raise ValueError("max_features must be 'sqrt' or a fraction in (0, 1]")

    def mtry(self, p: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(p)))
        return max(1, int(round(self.max_features * p)))


@dataclass(frozen=True)
class AdaBoostParams:
    n_learners: int = 100
    stump_depth: int = 1

    def __post_init__(self):
        if self.n_learners < 1:
            raise ValueError("n_learners must be >= 1")
        if self.stump_depth not in (1, 2):
            raise ValueError("stump_depth must be 1 or 2")


@dataclass
class EnsembleModel:
    """Trees plus the link that turns their weighted sum into a probability.

    link ``logistic``: p = sigmoid(base + sum w_t f_t(x))  (boosting)
    link ``mean``:     p = sum w_t f_t(x), weights 1/T      (forest)
    link ``logistic2``: p = sigmoid(2 sum w_t f_t(x))       (AdaBoost, f_t in {-1, +1})
    """

    family: str
    trees: list[Tree]
    tree_weights: np.ndarray
    base_margin: float
    link: str
    n_features: int
    params: dict
    degenerate: bool = False
    history: dict = field(default_factory=dict)

    def _flat(self):
        if not self.trees:
            return None
        starts = np.zeros(len(self.trees) + 1, dtype=np.int64)
        np.cumsum([t.n_nodes for t in self.trees], out=starts[1:])
        feature = np.concatenate([t.feature for t in self.trees])
        threshold = np.concatenate([t.threshold for t in self.trees])
        value = np.concatenate([t.value for t in self.trees])
        left = np.concatenate([t.left for t in self.trees])
        right = np.concatenate([t.right for t in self.trees])
        return feature, threshold, left, right, value, starts

    def decision_function(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        flat = self._flat()
        out = np.full(len(X), self.base_margin)
        if flat is not None:
            f, t, l, r, v, s = flat
            out += predict_forest(X, f, t, l, r, v, s, np.asarray(self.tree_weights, dtype=np.float64))
        return out

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        if self.link == "logistic":
            return expit(z)
        if self.link == "logistic2":
            return expit(2.0 * z)
        return np.clip(z, 1e-12, 1 - 1e-12)

    def to_dict(self) -> dict:
        return {
            "format": "sesinfer-ensemble",
            "version": 1,
            "family": self.family,
            "link": self.link,
            "n_features": self.n_features,
            "base_margin": self.base_margin,
            "degenerate": self.degenerate,
            "params": self.params,
            "trees": [{"weight": float(w), "root": t.to_record()} for t, w in zip(self.trees, self.tree_weights)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleModel":
        if d.get("format") != "sesinfer-ensemble":
            raise ValueError("not a serialized ensemble")
        trees = [Tree.from_record(t["root"]) for t in d["trees"]]
        return cls(d["family"], trees, np.array([t["weight"] for t in d["trees"]], dtype=float),
                   float(d["base_margin"]), d["link"], int(d["n_features"]), d["params"], bool(d["degenerate"]))


def predict_proba(model: EnsembleModel, X) -> np.ndarray:
    return model.predict_proba(X)


def save_model(model: EnsembleModel, path: str, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(header)
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> EnsembleModel:
    with open(path, encoding="utf-8") as fh:
        text = "".join(ln for ln in fh if not ln.startswith("#"))
    return EnsembleModel.from_dict(json.loads(text))


# --- training ---------------------------------------------------------------

class Presorted:
    """Column-sorted view of a feature matrix, reusable across row subsets."""

    def __init__(self, X: np.ndarray):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.col_ptr, self.col_rows, self.col_vals, self.col_nneg = presort(self.X)

    def restricted(self, rows) -> "Presorted":
        """Same matrix, column entries limited to ``rows`` (no re-sorting)."""
        keep = np.zeros(len(self.X), dtype=bool)
        keep[rows] = True
        out = object.__new__(Presorted)
        out.X = self.X
        out.col_ptr, out.col_rows, out.col_vals, out.col_nneg = filter_rows(
            self.col_ptr, self.col_rows, self.col_vals, self.col_nneg, keep)
        return out

    def grow(self, feats, a, b, in_sample, max_depth, lam, min_child, mode, mtry=0, seed=0) -> Tree:
        arrays = grow_tree(self.X, self.col_ptr, self.col_rows, self.col_vals, self.col_nneg,
                           np.asarray(feats, dtype=np.int64), a, b, in_sample, max_depth,
                           float(lam), float(min_child), mode, int(mtry), int(seed))
        return Tree(*arrays)


def _prepare(X, y, rows, presorted):
    if presorted is None:
        presorted = Presorted(X)
    elif presorted.X.shape != np.shape(X):
        raise ValueError("presorted matrix does not match X")
    n = presorted.X.shape[0]
    y = np.asarray(y).astype(np.float64)
    if len(y) != n:
        raise ValueError("X and y differ in length")
    if rows is None:
        rows = np.arange(n)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        if len(rows) < n:
            presorted = presorted.restricted(rows)
    if len(rows) < 2:
        raise ValueError("need at least 2 training rows")
    return presorted, y, rows


def _tree_output(tree: Tree, X) -> np.ndarray:
    return predict_forest(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value,
                          np.array([0, tree.n_nodes], dtype=np.int64), np.ones(1))


def _degenerate(family, link, yr, p, params) -> EnsembleModel:
    prior = float(np.clip(yr.mean(), 1e-6, 1 - 1e-6))
    margin = {"logistic": logit(prior), "logistic2": 0.5 * logit(prior), "mean": prior}[link]
    return EnsembleModel(family, [], np.zeros(0), float(margin), link, p, params, degenerate=True)


def log_loss(y, p) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def train_gbt(X, y, params: GBTParams = GBTParams(), seed: int = 0, *, rows=None,
              presorted: Presorted | None = None, track_loss: bool = False) -> EnsembleModel:
    """Second-order boosting on the logistic loss with exact greedy splits.

    Each round fits a tree to g = p - y, h = p(1 - p); leaves get
    w = -G / (H + lambda) and the model adds ``learning_rate * w``.
    ``rows`` restricts training to a subset of ``X`` (e.g. a CV fold).
    """
    ps, yf, rows = _prepare(X, y, rows, presorted)
    Xd = ps.X
    n, p = Xd.shape
    yr = yf[rows]
    pdict = asdict(params)
    if yr.min() == yr.max():
        return _degenerate("gbt", "logistic", yr, p, pdict)
    rng = np.random.default_rng(seed)
    base = float(logit(params.base_score))
    margin = np.full(len(rows), base)
    Xr = Xd[rows]
    a = np.zeros(n)
    b = np.zeros(n)
    trees, losses = [], []
    n_cols = max(1, int(round(params.colsample * p)))
    n_sub = max(2, int(round(params.subsample * len(rows))))
    for _ in range(params.n_rounds):
        prob = expit(margin)
        if track_loss:
            losses.append(log_loss(yr, prob))
        a[rows] = prob - yr
        b[rows] = prob * (1 - prob)
        in_sample = np.zeros(n, dtype=np.bool_)
        if n_sub < len(rows):
            in_sample[rows[np.sort(rng.choice(len(rows), n_sub, replace=False))]] = True
        else:
            in_sample[rows] = True
        feats = np.arange(p) if n_cols == p else np.sort(rng.choice(p, n_cols, replace=False))
        tree = ps.grow(feats, a, b, in_sample, params.max_depth, params.reg_lambda,
                       params.min_child_weight, NEWTON)
        trees.append(tree)
        margin += params.learning_rate * _tree_output(tree, Xr)
    if track_loss:
        losses.append(log_loss(yr, expit(margin)))
    model = EnsembleModel("gbt", trees, np.full(len(trees), params.learning_rate), base, "logistic", p, pdict)
    if track_loss:
        model.history["train_log_loss"] = losses
    return model


def train_random_forest(X, y, params: RFParams = RFParams(), seed: int = 0, *, rows=None,
                        presorted: Presorted | None = None) -> EnsembleModel:
    """Bagged Gini trees with per-node column subsampling; mean leaf probability."""
    ps, yf, rows = _prepare(X, y, rows, presorted)
    n, p = ps.X.shape
    yr = yf[rows]
    pdict = asdict(params)
    if yr.min() == yr.max():
        return _degenerate("rf", "mean", yr, p, pdict)
    rng = np.random.default_rng(seed)
    mtry = params.mtry(p)
    feats = np.arange(p)
    trees = []
    for _ in range(params.n_trees):
        w = np.zeros(n)
        if params.bootstrap:
            w[rows] = rng.multinomial(len(rows), np.full(len(rows), 1.0 / len(rows)))
        else:
            w[rows] = 1.0
        tree = ps.grow(feats, w * yf, w, w > 0, params.max_depth, 0.0, params.min_samples_leaf,
                       GINI, mtry if mtry < p else 0, int(rng.integers(2**31 - 1)))
        trees.append(tree)
    return EnsembleModel("rf", trees, np.full(len(trees), 1.0 / len(trees)), 0.0, "mean", p, pdict)


def train_adaboost(X, y, params: AdaBoostParams = AdaBoostParams(), seed: int = 0, *, rows=None,
                   presorted: Presorted | None = None) -> EnsembleModel:
    """Discrete AdaBoost over small Gini trees.

    alpha = 0.5 ln((1 - eps) / eps). Stops when eps >= 0.5 (learner dropped)
    or eps == 0 (kept, with eps clipped to 1e-10).
    """
    ps, yf, rows = _prepare(X, y, rows, presorted)
    n, p = ps.X.shape
    yr = yf[rows]
    pdict = asdict(params)
    if yr.min() == yr.max():
        return _degenerate("adaboost", "logistic2", yr, p, pdict)
    Xr = ps.X[rows]
    sign = 2 * yr - 1
    w = np.zeros(n)
    w[rows] = 1.0 / len(rows)
    feats = np.arange(p)
    trees, alphas, errors = [], [], []
    for _ in range(params.n_learners):
        tree = ps.grow(feats, w * yf, w, w > 0, params.stump_depth, 0.0, 0.0, GINI)
        tree.value = np.where(tree.value > 0.5, 1.0, -1.0)
        h = _tree_output(tree, Xr)
        wr = w[rows]
        eps = float(wr[h != sign].sum() / wr.sum())
        errors.append(eps)
        if eps >= 0.5:
            break
        alpha = 0.5 * math.log((1 - max(eps, 1e-10)) / max(eps, 1e-10))
        trees.append(tree)
        alphas.append(alpha)
        if eps == 0.0:
            break
        w[rows] = wr * np.exp(-alpha * sign * h)
        w[rows] /= w[rows].sum()
    model = EnsembleModel("adaboost", trees, np.array(alphas), 0.0, "logistic2", p, pdict)
    model.history["weighted_error"] = errors
    return model
