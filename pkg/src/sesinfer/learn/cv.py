"""Nested stratified cross-validation with seeded random hyperparameter search."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.model_selection import RepeatedStratifiedKFold, StratifiedKFold

from ..evaluation import auc
from .models import (
    AdaBoostParams,
    Dataset,
    GBTParams,
    Presorted,
    RFParams,
    train_adaboost,
    train_gbt,
    train_random_forest,
)

__all__ = [
    "CVPlan",
    "Dist",
    "SEARCH_SPACES",
    "DESK_SPACES",
    "FAMILIES",
    "sample_configs",
    "parse_space",
    "nested_cv",
    "CVReport",
    "OuterFold",
    "StratificationError",
]


class StratificationError(RuntimeError):
    """A fold lacks one of the classes."""


@dataclass(frozen=True)
class CVPlan:
    outer_folds: int = 5
    inner_folds: int = 5
    inner_repeats: int = 10
    n_configs: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ValueError("need at least 2 outer and 2 inner folds")
        if self.inner_repeats < 1 or self.n_configs < 1:
            raise ValueError("inner_repeats and n_configs must be >= 1")

    @property
    def inner_fits_per_config(self) -> int:
        return self.inner_folds * self.inner_repeats

    @property
    def total_inner_fits(self) -> int:
        return self.outer_folds * self.n_configs * self.inner_fits_per_config


@dataclass(frozen=True)
class Dist:
    """One hyperparameter distribution.

    kind: ``int`` (inclusive bounds), ``uniform``, ``loguniform``,
    ``choice`` (``values``) or ``sqrt_or_uniform`` (``"sqrt"`` with
    probability 1/2, else uniform on [lo, hi]).
    """

    kind: str
    lo: float = 0.0
    hi: float = 0.0
    values: tuple = ()

    def sample(self, rng: np.random.Generator):
        if self.kind == "int":
            return int(rng.integers(int(self.lo), int(self.hi), endpoint=True))
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        if self.kind == "loguniform":
            return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))
        if self.kind == "choice":
            return self.values[int(rng.integers(len(self.values)))]
        if self.kind == "sqrt_or_uniform":
            return "sqrt" if rng.random() < 0.5 else float(rng.uniform(self.lo, self.hi))
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    def to_json(self) -> list:
        if self.kind == "choice":
            return ["choice", list(self.values)]
        return [self.kind, self.lo, self.hi]


def parse_space(spec: dict) -> dict[str, Dist]:
    """``{"max_depth": ["int", 2, 8], "stump_depth": ["choice", [1, 2]], ...}``"""
    out = {}
    for name, v in spec.items():
        if v[0] == "choice":
            out[name] = Dist("choice", values=tuple(v[1]))
        else:
            out[name] = Dist(v[0], float(v[1]), float(v[2]))
    return out


SEARCH_SPACES: dict[str, dict[str, Dist]] = {
    "gbt": {
        "max_depth": Dist("int", 2, 8),
        "learning_rate": Dist("loguniform", 0.01, 0.3),
        "reg_lambda": Dist("loguniform", 0.1, 10.0),
        "subsample": Dist("uniform", 0.5, 1.0),
        "colsample": Dist("uniform", 0.3, 1.0),
        "n_rounds": Dist("int", 50, 500),
    },
    "rf": {
        "n_trees": Dist("int", 100, 500),
        "max_depth": Dist("int", 4, 16),
        "max_features": Dist("sqrt_or_uniform", 0.1, 0.5),
    },
    "adaboost": {
        "n_learners": Dist("int", 50, 500),
        "stump_depth": Dist("choice", values=(1, 2)),
    },
}

# Smaller spaces for desk-scale runs (shallow, short ensembles), in the JSON
# form accepted by parse_space and by the pipeline config.
DESK_SPACES: dict[str, dict] = {
    "gbt": {
        "max_depth": ["int", 2, 3],
        "learning_rate": ["loguniform", 0.05, 0.3],
        "reg_lambda": ["loguniform", 0.1, 10.0],
        "subsample": ["uniform", 0.5, 1.0],
        "colsample": ["uniform", 0.1, 0.3],
        "n_rounds": ["int", 20, 50],
    },
    "rf": {
        "n_trees": ["int", 20, 60],
        "max_depth": ["int", 4, 8],
        "max_features": ["sqrt_or_uniform", 0.1, 0.5],
    },
    "adaboost": {
        "n_learners": ["int", 20, 60],
        "stump_depth": ["choice", [1, 2]],
    },
}

FAMILIES: dict[str, tuple[Callable, type]] = {
    "gbt": (train_gbt, GBTParams),
    "rf": (train_random_forest, RFParams),
    "adaboost": (train_adaboost, AdaBoostParams),
}


def sample_configs(space: dict[str, Dist], n: int, rng: np.random.Generator) -> list[dict]:
    names = sorted(space)
    return [{k: space[k].sample(rng) for k in names} for _ in range(n)]


def _seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass
class OuterFold:
    fold: int
    train_ids: list[str]
    test_ids: list[str]
    configs: list[dict]
    inner_auc: np.ndarray  # (n_configs, inner fits)
    best_index: int
    test_auc: float

    @property
    def best_params(self) -> dict:
        return self.configs[self.best_index]


@dataclass
class CVReport:
    family: str
    plan: CVPlan
    folds: list[OuterFold]
    oof_proba: np.ndarray
    y: np.ndarray
    user_ids: list[str]
    counters: dict = field(default_factory=dict)
    inner_splits: list[list[tuple[np.ndarray, np.ndarray]]] = field(default_factory=list, repr=False)

    @property
    def aucs(self) -> np.ndarray:
        return np.array([f.test_auc for f in self.folds])

    @property
    def mean(self) -> float:
        return float(self.aucs.mean())

    @property
    def std(self) -> float:
        return float(self.aucs.std())

    def summary(self) -> str:
        return f"{self.family}: AUC {self.mean:.3f} ± {self.std:.3f} over {len(self.folds)} outer folds"


def _check_classes(y, idx, where):
    counts = np.bincount(y[idx], minlength=2)
    if counts.min() == 0:
        raise StratificationError(f"{where}: class {int(np.argmin(counts))} absent")


def nested_cv(data: Dataset, family: str, plan: CVPlan = CVPlan(),
              space: dict[str, Dist] | None = None, fixed: dict | None = None,
              progress: Callable[[str], None] | None = None) -> CVReport:
    """Outer stratified k-fold; per outer fold a seeded random search scored by
    mean AUC over repeated stratified inner folds, refit on the outer-train part.

    ``fixed`` holds parameters applied to every config (not searched).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    train_fn, param_cls = FAMILIES[family]
    space = SEARCH_SPACES[family] if space is None else space
    fixed = fixed or {}
    X, y = data.X, data.y
    if np.bincount(y, minlength=2).min() < plan.outer_folds:
        raise StratificationError("too few samples of a class for the outer folds")
    ids = np.asarray(data.user_ids)
    presorted = Presorted(X)
    outer = StratifiedKFold(plan.outer_folds, shuffle=True, random_state=_seed(plan.seed, 0) % 2**32)
    oof = np.full(len(y), np.nan)
    folds, all_inner = [], []
    counters = {"inner_fits": 0, "outer_fits": 0, "leakage_violations": 0}

    for o, (tr, te) in enumerate(outer.split(X, y)):
        _check_classes(y, tr, f"outer fold {o} train")
        _check_classes(y, te, f"outer fold {o} test")
        cfg_rng = np.random.default_rng(_seed(plan.seed, 1, o))
        configs = [{**c, **fixed} for c in sample_configs(space, plan.n_configs, cfg_rng)]
        inner = RepeatedStratifiedKFold(n_splits=plan.inner_folds, n_repeats=plan.inner_repeats,
                                        random_state=_seed(plan.seed, 2, o) % 2**32)
        splits = [(tr[a], tr[b]) for a, b in inner.split(tr, y[tr])]
        test_set = set(ids[te])
        for itr, iva in splits:
            _check_classes(y, itr, f"outer fold {o} inner train")
            _check_classes(y, iva, f"outer fold {o} inner validation")
            if test_set & set(ids[itr]) or test_set & set(ids[iva]):
                counters["leakage_violations"] += 1
        if counters["leakage_violations"]:
            raise RuntimeError("inner split overlaps the outer test fold")
        all_inner.append(splits)

        scores = np.empty((len(configs), len(splits)))
        for c, cfg in enumerate(configs):
            params = param_cls(**cfg)
            for s, (itr, iva) in enumerate(splits):
                model = train_fn(X, y, params, _seed(plan.seed, 3, o, c, s), rows=itr, presorted=presorted)
                scores[c, s] = auc(model.predict_proba(X[iva]), y[iva])
                counters["inner_fits"] += 1
            if progress:
                progress(f"outer {o} config {c}: mean inner AUC {scores[c].mean():.4f}")
        means = scores.mean(axis=1)
        best = int(np.flatnonzero(means == means.max())[0])
        model = train_fn(X, y, param_cls(**configs[best]), _seed(plan.seed, 4, o), rows=tr, presorted=presorted)
        counters["outer_fits"] += 1
        proba = model.predict_proba(X[te])
        oof[te] = proba
        test_auc = auc(proba, y[te])
        folds.append(OuterFold(o, ids[tr].tolist(), ids[te].tolist(), configs, scores, best, test_auc))
        if progress:
            progress(f"outer {o}: best config {best}, held-out AUC {test_auc:.4f}")

    return CVReport(family, plan, folds, oof, y.copy(), ids.tolist(), counters, all_inner)
