"""Classification and agreement metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "ROCCurve",
    "ClassMetrics",
    "ConfusionSummary",
    "AgreementStats",
    "auc",
    "roc_curve",
    "precision_recall_f1",
    "agreement",
]


@dataclass(frozen=True)
class ROCCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score at which each point (after the origin) is reached
    auc: float


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool = False
    recall_undefined: bool = False
    f1_undefined: bool = False


@dataclass(frozen=True)
class ConfusionSummary:
    classes: tuple[int, ...]
    per_class: dict[int, ClassMetrics]
    confusion: np.ndarray  # rows true, cols predicted, in ``classes`` order

    @property
    def flags(self) -> list[str]:
        out = []
        for c, m in self.per_class.items():
            for name in ("precision", "recall", "f1"):
                if getattr(m, f"{name}_undefined"):
                    out.append(f"class {c}: {name} undefined (0/0), reported as 0")
        return out

    def macro(self) -> tuple[float, float, float]:
        ms = list(self.per_class.values())
        return tuple(float(np.mean([getattr(m, k) for m in ms])) for k in ("precision", "recall", "f1"))


@dataclass(frozen=True)
class AgreementStats:
    percent_agreement: float
    kappa: float
    n: int
    degenerate: bool = False


def _binary_inputs(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("both classes must be present")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counting 1/2."""
    s, y = _binary_inputs(scores, labels)
    ranks = rankdata(s)  # average ranks carry the half-credit for ties
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    u = math.fsum(ranks[y]) - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> ROCCurve:
    """Exact ROC: one point per distinct score, from (0, 0) to (1, 1)."""
    s, y = _binary_inputs(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    tpr = np.r_[0.0, tp / tp[-1]]
    fpr = np.r_[0.0, fp / fp[-1]]
    # tie blocks become diagonal segments, so the trapezoid gives the half credit
    area = float(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])) + fp[0] * tp[0]) / (2.0 * tp[-1] * fp[-1])
    return ROCCurve(fpr, tpr, s[last], area)


def precision_recall_f1(pred_labels, true_labels, classes=(0, 1)) -> ConfusionSummary:
    """Per-class precision, recall and F1; 0/0 cases are reported as 0 and flagged."""
    p = np.asarray(pred_labels).ravel()
    t = np.asarray(true_labels).ravel()
    if p.shape != t.shape:
        raise ValueError("prediction and truth differ in length")
    classes = tuple(int(c) for c in classes)
    if not (np.all(np.isin(p, classes)) and np.all(np.isin(t, classes))):
        raise ValueError(f"labels must be in {classes}")
    k = len(classes)
    idx = {c: i for i, c in enumerate(classes)}
    lookup = np.array(classes)
    ti = np.argmax(t[:, None] == lookup, axis=1)
    pi = np.argmax(p[:, None] == lookup, axis=1)
    conf = np.bincount(ti * k + pi, minlength=k * k).reshape(k, k)
    per = {}
    for c, i in idx.items():
        tp = int(conf[i, i])
        pred_c = int(conf[:, i].sum())
        true_c = int(conf[i, :].sum())
        prec = tp / pred_c if pred_c else 0.0
        rec = tp / true_c if true_c else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        per[c] = ClassMetrics(prec, rec, f1, true_c, pred_c == 0, true_c == 0, prec + rec == 0)
    return ConfusionSummary(classes, per, conf)


def agreement(a, b) -> AgreementStats:
    """Percent agreement and Cohen's kappa between two label vectors.

    When chance agreement is 1 (both raters constant on the same label) kappa
    is reported as 0 with ``degenerate`` set.
    """
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape or len(a) == 0:
        raise ValueError("label vectors must have equal length >= 1")
    n = len(a)
    cats, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    ia, ib = inv[:n], inv[n:]
    p_o = float(np.mean(ia == ib))
    pa = np.bincount(ia, minlength=len(cats)) / n
    pb = np.bincount(ib, minlength=len(cats)) / n
    p_e = float(np.dot(pa, pb))
    if p_e >= 1.0 - 1e-15:
        return AgreementStats(p_o, 0.0, n, degenerate=True)
    return AgreementStats(p_o, (p_o - p_e) / (1.0 - p_e), n)
