"""Numba kernels: exact greedy level-wise tree growth and ensemble prediction.

Every row carries two statistics ``(a, b)``. In Newton mode they are the
gradient and hessian of the logistic loss; in Gini mode they are the weighted
positive count and the weight. Columns are scanned over their sorted nonzero
entries only, in one pass: negatives ascending, positives descending. The
zero block of each node is what remains of the node total.
"""
from __future__ import annotations

import numpy as np
from numba import njit

NEWTON = 0
GINI = 1


def presort(X: np.ndarray):
    """Sorted nonzeros of every column (stable on ties, so by row index).

    Returns ``(col_ptr, col_rows, col_vals, col_nneg)``; within a column the
    first ``col_nneg`` entries are the negative values.
    """
    Xt = np.ascontiguousarray(X.T)
    order = np.argsort(Xt, axis=1, kind="stable")
    vals = np.take_along_axis(Xt, order, axis=1)
    nz = vals != 0
    col_ptr = np.zeros(Xt.shape[0] + 1, dtype=np.int64)
    np.cumsum(nz.sum(axis=1), out=col_ptr[1:])
    return (col_ptr, order[nz].astype(np.int32), vals[nz].astype(np.float64),
            (vals < 0).sum(axis=1).astype(np.int64))


def filter_rows(col_ptr, col_rows, col_vals, col_nneg, keep: np.ndarray):
    """Drop entries whose row is not in the boolean mask ``keep``."""
    mask = keep[col_rows]
    col_id = np.repeat(np.arange(len(col_ptr) - 1), np.diff(col_ptr))
    p = len(col_ptr) - 1
    ptr = np.zeros(p + 1, dtype=np.int64)
    np.cumsum(np.bincount(col_id[mask], minlength=p), out=ptr[1:])
    nneg = np.bincount(col_id[mask & (col_vals < 0)], minlength=p).astype(np.int64)
    return ptr, col_rows[mask], col_vals[mask], nneg


@njit(cache=True, inline="always")
def _score(mode, a, b, lam):
    if mode == NEWTON:
        return a * a / (b + lam)
    if b <= 0.0:
        return 0.0
    c = b - a
    return (a * a + c * c) / b


@njit(cache=True)
def grow_tree(X, col_ptr, col_rows, col_vals, col_nneg, feats, a, b, in_sample,
              max_depth, lam, min_child, mode, mtry, seed):
    """Grow one tree over rows with ``in_sample`` set.

    ``feats`` are the candidate columns in ascending order. With ``mtry > 0``
    each node draws its own ``mtry`` columns out of ``feats``. A split is kept
    only if its gain is strictly positive; ties go to the smaller column, then
    the smaller threshold.
    Returns (feature, threshold, left, right, value) arrays; leaves have
    feature -1.
    """
    n, p = X.shape
    n_in = 0
    for r in range(n):
        if in_sample[r]:
            n_in += 1
    cap = min(2 ** (max_depth + 1) - 1, 2 * max(n_in, 1) - 1)
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    node_of = np.full(n, -1, dtype=np.int32)
    for r in range(n):
        if in_sample[r]:
            node_of[r] = 0
    if mtry > 0:
        np.random.seed(seed)
    n_feats = feats.shape[0]
    pool = feats.copy()

    lo, hi, next_id = 0, 1, 1
    for depth in range(max_depth + 1):
        m = hi - lo
        if m == 0:
            break
        A = np.zeros(m)
        B = np.zeros(m)
        C = np.zeros(m, dtype=np.int64)
        slot = np.full(n, -1, dtype=np.int32)
        for r in range(n):
            nd = node_of[r]
            if nd >= lo:
                k = nd - lo
                slot[r] = k
                A[k] += a[r]
                B[k] += b[r]
                C[k] += 1
        parent = np.empty(m)
        for k in range(m):
            if mode == NEWTON:
                value[lo + k] = -A[k] / (B[k] + lam)
            else:
                value[lo + k] = A[k] / B[k] if B[k] > 0 else 0.0
            parent[k] = _score(mode, A[k], B[k], lam)
        if depth == max_depth:
            break

        allowed = np.ones((m, 1), dtype=np.bool_)
        if mtry > 0 and mtry < n_feats:
            allowed = np.zeros((m, p), dtype=np.bool_)
            for k in range(m):
                for i in range(mtry):
                    j = i + np.random.randint(n_feats - i)
                    tmp = pool[i]
                    pool[i] = pool[j]
                    pool[j] = tmp
                    allowed[k, pool[i]] = True
        use_mask = allowed.shape[1] > 1

        # a split must beat the parent score; on equal score the earlier column
        # is kept and, within a column, the smaller threshold
        best_score = parent.copy()
        best_f = np.full(m, -1, dtype=np.int32)
        best_t = np.zeros(m)
        LA = np.empty(m)
        LB = np.empty(m)
        LC = np.empty(m, dtype=np.int64)
        RA = np.empty(m)
        RB = np.empty(m)
        RC = np.empty(m, dtype=np.int64)
        lastL = np.empty(m)
        lastR = np.empty(m)
        for fi in range(n_feats):
            f = feats[fi]
            if use_mask:
                any_node = False
                for k in range(m):
                    if allowed[k, f] and C[k] > 1:
                        any_node = True
                        break
                if not any_node:
                    continue
            s, e = col_ptr[f], col_ptr[f + 1]
            mid = s + col_nneg[f]
            for k in range(m):
                LA[k] = 0.0
                LB[k] = 0.0
                LC[k] = 0
                RA[k] = 0.0
                RB[k] = 0.0
                RC[k] = 0
            # negatives ascending: left side grows, threshold = largest left value
            for q in range(s, mid):
                r = col_rows[q]
                k = slot[r]
                if k < 0 or (use_mask and not allowed[k, f]):
                    continue
                v = col_vals[q]
                if LC[k] > 0 and v > lastL[k]:
                    num, den = _candidate(mode, LA[k], LB[k], A[k], B[k], lam, min_child)
                    if den > 0.0:
                        cur = best_score[k] * den
                        if num > cur or (num == cur and best_f[k] == f and lastL[k] < best_t[k]):
                            best_score[k] = num / den
                            best_f[k] = f
                            best_t[k] = lastL[k]
                LA[k] += a[r]
                LB[k] += b[r]
                LC[k] += 1
                lastL[k] = v
            # positives descending: right side grows, threshold = next smaller value
            for q in range(e - 1, mid - 1, -1):
                r = col_rows[q]
                k = slot[r]
                if k < 0 or (use_mask and not allowed[k, f]):
                    continue
                v = col_vals[q]
                if RC[k] > 0 and v < lastR[k]:
                    num, den = _candidate(mode, A[k] - RA[k], B[k] - RB[k], A[k], B[k], lam, min_child)
                    if den > 0.0:
                        cur = best_score[k] * den
                        if num > cur or (num == cur and best_f[k] == f and v < best_t[k]):
                            best_score[k] = num / den
                            best_f[k] = f
                            best_t[k] = v
                RA[k] += a[r]
                RB[k] += b[r]
                RC[k] += 1
                lastR[k] = v
            # boundaries around the zero block
            for k in range(m):
                if LC[k] + RC[k] == 0 or (use_mask and not allowed[k, f]):
                    continue
                zc = C[k] - LC[k] - RC[k]
                if zc > 0 and RC[k] > 0:
                    num, den = _candidate(mode, A[k] - RA[k], B[k] - RB[k], A[k], B[k], lam, min_child)
                    if den > 0.0:
                        cur = best_score[k] * den
                        if num > cur or (num == cur and best_f[k] == f and 0.0 < best_t[k]):
                            best_score[k] = num / den
                            best_f[k] = f
                            best_t[k] = 0.0
                if LC[k] > 0 and (zc > 0 or RC[k] > 0):
                    num, den = _candidate(mode, LA[k], LB[k], A[k], B[k], lam, min_child)
                    if den > 0.0:
                        cur = best_score[k] * den
                        if num > cur or (num == cur and best_f[k] == f and lastL[k] < best_t[k]):
                            best_score[k] = num / den
                            best_f[k] = f
                            best_t[k] = lastL[k]

        child = np.full(m, -1, dtype=np.int32)
        for k in range(m):
            if best_f[k] >= 0:
                nd = lo + k
                feature[nd] = best_f[k]
                threshold[nd] = best_t[k]
                left[nd] = next_id
                right[nd] = next_id + 1
                child[k] = next_id
                next_id += 2
        for r in range(n):
            k = slot[r]
            if k >= 0 and child[k] >= 0:
                node_of[r] = child[k] if X[r, best_f[k]] <= best_t[k] else child[k] + 1
        lo, hi = hi, next_id

    return feature[:next_id], threshold[:next_id], left[:next_id], right[:next_id], value[:next_id]


@njit(cache=True, inline="always")
def _candidate(mode, la, lb, ta, tb, lam, min_child):
    """Children score of a candidate split as a fraction ``(num, den)``.

    ``den <= 0`` marks an inadmissible split. Scores are compared
    cross-multiplied so no division happens in the scan.
    """
    rb = tb - lb
    if lb < min_child or rb < min_child:
        return 0.0, -1.0
    ra = ta - la
    if mode == NEWTON:
        nl = la * la
        dl = lb + lam
        nr = ra * ra
        dr = rb + lam
    else:
        cl = lb - la
        cr = rb - ra
        nl = la * la + cl * cl
        dl = lb
        nr = ra * ra + cr * cr
        dr = rb
    if dl <= 0.0 or dr <= 0.0:
        return 0.0, -1.0
    return nl * dr + nr * dl, dl * dr


@njit(cache=True)
def predict_forest(X, feature, threshold, left, right, value, tree_start, tree_weight):
    """Sum over trees of ``weight * leaf value`` for every row of ``X``."""
    n = X.shape[0]
    out = np.zeros(n)
    for t in range(tree_start.shape[0] - 1):
        base = tree_start[t]
        w = tree_weight[t]
        for r in range(n):
            nd = 0
            while feature[base + nd] >= 0:
                if X[r, feature[base + nd]] <= threshold[base + nd]:
                    nd = left[base + nd]
                else:
                    nd = right[base + nd]
            out[r] += w * value[base + nd]
    return out


@njit(cache=True)
def leaf_index(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int32)
    for r in range(n):
        nd = 0
        while feature[nd] >= 0:
            nd = left[nd] if X[r, feature[nd]] <= threshold[nd] else right[nd]
        out[r] = nd
    return out
