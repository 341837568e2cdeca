"""External clustering scores (ACC, NMI, ARI) and cluster validity indices."""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.signal import argrelextrema
from scipy.special import comb


class ContingencyTable(NamedTuple):
    counts: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)

    @property
    def col_sums(self):
        return self.counts.sum(axis=0)


def contingency_table(a, b) -> ContingencyTable:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors must be 1-d and equally long ({a.shape} vs {b.shape})")
    rows, ia = np.unique(a, return_inverse=True)
    cols, ib = np.unique(b, return_inverse=True)
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    np.add.at(counts, (ia, ib), 1)
    return ContingencyTable(counts, rows, cols)


def assignment_max(profit):
    """Maximum-weight matching of ``min(r, c)`` row/column pairs.

    Returns ``(pairs, total)`` with pairs sorted by row.  Rectangular input
    behaves as if padded with zero-profit dummies.
    """
    P = np.asarray(profit, dtype=float)
    if P.ndim != 2 or P.size == 0:
        raise ValueError("profit matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(P)):
        raise ValueError("profit matrix has non-finite entries")
    r, c = linear_sum_assignment(P, maximize=True)
    pairs = sorted(zip(r.tolist(), c.tolist()))
    return pairs, float(P[r, c].sum())


def clustering_accuracy(y_true, y_pred) -> float:
    """Fraction of points matched under the best one-to-one cluster/class mapping.

    With unequal group counts the mapping is injective on the smaller side;
    points of unmatched groups count as errors.
    """
    t = contingency_table(y_pred, y_true)
    n = t.counts.sum()
    if n == 0:
        raise ValueError("empty label vectors")
    _, total = assignment_max(t.counts)
    return total / n


def _entropy(counts) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(y_true, y_pred) -> float:
    """Mutual information normalized by the arithmetic mean of the two entropies."""
    t = contingency_table(y_true, y_pred)
    n = t.counts.sum()
    h_t, h_p = _entropy(t.row_sums), _entropy(t.col_sums)
    if h_t == 0 and h_p == 0:
        return 1.0
    nz = t.counts > 0
    pij = t.counts[nz] / n
    outer = np.outer(t.row_sums, t.col_sums)[nz] / n**2
    mi = float((pij * np.log(pij / outer)).sum())
    return float(np.clip(mi / (0.5 * (h_t + h_p)), 0.0, 1.0))


def ari(y_true, y_pred) -> float:
    t = contingency_table(y_true, y_pred)
    n = int(t.counts.sum())
    index = comb(t.counts, 2).sum()
    sa = comb(t.row_sums, 2).sum()
    sb = comb(t.col_sums, 2).sum()
    expected = sa * sb / comb(n, 2) if n > 1 else 0.0
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


# --------------------------------------------------------------------------
# cluster validity indices
# --------------------------------------------------------------------------


def _groups(X, labels):
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise ValueError("X must be n x d with one label per row")
    ids, inv = np.unique(labels, return_inverse=True)
    if len(ids) < 2:
        raise ValueError("validity indices need at least 2 clusters")
    return X, inv, len(ids)


def pairwise_distances(X, Y=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = X if Y is None else np.asarray(Y, dtype=float)
    sq = (X * X).sum(1)[:, None] - 2.0 * X @ Y.T + (Y * Y).sum(1)[None, :]
    np.maximum(sq, 0.0, out=sq)
    if Y is X:
        np.fill_diagonal(sq, 0.0)
    return np.sqrt(sq)


def _distance_blocks(X, dist, block=2048):
    if dist is not None:
        yield 0, np.asarray(dist)
        return
    for s in range(0, len(X), block):
        D = pairwise_distances(X[s:s + block], X)
        D[np.arange(len(D)), np.arange(s, s + len(D))] = 0.0
        yield s, D


def silhouette(X, labels, *, dist=None) -> float:
    """Mean silhouette width (Euclidean); lone members of singleton clusters score 0.

    ``dist`` may supply a precomputed n x n distance matrix.
    """
    X, inv, k = _groups(X, labels)
    n = len(X)
    sizes = np.bincount(inv, minlength=k).astype(float)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), inv] = 1.0
    s = np.empty(n)
    for start, D in _distance_blocks(X, dist):
        sums = D @ onehot
        rows = np.arange(start, start + len(D))
        own = inv[rows]
        own_size = sizes[own]
        a = np.where(own_size > 1, sums[np.arange(len(D)), own] / np.maximum(own_size - 1, 1), 0.0)
        means = sums / sizes
        means[np.arange(len(D)), own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = np.where(denom > 0, (b - a) / denom, 0.0)
        s[rows] = np.where(own_size > 1, val, 0.0)
    return float(s.mean())


def calinski_harabasz(X, labels) -> float:
    X, inv, k = _groups(X, labels)
    n = len(X)
    if n <= k:
        raise ValueError("Calinski-Harabasz needs more points than clusters")
    mean = X.mean(axis=0)
    between = within = 0.0
    for c in range(k):
        Xc = X[inv == c]
        mc = Xc.mean(axis=0)
        between += len(Xc) * float(((mc - mean) ** 2).sum())
        within += float(((Xc - mc) ** 2).sum())
    if within == 0.0:
        return float("inf")
    return between * (n - k) / (within * (k - 1))


def davies_bouldin(X, labels) -> float:
    X, inv, k = _groups(X, labels)
    cents = np.array([X[inv == c].mean(axis=0) for c in range(k)])
    scatter = np.array([np.linalg.norm(X[inv == c] - cents[c], axis=1).mean() for c in range(k)])
    cd = pairwise_distances(cents)
    coincident = cd < 1e-12
    np.fill_diagonal(coincident, False)
    if coincident.any():
        if coincident.sum() == k * (k - 1):
            raise ValueError("all cluster centroids coincide")
        warnings.warn("coincident centroids skipped in Davies-Bouldin", stacklevel=2)
    R = np.full((k, k), -np.inf)
    ok = ~coincident
    np.fill_diagonal(ok, False)
    R[ok] = (scatter[:, None] + scatter[None, :])[ok] / cd[ok]
    worst = R.max(axis=1)
    return float(worst[np.isfinite(worst)].mean())


def dunn(X, labels, *, dist=None) -> float:
    """Smallest between-cluster point distance over the largest cluster diameter."""
    X, inv, k = _groups(X, labels)
    min_inter, max_diam = np.inf, 0.0
    for start, D in _distance_blocks(X, dist):
        same = inv[start:start + len(D), None] == inv[None, :]
        if (~same).any():
            min_inter = min(min_inter, float(D[~same].min()))
        if same.any():
            max_diam = max(max_diam, float(D[same].max()))
    if max_diam == 0.0:
        return float("inf")
    return min_inter / max_diam


def kneedle_elbow(xs, ys, *, sensitivity: float = 1.0):
    """Knee of a decreasing convex curve by the kneedle difference-curve rule.

    Returns the x value at the first knee, or ``None`` when no local maximum of
    the difference curve is followed by a drop below its threshold.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) != len(y) or len(x) < 5:
        raise ValueError("kneedle needs at least 5 points")
    if np.any(np.diff(x) <= 0):
        raise ValueError("xs must be strictly increasing")
    span_x, span_y = x.max() - x.min(), y.max() - y.min()
    if span_y == 0:
        return None
    xn = (x - x.min()) / span_x
    yn = 1.0 - (y - y.min()) / span_y
    diff = yn - xn
    maxima = argrelextrema(diff, np.greater_equal)[0]
    minima = argrelextrema(diff, np.less_equal)[0]
    if len(maxima) == 0:
        return None
    thresholds = diff[maxima] - sensitivity * np.abs(np.diff(xn).mean())
    threshold, threshold_index, mi = 0.0, 0, 0
    for i in range(len(x) - 1):
        if i < maxima[0]:
            continue
        if mi < len(maxima) and maxima[mi] == i:
            threshold = thresholds[mi]
            threshold_index = i
            mi += 1
        if i in minima:
            threshold = 0.0
        if diff[i + 1] < threshold:
            return x[threshold_index].item()
    return None
