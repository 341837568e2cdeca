"""k-means, NCD k-means, spectral clustering and the NCD spectral parameter search."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from . import metrics
from ._rng import as_rng, derive_seed

KMEANS_N_INIT = 10
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6


class EigenSolverError(RuntimeError):
    pass


def sq_distances(X, C) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    C = np.asarray(C, dtype=float)
    d2 = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d2, 0.0, out=d2)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    converged: bool

    def predict(self, X) -> np.ndarray:
        return sq_distances(X, self.centroids).argmin(axis=1)


@dataclass
class NCDKMeansResult(KMeansResult):
    known_centroids: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    mode: tuple[str, str] = ("novel", "unlabeled")


# --------------------------------------------------------------------------
# k-means
# --------------------------------------------------------------------------


def _sample_d2(d2: np.ndarray, rng, exclude=()) -> int:
    total = d2.sum()
    if total <= 0 or not np.isfinite(total):
        pool = np.setdiff1d(np.arange(len(d2)), np.asarray(list(exclude), dtype=int))
        if len(pool) == 0:
            pool = np.arange(len(d2))
        return int(rng.choice(pool))
    cum = np.cumsum(d2)
    r = rng.random() * cum[-1]
    return int(min(np.searchsorted(cum, r, side="right"), len(d2) - 1))


def kmeanspp_next(X, existing, seed=None) -> int:
    """Index of the next k-means++ centre, drawn with P(i) proportional to d(x_i)^2.

    ``d`` is the distance to the nearest row of ``existing``; points sitting on
    an existing centre have probability 0.
    """
    existing = np.atleast_2d(np.asarray(existing, dtype=float))
    if existing.size == 0:
        raise ValueError("k-means++ needs at least one existing centroid")
    d2 = sq_distances(X, existing).min(axis=1)
    return _sample_d2(d2, as_rng(seed))


def _kmeanspp_init(X, k, rng, existing=None) -> np.ndarray:
    """``k`` new centres from X; with ``existing`` given, those seed the distances."""
    n = len(X)
    chosen = []
    if existing is None or len(existing) == 0:
        first = int(rng.integers(n))
        chosen.append(first)
        d2 = sq_distances(X, X[first:first + 1])[:, 0]
    else:
        d2 = sq_distances(X, existing).min(axis=1)
    while len(chosen) < k:
        i = _sample_d2(d2, rng, exclude=chosen)
        chosen.append(i)
        np.minimum(d2, sq_distances(X, X[i:i + 1])[:, 0], out=d2)
    return X[np.asarray(chosen)].copy()


def _cluster_sums(X, labels, k):
    n = len(X)
    M = scipy.sparse.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
    return np.asarray(M @ X)


def _lloyd(X, centroids, *, n_frozen=0, max_iter=KMEANS_MAX_ITER, tol=KMEANS_TOL):
    """Lloyd iterations; the first ``n_frozen`` centroids never move."""
    C = np.array(centroids, dtype=float)
    k = len(C)
    prev = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d2 = sq_distances(X, C)
        labels = d2.argmin(axis=1)
        point_cost = d2[np.arange(len(X)), labels]
        inertia = float(point_cost.sum())
        assert inertia <= prev * (1 + 1e-9) + 1e-9, "k-means inertia increased"
        prev = inertia
        counts = np.bincount(labels, minlength=k)
        sums = _cluster_sums(X, labels, k)
        new = C.copy()
        live = counts > 0
        live[:n_frozen] = False
        new[live] = sums[live] / counts[live, None]
        for c in np.flatnonzero(counts == 0):
            if c < n_frozen:
                continue
            far = int(point_cost.argmax())
            new[c] = X[far]
            point_cost[far] = 0.0
        shift = float(np.sqrt(((new - C) ** 2).sum(axis=1)).max())
        C = new
        if shift < tol:
            converged = True
            break
    d2 = sq_distances(X, C)
    labels = d2.argmin(axis=1)
    return labels, C, float(d2[np.arange(len(X)), labels].sum()), it, converged


def kmeans(X, k: int, n_init: int = KMEANS_N_INIT, max_iter: int = KMEANS_MAX_ITER,
           tol: float = KMEANS_TOL, seed=None, init_centroids=None) -> KMeansResult:
    """Lloyd's algorithm from k-means++ starts; best inertia over ``n_init`` runs."""
    X = np.asarray(X, dtype=float)
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(X):
        raise ValueError(f"k={k} exceeds the number of points ({len(X)})")
    if not np.all(np.isfinite(X)):
        raise ValueError("X has non-finite entries")
    if init_centroids is not None:
        starts = [np.asarray(init_centroids, dtype=float)]
    else:
        rng = as_rng(seed)
        starts = (_kmeanspp_init(X, k, rng) for _ in range(n_init))
    best = None
    for C0 in starts:
        labels, C, inertia, it, conv = _lloyd(X, C0, max_iter=max_iter, tol=tol)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, C, inertia, it, conv)
    return best


NCD_KMEANS_MODES = (("novel", "unlabeled"), ("novel", "both"), ("all", "both"))


def ncd_kmeans(X_l, y_l, X_u, k: int, n_init: int = KMEANS_N_INIT, seed=None, *,
               update: str = "novel", data: str = "unlabeled",
               max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_TOL) -> NCDKMeansResult:
    """k-means on the unlabeled set, initialized from the known-class means.

    The known centroids are the exact class means of ``X_l``.  The ``k`` novel
    centroids are drawn k-means++ style from ``X_u`` against known and already
    chosen centroids.  ``update``/``data`` select the convergence phase:

    * ``("novel", "unlabeled")``: only novel centroids move, fitted on ``X_u``
      alone (the known means matter for the initialization only);
    * ``("novel", "both")``: all rows are assigned among all centroids, known
      centroids stay frozen;
    * ``("all", "both")``: plain Lloyd on all rows from the NCD start.

    The returned partition assigns ``X_u`` to its nearest novel centroid.
    """
    if (update, data) not in NCD_KMEANS_MODES:
        raise ValueError(f"unsupported convergence mode {(update, data)}")
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    y_l = np.asarray(y_l)
    if len(X_u) == 0:
        raise ValueError("unlabeled set is empty")
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(X_u):
        raise ValueError("k exceeds the number of unlabeled points")
    classes = np.unique(y_l)
    if len(classes) == 0:
        raise ValueError("labeled set has no classes")
    known = np.array([X_l[y_l == c].mean(axis=0) for c in classes])
    rng = as_rng(seed)
    best = None
    for _ in range(n_init):
        novel0 = _kmeanspp_init(X_u, k, rng, existing=known)
        if data == "unlabeled":
            _, C, obj, it, conv = _lloyd(X_u, novel0, max_iter=max_iter, tol=tol)
            known_final, novel = known, C
        else:
            X = np.vstack([X_l, X_u])
            frozen = len(known) if update == "novel" else 0
            _, C, obj, it, conv = _lloyd(X, np.vstack([known, novel0]), n_frozen=frozen,
                                         max_iter=max_iter, tol=tol)
            known_final, novel = C[:len(known)], C[len(known):]
        if best is None or obj < best[0]:
            best = (obj, known_final, novel, it, conv)
    obj, known_final, novel, it, conv = best
    labels = sq_distances(X_u, novel).argmin(axis=1)
    return NCDKMeansResult(labels, novel, obj, it, conv, known_final, (update, data))


# --------------------------------------------------------------------------
# spectral clustering
# --------------------------------------------------------------------------


def _as_sq_dists(X, sq_dists):
    if sq_dists is not None:
        return np.asarray(sq_dists)
    X = np.asarray(X, dtype=float)
    D = sq_distances(X, X)
    np.fill_diagonal(D, 0.0)
    return D


def mst_longest_edge(X, *, sq_dists=None):
    """Longest edge of a Euclidean minimum spanning tree (dense Prim).

    Returns ``(d_max, (i, j))``.
    """
    D = _as_sq_dists(X, sq_dists)
    n = len(D)
    if n < 2:
        raise ValueError("need at least two points")
    in_tree = np.zeros(n, bool)
    best = np.full(n, np.inf)
    parent = np.zeros(n, dtype=int)
    in_tree[0] = True
    best[:] = D[0]
    best[0] = np.inf
    longest, edge = -1.0, (0, 0)
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        v = int(cand.argmin())
        if cand[v] > longest:
            longest, edge = float(cand[v]), (int(parent[v]), v)
        in_tree[v] = True
        closer = (D[v] < best) & ~in_tree
        best[closer] = D[v][closer]
        parent[closer] = v
    d_max = math.sqrt(max(longest, 0.0))
    if d_max == 0.0:
        warnings.warn("all points coincide: MST longest edge is 0", stacklevel=2)
    return d_max, tuple(sorted(edge))


def sigma_from_smin(d_max: float, s_min: float) -> float:
    """Kernel width mapping a distance ``d_max`` to similarity ``s_min``."""
    if not 0.0 < s_min < 1.0:
        raise ValueError("s_min must lie strictly between 0 and 1")
    if not d_max > 0.0:
        raise ValueError("d_max must be positive (deduplicate the data)")
    return d_max / math.sqrt(-2.0 * math.log(s_min))


def gaussian_adjacency(X, sigma: float, *, sq_dists=None) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    D = _as_sq_dists(X, sq_dists)
    A = np.exp(-D / (2.0 * sigma * sigma))
    # the expanded-norm distances can differ in the last ulp across the diagonal
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 0.0)
    return A


def sym_normalized_laplacian(A) -> np.ndarray:
    """I - D^-1/2 A D^-1/2; rows of isolated vertices become identity rows."""
    A = np.asarray(A, dtype=float)
    deg = A.sum(axis=1)
    isolated = deg < 1e-15
    if isolated.any():
        warnings.warn(f"{int(isolated.sum())} isolated vertices in the similarity graph", stacklevel=2)
    inv_sqrt = np.where(isolated, 0.0, 1.0 / np.sqrt(np.where(isolated, 1.0, deg)))
    L = -(inv_sqrt[:, None] * A * inv_sqrt[None, :])
    L[np.diag_indices_from(L)] += 1.0
    return 0.5 * (L + L.T)


def smallest_eigenpairs(L, u: int):
    """``u`` smallest eigenpairs of a symmetric matrix, ascending, sign-fixed.

    Each eigenvector is flipped so its largest-magnitude entry is positive.
    """
    n = len(L)
    if not 1 <= u <= n:
        raise ValueError(f"u must lie in [1, {n}]")
    try:
        w, V = scipy.linalg.eigh(L, subset_by_index=[0, u - 1], driver="evr",
                                 overwrite_a=False, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(f"symmetric eigensolver failed for n={n}, u={u}: {e}") from e
    idx = np.abs(V).argmax(axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return w, V * signs


def spectral_embedding(L_sym, u: int, *, normalize_rows: bool = True) -> np.ndarray:
    """Rows of the ``u`` smallest eigenvectors of ``L_sym``, optionally unit-normed."""
    _, U = smallest_eigenpairs(L_sym, u)
    if normalize_rows:
        norms = np.linalg.norm(U, axis=1, keepdims=True)
        U = U / np.where(norms > 0, norms, 1.0)
    return U


@dataclass(frozen=True)
class SCParams:
    s_min: float
    u: int
    d_max: float
    derived_sigma: float

    @classmethod
    def from_data(cls, X, s_min, u, *, sq_dists=None) -> "SCParams":
        d_max, _ = mst_longest_edge(X, sq_dists=sq_dists)
        return cls(float(s_min), int(u), d_max, sigma_from_smin(d_max, s_min))


@dataclass
class SpectralArtifacts:
    A: np.ndarray
    degrees: np.ndarray
    L_sym: np.ndarray
    U: np.ndarray
    eigenvalues: np.ndarray


def spectral_artifacts(X, s_min: float, u: int, *, sq_dists=None, normalize_rows=True) -> SpectralArtifacts:
    D = _as_sq_dists(X, sq_dists)
    params = SCParams.from_data(X, s_min, u, sq_dists=D)
    A = gaussian_adjacency(X, params.derived_sigma, sq_dists=D)
    L = sym_normalized_laplacian(A)
    w, V = smallest_eigenpairs(L, u)
    U = V
    if normalize_rows:
        norms = np.linalg.norm(V, axis=1, keepdims=True)
        U = V / np.where(norms > 0, norms, 1.0)
    return SpectralArtifacts(A, A.sum(axis=1), L, U, w)


def _embed(D, s_min, u, normalize_rows, d_max=None):
    if d_max is None:
        d_max, _ = mst_longest_edge(None, sq_dists=D)
    sigma = sigma_from_smin(d_max, s_min)
    L = sym_normalized_laplacian(gaussian_adjacency(None, sigma, sq_dists=D))
    return spectral_embedding(L, u, normalize_rows=normalize_rows), SCParams(s_min, u, d_max, sigma)


def spectral_clustering(X, k: int, params, seed=None, *, normalize_rows: bool = True,
                        sq_dists=None, n_init: int = KMEANS_N_INIT) -> np.ndarray:
    """Gaussian-kernel spectral clustering with the MST bandwidth rule.

    ``params`` is an :class:`SCParams` or an ``(s_min, u)`` pair; the kernel
    width is always re-derived from the MST of ``X``.
    """
    X = np.asarray(X, dtype=float)
    if k == 1:
        return np.zeros(len(X), dtype=int)
    s_min, u = (params.s_min, params.u) if isinstance(params, SCParams) else params
    D = _as_sq_dists(X, sq_dists)
    U, _ = _embed(D, s_min, min(int(u), len(X)), normalize_rows)
    return kmeans(U, k, n_init=n_init, seed=seed).labels


@dataclass
class NCDSCResult:
    params: SCParams
    labels: np.ndarray
    labels_extra: np.ndarray | None
    best_ari: float
    trials: list = field(default_factory=list)


def _stratified_subsample(y_l, n_u, max_points, rng):
    n = len(y_l) + n_u
    frac = max_points / n
    keep_l = []
    for c in np.unique(y_l):
        rows = np.flatnonzero(y_l == c)
        keep_l.extend(rng.permutation(rows)[:max(1, int(round(frac * len(rows))))].tolist())
    keep_u = rng.permutation(n_u)[:max(1, int(round(frac * n_u)))]
    return np.sort(np.asarray(keep_l)), np.sort(keep_u)


def ncd_sc_optimize(X_l, y_l, X_u, k: int, n_opt: int = 50, seed=None, *,
                    u_max: int = 200, normalize_rows: bool = True, X_extra=None,
                    max_points: int | None = None, n_init: int = KMEANS_N_INIT) -> NCDSCResult:
    """Spectral parameters chosen by how well they cluster the known classes.

    Each of ``n_opt`` trials draws ``s_min ~ U(0, 1)`` and ``u ~ U{1..min(u_max, n)}``,
    embeds labeled and unlabeled rows together, runs k-means with
    ``k + C_l`` clusters and scores ARI on the labeled rows.  The best pair is
    then used to embed everything again and the unlabeled rows alone are
    clustered into ``k`` groups.

    ``X_extra`` (e.g. test rows of the novel classes) joins the final embedding
    as further unlabeled rows; their labels come back as ``labels_extra``.
    ``max_points`` caps the search-phase embedding size by stratified
    subsampling; the final embedding always uses every row.
    """
    if n_opt < 1:
        raise ValueError("n_opt must be at least 1")
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    y_l = np.asarray(y_l)
    C_l = len(np.unique(y_l))
    if len(X_l) == 0:
        raise ValueError("labeled set is empty")
    rng = as_rng(seed)
    master = int(rng.integers(2**31))

    Xs_l, ys_l, Xs_u = X_l, y_l, X_u
    if max_points is not None and len(X_l) + len(X_u) > max_points:
        il, iu = _stratified_subsample(y_l, len(X_u), max_points, rng)
        Xs_l, ys_l, Xs_u = X_l[il], y_l[il], X_u[iu]
    X_all = np.vstack([Xs_l, Xs_u])
    D = _as_sq_dists(X_all, None)
    d_max, _ = mst_longest_edge(None, sq_dists=D)
    n_l = len(Xs_l)
    top_u = min(u_max, len(X_all))

    trials = []
    best = None
    for t in range(n_opt):
        s_min = float(rng.uniform(0.0, 1.0))
        while s_min <= 0.0:
            s_min = float(rng.uniform(0.0, 1.0))
        u = int(rng.integers(1, top_u + 1))
        U, params = _embed(D, s_min, u, normalize_rows, d_max=d_max)
        labels = kmeans(U, k + C_l, n_init=n_init, seed=derive_seed(master, t)).labels
        score = metrics.ari(ys_l, labels[:n_l])
        trials.append({"trial": t, "s_min": s_min, "u": u, "ari_known": score})
        if best is None or score > best[0]:
            best = (score, params)
    best_ari, params = best

    labels_u, extra, final_params = ncd_sc_final(
        X_l, X_u, k, params.s_min, params.u, derive_seed(master, n_opt),
        X_extra=X_extra, normalize_rows=normalize_rows, n_init=n_init)
    return NCDSCResult(final_params, labels_u, extra, best_ari, trials)


def ncd_sc_final(X_l, X_u, k: int, s_min: float, u: int, seed=None, *, X_extra=None,
                 normalize_rows: bool = True, n_init: int = KMEANS_N_INIT):
    """Embed labeled, unlabeled (and extra) rows with fixed ``(s_min, u)``; cluster
    all but the labeled rows into ``k`` groups.

    Returns ``(labels_unlabeled, labels_extra or None, SCParams)``; the kernel
    width is re-derived from the MST of the rows actually embedded.
    """
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    parts = [X_l, X_u] + ([np.asarray(X_extra, dtype=float)] if X_extra is not None else [])
    X_fin = np.vstack(parts)
    D = _as_sq_dists(X_fin, None)
    U, final_params = _embed(D, s_min, min(int(u), len(X_fin)), normalize_rows)
    lab = kmeans(U[len(X_l):], k, n_init=n_init, seed=seed).labels
    extra = lab[len(X_u):] if X_extra is not None else None
    return lab[:len(X_u)], extra, final_params
