"""Hyperparameter selection without novel labels.

Known classes are hidden fold by fold and treated as extra unlabeled data; a
configuration is scored by how well its latent clustering recovers them.  The
same module estimates the number of novel clusters from validity indices.
"""
from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import spearmanr

from . import cluster, metrics, pbn
from ._rng import as_rng, derive_seed
from .data import NCDSplit, hide_classes

METHODS = ("pbn", "baseline")
CVI_KINDS = ("silhouette", "calinski_harabasz", "davies_bouldin", "dunn")
ESTIMATION_KINDS = CVI_KINDS + ("elbow", "km_acc")
DEFAULT_K_MAX = 100
DEFAULT_N_COMBOS = 30
# above this many rows the CVI sweep recomputes distances blockwise
DIST_CACHE_ROWS = 8000


# --------------------------------------------------------------------------
# search spaces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    name: str
    low: float
    high: float | None   # None means "the feature count d"
    dist: str            # uniform | log-uniform | int-uniform

    def sample(self, rng, d: int):
        high = d if self.high is None else self.high
        if self.dist == "uniform":
            return float(rng.uniform(self.low, high))
        if self.dist == "log-uniform":
            return float(math.exp(rng.uniform(math.log(self.low), math.log(high))))
        if self.dist == "int-uniform":
            return int(rng.integers(int(self.low), int(high) + 1))
        raise ValueError(f"unknown distribution {self.dist!r}")


@dataclass(frozen=True)
class HyperparamSpace:
    params: tuple

    def sample(self, rng, d: int) -> dict:
        return {p.name: p.sample(rng, d) for p in self.params}

    @property
    def names(self):
        return tuple(p.name for p in self.params)


PBN_SPACE = HyperparamSpace((
    Param("latent_dim", 5, None, "int-uniform"),
    Param("lr", 1e-4, 0.1, "log-uniform"),
    Param("dropout", 0.0, 0.6, "uniform"),
    Param("w", 0.0, 1.0, "uniform"),
))
BASELINE_SPACE = HyperparamSpace(PBN_SPACE.params[:3])


def space_for(method: str) -> HyperparamSpace:
    if method == "pbn":
        return PBN_SPACE
    if method == "baseline":
        return BASELINE_SPACE
    raise ValueError(f"no search space for method {method!r}")


# --------------------------------------------------------------------------
# folds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    hidden_classes: tuple
    seed: int


@dataclass
class FoldResult:
    fold_id: int
    hidden_classes: tuple
    acc_hidden: float = float("nan")
    ari_hidden: float = float("nan")
    nmi_hidden: float = float("nan")
    estimated_k_prime: int | None = None
    wall_time: float = 0.0
    error: str | None = None


def make_folds(known_labels, n_hid: int, n_folds: int, seed=0) -> list[FoldSpec]:
    """``n_folds`` distinct random ``n_hid``-subsets of the known labels.

    The label list is treated as a set, so its order never changes the result.
    """
    labels = sorted(set(np.asarray(known_labels).tolist()))
    if not 1 <= n_hid < len(labels):
        raise ValueError(f"n_hid must lie in [1, {len(labels) - 1}], got {n_hid}")
    if n_folds < 1:
        raise ValueError("n_folds must be positive")
    total = math.comb(len(labels), n_hid)
    rng = as_rng(derive_seed(seed, 0xF01D))
    if total <= n_folds:
        if total < n_folds:
            warnings.warn(f"only {total} distinct hidden-class subsets exist; "
                          f"using {total} folds instead of {n_folds}", stacklevel=2)
        subsets = list(itertools.combinations(labels, n_hid))
        subsets = [subsets[i] for i in rng.permutation(total)]
    elif total <= 100_000:
        subsets = list(itertools.combinations(labels, n_hid))
        subsets = [subsets[i] for i in rng.choice(total, size=n_folds, replace=False)]
    else:
        seen, subsets = set(), []
        while len(subsets) < n_folds:
            pick = tuple(sorted(rng.choice(labels, size=n_hid, replace=False).tolist()))
            if pick not in seen:
                seen.add(pick)
                subsets.append(pick)
    return [FoldSpec(i, tuple(s), derive_seed(seed, i)) for i, s in enumerate(subsets)]


# --------------------------------------------------------------------------
# cluster-count estimation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimationMethod:
    kind: str
    k_min: int = 2
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self):
        if self.kind not in ESTIMATION_KINDS:
            raise ValueError(f"unknown estimation method {self.kind!r}")
        floor = 1 if self.kind == "km_acc" else 2
        if self.k_min < floor or self.k_max < self.k_min:
            raise ValueError(f"invalid k range [{self.k_min}, {self.k_max}] for {self.kind}")


def _sweep(Z, k_min, k_max, seed):
    for k in range(k_min, k_max + 1):
        yield k, cluster.kmeans(Z, k, n_init=cluster.KMEANS_N_INIT, seed=derive_seed(seed, k))


def estimate_k(Z, method: EstimationMethod, seed=0):
    """Cluster count chosen by a validity index over k-means partitions of ``Z``.

    Silhouette, Calinski-Harabasz and Dunn are maximized, Davies-Bouldin is
    minimized; ties go to the smaller k.  ``elbow`` returns the kneedle knee
    of the inertia curve, or ``None`` when the curve has none.
    """
    if method.kind == "km_acc":
        raise ValueError("km_acc needs labeled rows; call km_acc_estimate")
    Z = np.asarray(Z, dtype=float)
    if len(Z) < 3 or np.ptp(Z, axis=0).max() == 0:
        raise ValueError("cannot estimate a cluster count on degenerate data")
    k_max = min(method.k_max, len(Z) - 1)
    if k_max < method.k_max:
        warnings.warn(f"k_max reduced to n-1={k_max}", stacklevel=2)
    if k_max < method.k_min:
        raise ValueError("too few rows for the requested k range")
    if method.kind == "elbow":
        ks, inertia = zip(*((k, r.inertia) for k, r in _sweep(Z, method.k_min, k_max, seed)))
        knee = metrics.kneedle_elbow(ks, inertia)
        return None if knee is None else int(round(knee))

    dist = None
    if method.kind in ("silhouette", "dunn") and len(Z) <= DIST_CACHE_ROWS:
        dist = metrics.pairwise_distances(Z)
    best_k, best = None, None
    sign = -1.0 if method.kind == "davies_bouldin" else 1.0
    for k, res in _sweep(Z, method.k_min, k_max, seed):
        if len(np.unique(res.labels)) < 2:
            continue
        if method.kind == "silhouette":
            s = metrics.silhouette(Z, res.labels, dist=dist)
        elif method.kind == "dunn":
            s = metrics.dunn(Z, res.labels, dist=dist)
        elif method.kind == "calinski_harabasz":
            s = metrics.calinski_harabasz(Z, res.labels)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                s = metrics.davies_bouldin(Z, res.labels)
        s *= sign
        if best is None or s > best:
            best_k, best = k, s
    if best_k is None:
        raise ValueError("no k in range produced at least 2 clusters")
    return best_k


def km_acc_estimate(Z_l, y_l, Z_u, k_max: int = DEFAULT_K_MAX, seed=0, *, k_min: int = 1) -> int:
    """Novel-cluster count whose joint k-means best matches the labeled rows.

    Sweeps ``k = C_l + k_min .. C_l + k_max`` on the stacked data, measures
    accuracy on the labeled rows only and returns ``k - C_l``.  Labeled
    accuracy saturates once the known classes sit in separate clusters, so
    ties go to the larger k: the last count before a known class is split.
    """
    Z_l = np.asarray(Z_l, dtype=float)
    y_l = np.asarray(y_l)
    if len(Z_l) == 0:
        raise ValueError("km_acc needs labeled rows")
    C_l = len(np.unique(y_l))
    Z = np.vstack([Z_l, np.asarray(Z_u, dtype=float)])
    hi = min(C_l + k_max, len(Z) - 1)
    best_k, best = None, -1.0
    for k, res in _sweep(Z, C_l + k_min, hi, seed):
        a = metrics.clustering_accuracy(y_l, res.labels[:len(Z_l)])
        if a >= best:
            best_k, best = k, a
    if best_k is None:
        raise ValueError("too few rows for the requested k range")
    return max(best_k - C_l, 1)


def estimate_novel_count(method: EstimationMethod, Z_u, Z_l=None, y_l=None, seed=0,
                         *, fallback: int | None = None):
    """Dispatch to the right estimator.  ``fallback`` replaces an undefined elbow."""
    if method.kind == "km_acc":
        if Z_l is None or y_l is None:
            raise ValueError("km_acc needs the labeled projection")
        return km_acc_estimate(Z_l, y_l, Z_u, method.k_max, seed, k_min=method.k_min)
    k = estimate_k(Z_u, method, seed)
    if k is None:
        if fallback is None:
            return None
        warnings.warn(f"no elbow found; falling back to k={fallback}", stacklevel=2)
        return fallback
    return k


# --------------------------------------------------------------------------
# fold evaluation and search
# --------------------------------------------------------------------------


def make_config(method: str, combo: dict, seed: int, *, epochs: int | None = None) -> pbn.PBNConfig:
    kw = dict(latent_dim=int(combo["latent_dim"]), lr=float(combo["lr"]),
              dropout=float(combo["dropout"]), seed=int(seed))
    kw["w"] = float(combo["w"]) if method == "pbn" else 1.0
    if epochs is not None:
        kw["epochs"] = int(epochs)
    return pbn.PBNConfig(**kw)


def fit_project(method: str, X_l, y_l, X_u, config: pbn.PBNConfig):
    """Train ``method`` and return the model with the report."""
    if method == "pbn":
        return pbn.train(X_l, y_l, X_u, config)
    if method == "baseline":
        return pbn.baseline_train(X_l, y_l, config)
    raise ValueError(f"method must be one of {METHODS}, got {method!r}")


class ComboEvaluation(NamedTuple):
    mean_ari: float
    folds: list

    @property
    def failed(self) -> bool:
        return any(f.error is not None for f in self.folds)

    @property
    def mean_acc(self) -> float:
        return float(np.mean([f.acc_hidden for f in self.folds])) if self.folds else float("nan")


def evaluate_fold(split: NCDSplit, method: str, combo: dict, fold: FoldSpec,
                  estimate: EstimationMethod | None = None, seed=0, *,
                  epochs: int | None = None, backend: str = "kmeans") -> FoldResult:
    start = time.perf_counter()
    res = FoldResult(fold.fold_id, tuple(fold.hidden_classes))
    try:
        fs = hide_classes(split, fold.hidden_classes)
        cfg = make_config(method, combo, derive_seed(fold.seed, seed), epochs=epochs)
        model, _ = fit_project(method, fs.labeled.X, fs.labeled.y, fs.unlabeled.X, cfg)
        Z = pbn.project(model, fs.unlabeled.X)
        mask = fs.hidden_mask
        n_hid = len(fold.hidden_classes)
        if estimate is None:
            if split.C_u_true is None:
                raise ValueError("known-k evaluation needs the novel class count")
            k_prime = int(split.C_u_true)
        else:
            Z_l = pbn.project(model, fs.labeled.X) if estimate.kind == "km_acc" else None
            k_prime = estimate_novel_count(estimate, Z[~mask], Z_l, fs.labeled.y,
                                           seed=derive_seed(fold.seed, seed, 1),
                                           fallback=estimate.k_min)
            res.estimated_k_prime = int(k_prime)
        labels = pbn.cluster_latent(Z, n_hid + k_prime, backend, seed=derive_seed(fold.seed, seed, 2))
        truth = fs.hidden.y
        pred = labels[mask]
        res.acc_hidden = metrics.clustering_accuracy(truth, pred)
        res.ari_hidden = metrics.ari(truth, pred)
        res.nmi_hidden = metrics.nmi(truth, pred)
    except (pbn.TrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    res.wall_time = time.perf_counter() - start
    return res


def evaluate_combo(split: NCDSplit, method: str, combo: dict, folds,
                   estimate: EstimationMethod | None = None, seed=0, *,
                   epochs: int | None = None, backend: str = "kmeans") -> ComboEvaluation:
    """Mean hidden-class ARI of one configuration over the folds.

    A fold whose training diverges marks the whole combination failed; its
    mean is then NaN so selection skips it.
    """
    results = [evaluate_fold(split, method, combo, f, estimate, seed, epochs=epochs, backend=backend)
               for f in folds]
    if any(r.error is not None for r in results):
        return ComboEvaluation(float("nan"), results)
    return ComboEvaluation(float(np.mean([r.ari_hidden for r in results])), results)


@dataclass
class LeaderboardEntry:
    index: int
    combo: dict
    seed: int
    evaluation: ComboEvaluation

    @property
    def mean_ari(self) -> float:
        return self.evaluation.mean_ari

    @property
    def failed(self) -> bool:
        return self.evaluation.failed

    def records(self) -> list[dict]:
        """One flat record per fold."""
        out = []
        for f in self.evaluation.folds:
            out.append({
                "combo_index": self.index, "combo_seed": self.seed, **self.combo,
                "fold_id": f.fold_id, "hidden_classes": list(f.hidden_classes),
                "acc_hidden": f.acc_hidden, "ari_hidden": f.ari_hidden, "nmi_hidden": f.nmi_hidden,
                "estimated_k_prime": f.estimated_k_prime, "wall_time": f.wall_time,
                "mean_ari_hidden": self.mean_ari, "failed": self.failed, "error": f.error,
            })
        return out


@dataclass
class SearchResult:
    best: LeaderboardEntry
    leaderboard: list = field(default_factory=list)


def _rank_key(entry: LeaderboardEntry):
    return (entry.failed, -entry.mean_ari if not entry.failed else 0.0, entry.index)


def random_search(split: NCDSplit, method: str, space: HyperparamSpace, n_combos: int,
                  folds, estimate: EstimationMethod | None = None, seed=0, *,
                  epochs: int | None = None, on_entry=None) -> SearchResult:
    """Evaluate ``n_combos`` i.i.d. draws from ``space`` and rank them.

    The leaderboard is sorted by mean hidden ARI (descending, ties by draw
    index) with failed combinations last.  ``on_entry`` is called with each
    entry as soon as it is scored, so callers can persist progress.
    """
    if n_combos < 1:
        raise ValueError("n_combos must be positive")
    rng = as_rng(derive_seed(seed, 0x5EA))
    d = split.labeled.n_features
    entries = []
    for i in range(n_combos):
        combo = space.sample(rng, d)
        combo_seed = derive_seed(seed, i)
        ev = evaluate_combo(split, method, combo, folds, estimate, combo_seed, epochs=epochs)
        entry = LeaderboardEntry(i, combo, combo_seed, ev)
        entries.append(entry)
        if on_entry is not None:
            on_entry(entry)
    board = sorted(entries, key=_rank_key)
    if board[0].failed:
        raise RuntimeError("every sampled configuration failed to train")
    return SearchResult(board[0], board)


class CorrelationReport(NamedTuple):
    pairs: list
    spearman: float


def correlation_report(leaderboard, final_scores) -> CorrelationReport:
    """Hidden-class ARI against the final novel-class score, per combination.

    ``final_scores`` maps a combination index to its score (a sequence is read
    positionally).  Failed combinations are left out.
    """
    lookup = final_scores if isinstance(final_scores, dict) else dict(enumerate(final_scores))
    pairs = [(e.index, e.mean_ari, float(lookup[e.index])) for e in leaderboard
             if not e.failed and e.index in lookup]
    pairs.sort()
    if len(pairs) < 2:
        return CorrelationReport(pairs, float("nan"))
    rho = spearmanr([p[1] for p in pairs], [p[2] for p in pairs]).statistic
    return CorrelationReport(pairs, float(rho))


def agnostic_evaluate(split: NCDSplit, method: str, combo: dict, n_hid: int, n_folds: int,
                      estimate: EstimationMethod, seed=0, *, epochs: int | None = None):
    """Average hidden-class ACC of ``combo`` with the cluster count estimated per fold.

    Returns ``(mean_acc, fold_results)``.
    """
    folds = make_folds(split.known_classes, n_hid, n_folds, seed)
    ev = evaluate_combo(split, method, combo, folds, estimate, seed, epochs=epochs)
    return ev.mean_acc, ev.folds
