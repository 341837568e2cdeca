"""Randomized invariants.  Case counts follow the acceptance budget and the
whole module is expected to finish in well under a minute."""
import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import oracles
from tabncd import cluster, data, metrics, pbn, tune

seeds = st.integers(0, 2**32 - 1)
quick = dict(deadline=None, suppress_health_check=[HealthCheck.too_slow])


@settings(max_examples=1000, **quick)
@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_assignment_matches_brute_force(seed, r, c):
    P = np.random.default_rng(seed).integers(-5, 20, size=(r, c))
    pairs, total = metrics.assignment_max(P)
    assert total == oracles.brute_assignment(P)
    assert len(pairs) == min(r, c) and total == sum(P[i, j] for i, j in pairs)
    assert len({i for i, _ in pairs}) == len({j for _, j in pairs}) == min(r, c)


@settings(max_examples=500, **quick)
@given(seeds, st.integers(2, 40), st.integers(1, 5), st.integers(1, 5))
def test_scores_ignore_relabeling(seed, n, k_true, k_pred):
    r = np.random.default_rng(seed)
    a, b = r.integers(0, k_true, n), r.integers(0, k_pred, n)
    pa = r.permutation(10)[a] + 3
    pb = r.permutation(10)[b] * 2
    for f in (metrics.clustering_accuracy, metrics.nmi, metrics.ari):
        assert math.isclose(f(a, b), f(pa, pb), rel_tol=0, abs_tol=1e-12)
        assert math.isclose(f(a, b), f(pa, b), rel_tol=0, abs_tol=1e-12)


def test_ari_of_independent_partitions():
    vals = []
    for s in range(100):
        r = np.random.default_rng(s)
        vals.append(metrics.ari(r.integers(0, 4, 200), r.integers(0, 4, 200)))
    assert abs(np.mean(vals)) < 0.05
    assert np.mean(np.abs(vals)) < 0.05


@settings(max_examples=200, **quick)
@given(seeds, st.integers(2, 6), st.integers(1, 3))
def test_majority_cluster_floor(seed, k, n_per):
    y = np.repeat(np.arange(k), n_per)
    np.random.default_rng(seed).shuffle(y)
    assert metrics.clustering_accuracy(y, np.zeros_like(y)) >= 1 / k - 1e-12


@settings(max_examples=100, **quick)
@given(seeds, st.integers(5, 30), st.integers(2, 4))
def test_validity_indices_match_definitions(seed, n, k):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, 3))
    lab = np.concatenate([np.arange(k), r.integers(0, k, n - k)])
    assert math.isclose(metrics.silhouette(X, lab), oracles.loop_silhouette(X, lab.tolist()), abs_tol=1e-9)
    assert math.isclose(metrics.calinski_harabasz(X, lab), oracles.loop_calinski_harabasz(X, lab.tolist()),
                        rel_tol=1e-9)
    assert math.isclose(metrics.davies_bouldin(X, lab), oracles.loop_davies_bouldin(X, lab.tolist()),
                        rel_tol=1e-9)
    assert math.isclose(metrics.dunn(X, lab), oracles.loop_dunn(X, lab.tolist()), rel_tol=1e-9)


@settings(max_examples=200, **quick)
@given(seeds, st.integers(2, 7), st.integers(1, 3))
def test_mst_matches_exhaustive_trees(seed, n, d):
    X = np.random.default_rng(seed).standard_normal((n, d))
    assert math.isclose(cluster.mst_longest_edge(X)[0], oracles.cayley_mst_max_edge(X), abs_tol=1e-12)


@settings(max_examples=1000, **quick)
@given(st.floats(1e-3, 1e3), st.floats(1e-6, 1 - 1e-6))
def test_bandwidth_round_trip(d_max, s_min):
    sigma = cluster.sigma_from_smin(d_max, s_min)
    assert abs(math.exp(-d_max**2 / (2 * sigma**2)) - s_min) <= 1e-12


@settings(max_examples=20, **quick)
@given(seeds, st.integers(3, 200), st.floats(0.05, 0.95))
def test_laplacian_spectrum(seed, n, s_min):
    X = np.random.default_rng(seed).standard_normal((n, 3))
    d_max, _ = cluster.mst_longest_edge(X)
    A = cluster.gaussian_adjacency(X, cluster.sigma_from_smin(d_max, s_min))
    assert np.array_equal(A, A.T)
    L = cluster.sym_normalized_laplacian(A)
    vals, V = cluster.smallest_eigenpairs(L, n)
    assert vals.min() >= -1e-8 and vals.max() <= 2 + 1e-8
    assert np.abs(L @ V - V * vals).max() < 1e-8


@settings(max_examples=20, **quick)
@given(seeds, st.integers(5, 9), st.integers(2, 4), st.floats(0.0, 0.5), st.floats(0.0, 1.0))
def test_gradients_match_finite_differences(seed, d, n_classes, dropout, w):
    r = np.random.default_rng(seed)
    latent = int(r.integers(5, d + 1))
    model = pbn.init_model(d, n_classes, pbn.PBNConfig(latent_dim=latent, lr=0.01, dropout=dropout, w=w),
                           seed=seed)
    X = r.standard_normal((10, d))
    y = np.where(r.random(10) < 0.6, r.integers(0, n_classes, 10), -1)

    def loss():
        return pbn.loss_and_grads(model, X, y, rng=np.random.default_rng(seed))[0]

    grads = pbn.loss_and_grads(model, X, y, rng=np.random.default_rng(seed))[3]
    h = 1e-5
    for name, P in model.params.items():
        flat = P.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss()
            flat[i] = keep - h
            down = loss()
            flat[i] = keep
            num[i] = (up - down) / (2 * h)
        g = grads[name].reshape(-1)
        # central differences carry ~1e-11 rounding noise at unit loss scale, so
        # tensors whose gradient is below 1e-6 are compared against that floor
        scale = max(np.abs(num).max(), np.abs(g).max(), 1e-6)
        assert np.abs(num - g).max() / scale < 1e-4, name


@settings(max_examples=200, **quick)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 1))
def test_loss_is_convex_combination(ce, mse, w):
    total = pbn.combine_losses(ce, mse, w)
    assert min(ce, mse) - 1e-9 <= total <= max(ce, mse) + 1e-9


@settings(max_examples=100, **quick)
@given(seeds, st.integers(2, 30), st.integers(1, 4))
def test_standardize_is_idempotent(seed, n, d):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, d)) * r.uniform(0.1, 100, d) + r.uniform(-50, 50, d)
    once, _ = data.standardize(data.Dataset(X))
    twice, _ = data.standardize(once)
    assert np.abs(once.X - twice.X).max() <= 1e-12 * max(1.0, np.abs(once.X).max())


@settings(max_examples=100, **quick)
@given(seeds, st.integers(3, 8), st.data())
def test_hidden_folds_keep_labels_apart(seed, n_classes, draw):
    r = np.random.default_rng(seed)
    y = np.repeat(np.arange(n_classes), 4)
    split = data.split_known_novel(data.Dataset(r.standard_normal((len(y), 2)), y), [n_classes - 1])
    known = split.known_classes.tolist()
    n_hid = draw.draw(st.integers(0, len(known) - 1))
    hidden = r.choice(known, size=n_hid, replace=False).tolist()
    fold = data.hide_classes(split, hidden)
    with data.evaluation_access():
        unl = set(fold.sealed.unseal().tolist())
    assert not set(fold.labeled.y.tolist()) & unl
    assert set(fold.hidden.y.tolist()) <= set(known)
    assert len(fold.labeled) + len(fold.hidden) == len(split.labeled)


@settings(max_examples=100, **quick)
@given(seeds, st.lists(st.integers(0, 30), min_size=3, max_size=9, unique=True), st.data())
def test_folds_ignore_label_order(seed, labels, draw):
    n_hid = draw.draw(st.integers(1, len(labels) - 1))
    shuffled = list(np.random.default_rng(seed).permutation(labels))
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert tune.make_folds(labels, n_hid, 4, seed) == tune.make_folds(shuffled, n_hid, 4, seed)


@settings(max_examples=50, **quick)
@given(seeds, st.integers(3, 25), st.floats(0.1, 10), st.floats(0.5, 4))
def test_adjacency_scale_consistency(seed, n, sigma, scale):
    X = np.random.default_rng(seed).standard_normal((n, 2))
    A = cluster.gaussian_adjacency(X, sigma)
    B = cluster.gaussian_adjacency(scale * X, scale * sigma)
    assert np.allclose(A, B, rtol=0, atol=1e-12)
    assert np.array_equal(A, A.T)


@settings(max_examples=50, **quick)
@given(seeds, st.integers(1, 4))
def test_known_centroids_never_move(seed, k):
    r = np.random.default_rng(seed)
    X_l = r.standard_normal((30, 3))
    y_l = r.integers(0, 3, 30)
    X_u = r.standard_normal((20, 3)) + 2
    res = cluster.ncd_kmeans(X_l, y_l, X_u, k, n_init=2, seed=seed)
    means = np.array([X_l[y_l == c].mean(axis=0) for c in np.unique(y_l)])
    assert np.array_equal(res.known_centroids, means)
    assert res.centroids.shape == (k, 3)


@settings(max_examples=30, **quick)
@given(seeds, st.integers(1, 5))
def test_more_restarts_never_raise_inertia(seed, k):
    X = np.random.default_rng(seed).standard_normal((60, 2))
    assert cluster.kmeans(X, k, n_init=6, seed=seed).inertia <= cluster.kmeans(X, k, n_init=3, seed=seed).inertia + 1e-9


@settings(max_examples=50, **quick)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False), min_size=1, max_size=12),
       st.lists(st.sampled_from(["x", "y", "zz"]), min_size=12, max_size=12))
def test_csv_round_trip(values, cats):
    import tempfile
    from pathlib import Path
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "a.csv"
        rows = ["num,cat,label"] + [f"{v!r},{c},{c}{i % 2}" for i, (v, c) in enumerate(zip(values, cats))]
        p.write_text("\n".join(rows) + "\n")
        schema = data.FeatureSchema((("num", data.NUMERIC), ("cat", data.CATEGORICAL)), "label")
        ds = data.load_csv(p, schema)
        data.write_csv(ds, Path(tmp) / "b.csv")
        back = data.load_csv(Path(tmp) / "b.csv", schema)
        assert np.array_equal(ds.X, back.X) and np.array_equal(ds.y, back.y)
