"""Spectral clustering whose kernel width and embedding size are picked on known classes.

Run: python3 demos/spectral_discovery.py
"""
from _blobs import known_and_novel
from tabncd import cluster, metrics

X_l, y_l, X_u, y_u = known_and_novel()
k = len(set(y_u))

d_max, _ = cluster.mst_longest_edge(X_u)
for s_min in (0.1, 0.5, 0.9):
    print(f"s_min {s_min}: sigma {cluster.sigma_from_smin(d_max, s_min):.3f} (longest MST edge {d_max:.3f})")

res = cluster.ncd_sc_optimize(X_l, y_l, X_u, k, n_opt=20, seed=0)
print(f"chosen s_min {res.params.s_min:.3f}, u {res.params.u}, known-class ARI {res.best_ari:.3f}")
print(f"NCD-SC ACC {metrics.clustering_accuracy(y_u, res.labels):.3f}")
