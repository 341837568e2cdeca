"""Known-class centroids as fixed anchors for k-means on unlabeled data.

Run: python3 demos/centroid_discovery.py
"""
from _blobs import known_and_novel
from tabncd import cluster, metrics

X_l, y_l, X_u, y_u = known_and_novel(spread=3.0)
k = len(set(y_u))

plain = cluster.kmeans(X_u, k, seed=0)
anchored = cluster.ncd_kmeans(X_l, y_l, X_u, k, seed=0)
print(f"k-means      ACC {metrics.clustering_accuracy(y_u, plain.labels):.3f}")
print(f"NCD k-means  ACC {metrics.clustering_accuracy(y_u, anchored.labels):.3f}")

# which centroids to seed and which rows to cluster
for mode in cluster.NCD_KMEANS_MODES:
    res = cluster.ncd_kmeans(X_l, y_l, X_u, k, seed=0, update=mode[0], data=mode[1])
    print(f"  mode {'/'.join(mode):18s} ACC {metrics.clustering_accuracy(y_u, res.labels):.3f}")
