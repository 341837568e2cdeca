"""Train the projection network, cluster its latent space and estimate the class count.

Run: python3 demos/projection_network.py
"""
import tempfile
from pathlib import Path

import numpy as np
from _blobs import known_and_novel
from tabncd import metrics, pbn, tune

X_l, y_l, X_u, y_u = known_and_novel()

config = pbn.PBNConfig(latent_dim=8, lr=1e-2, w=0.5, seed=0)
model, report = pbn.train(X_l, y_l, X_u, config)
print(f"objective {report.initial_loss:.3f} -> {report.final_loss:.3f} over {config.epochs} epochs")

Z_u = pbn.project(model, X_u)
labels = pbn.cluster_latent(Z_u, 3, seed=0)
print(f"latent k-means ACC {metrics.clustering_accuracy(y_u, labels):.3f}")

k_est = tune.estimate_k(Z_u, tune.EstimationMethod("silhouette", 2, 100), seed=0)
print(f"silhouette estimate of the novel class count: {k_est}")

with tempfile.TemporaryDirectory() as tmp:
    path = pbn.save_model(model, Path(tmp) / "model.npz")
    again = pbn.load_model(path)
    print("reloaded model projects identically:", np.array_equal(pbn.project(again, X_u), Z_u))
