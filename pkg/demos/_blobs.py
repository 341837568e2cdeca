"""Shared synthetic data for the demos: well separated Gaussian classes."""
import numpy as np


def known_and_novel(n_known=4, n_novel=3, n_per=60, d=8, sep=12.0, spread=1.0, seed=1):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_known + n_novel, d))
    centers *= sep / np.linalg.norm(centers, axis=1, keepdims=True)
    X = np.vstack([c + spread * rng.standard_normal((n_per, d)) for c in centers])
    y = np.repeat(np.arange(n_known + n_novel), n_per)
    known = y < n_known
    return X[known], y[known], X[~known], y[~known] - n_known
