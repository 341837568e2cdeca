"""Novel class discovery for tabular data: NCD k-means, NCD spectral clustering,
projection-based NCD, clustering metrics and label-free hyperparameter tuning."""
from . import cluster, data, metrics, pbn, tune
from .cluster import kmeans, ncd_kmeans, ncd_sc_optimize, spectral_clustering
from .metrics import ari, clustering_accuracy, nmi

__all__ = [
    "cluster", "data", "metrics", "pbn", "tune",
    "kmeans", "ncd_kmeans", "ncd_sc_optimize", "spectral_clustering",
    "ari", "clustering_accuracy", "nmi",
]
__version__ = "0.1.0"
