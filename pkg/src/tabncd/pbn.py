"""Projection-based NCD: a shared encoder trained to classify the known classes
and reconstruct every row, whose latent space is then clustered.

Everything is plain numpy with hand-written reverse-mode gradients.  A model is
a dict of named weight arrays plus the configuration that produced it.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cluster
from ._rng import as_rng, derive_seed

MODEL_FORMAT_VERSION = 1
LOG_CLAMP = 1e-12
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

ENCODER = ("enc0", "enc1", "enc2")
DECODER = ("dec0", "dec1", "dec2")
CLASSIFIER = ("cls",)
BACKENDS = ("kmeans", "sc_default")
SC_DEFAULT_SMIN = 0.6


class TrainingError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class PBNConfig:
    latent_dim: int
    lr: float
    dropout: float = 0.0
    w: float = 0.5
    epochs: int = 200
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.dropout <= 0.6:
            raise ValueError(f"dropout must lie in [0, 0.6], got {self.dropout}")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if int(self.latent_dim) != self.latent_dim:
            raise ValueError("latent_dim must be an integer")

    def replace(self, **kw) -> "PBNConfig":
        return PBNConfig(**{**asdict(self), **kw})


def hidden_sizes(d: int, latent: int) -> tuple[int, int]:
    """Two hidden widths spaced geometrically between ``d`` and ``latent``."""
    h1 = int(math.floor(d ** (2 / 3) * latent ** (1 / 3) + 1e-9))
    h2 = int(math.floor(d ** (1 / 3) * latent ** (2 / 3) + 1e-9))
    return max(h1, latent), max(h2, latent)


@dataclass
class PBNModel:
    params: dict
    d: int
    n_classes: int
    hidden: tuple
    config: PBNConfig
    has_decoder: bool = True

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def layer_names(self):
        return ENCODER + (DECODER if self.has_decoder else ()) + CLASSIFIER

    def copy(self) -> "PBNModel":
        return PBNModel({k: v.copy() for k, v in self.params.items()}, self.d,
                        self.n_classes, self.hidden, self.config, self.has_decoder)


def _layer_dims(d, C_l, latent, hidden, with_decoder):
    h1, h2 = hidden
    dims = {"enc0": (d, h1), "enc1": (h1, h2), "enc2": (h2, latent), "cls": (latent, C_l)}
    if with_decoder:
        dims.update({"dec0": (latent, h2), "dec1": (h2, h1), "dec2": (h1, d)})
    return dims


def init_model(d: int, C_l: int, config: PBNConfig, seed=None, *, with_decoder=True) -> PBNModel:
    """Fresh weights, uniform in +-1/sqrt(fan_in).  ``seed`` defaults to the config's."""
    L = int(config.latent_dim)
    if L < 5 or L > d:
        raise ValueError(f"latent_dim must lie in [5, d={d}], got {L}")
    if C_l < 1:
        raise ValueError("need at least one known class")
    hidden = hidden_sizes(d, L)
    rng = as_rng(derive_seed(config.seed if seed is None else seed, 0))
    params = {}
    # fixed creation order keeps the draw sequence stable
    names = ENCODER + (DECODER if with_decoder else ()) + CLASSIFIER
    dims = _layer_dims(d, C_l, L, hidden, with_decoder)
    for name in names:
        fan_in, fan_out = dims[name]
        bound = 1.0 / math.sqrt(fan_in)
        params[name + ".W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[name + ".b"] = rng.uniform(-bound, bound, size=fan_out)
    return PBNModel(params, d, C_l, hidden, config, with_decoder)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_ce(probs, y_onehot):
    """Cross-entropy along the last axis; log clamped at 1e-12."""
    probs = np.asarray(probs, dtype=float)
    return -(np.asarray(y_onehot) * np.log(np.maximum(probs, LOG_CLAMP))).sum(axis=-1)


def loss_mse(x, x_hat):
    """Mean squared reconstruction error along the last axis."""
    diff = np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float)
    return (diff * diff).mean(axis=-1)


def combine_losses(ce: float, mse: float, w: float) -> float:
    return w * ce + (1.0 - w) * mse


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


def _chain_forward(params, names, h, p_drop, rng):
    """Affine layers with ReLU + dropout between them; the last layer stays linear."""
    cache = []
    last = len(names) - 1
    for i, name in enumerate(names):
        pre = h @ params[name + ".W"] + params[name + ".b"]
        if i == last:
            cache.append((h, pre, None))
            h = pre
            continue
        act = np.maximum(pre, 0.0)
        mask = None
        if rng is not None and p_drop > 0:
            mask = (rng.random(act.shape) >= p_drop) / (1.0 - p_drop)
            act = act * mask
        cache.append((h, pre, mask))
        h = act
    return h, cache


def _chain_backward(params, names, cache, g, grads):
    """Accumulate parameter gradients; returns the gradient w.r.t. the chain input."""
    last = len(names) - 1
    for i in range(last, -1, -1):
        name = names[i]
        h, pre, mask = cache[i]
        if i != last:
            if mask is not None:
                g = g * mask
            g = g * (pre > 0)
        grads[name + ".W"] = grads.get(name + ".W", 0.0) + h.T @ g
        grads[name + ".b"] = grads.get(name + ".b", 0.0) + g.sum(axis=0)
        g = g @ params[name + ".W"].T
    return g


def forward(model: PBNModel, X, *, rng=None):
    """``(z, x_hat, probs)``; dropout is applied only when ``rng`` is given."""
    p = model.config.dropout
    z, _ = _chain_forward(model.params, ENCODER, np.asarray(X, dtype=float), p, rng)
    x_hat = None
    if model.has_decoder:
        x_hat, _ = _chain_forward(model.params, DECODER, z, p, rng)
    probs = softmax(z @ model.params["cls.W"] + model.params["cls.b"])
    return z, x_hat, probs


def loss_and_grads(model: PBNModel, X, y, w=None, *, rng=None):
    """Loss on a batch and its gradient for every parameter.

    ``y`` holds class ids for labeled rows and -1 for unlabeled ones.  The
    cross-entropy averages over labeled rows only and is 0 when there are none;
    the reconstruction term averages over all rows.  Returns
    ``(total, ce, mse, grads)``.
    """
    w = model.config.w if w is None else w
    if not model.has_decoder:
        w = 1.0
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = len(X)
    p = model.config.dropout
    P = model.params
    z, enc_cache = _chain_forward(P, ENCODER, X, p, rng)
    grads: dict = {}
    g_z = np.zeros_like(z)

    lab = y >= 0
    n_lab = int(lab.sum())
    logits = z @ P["cls.W"] + P["cls.b"]
    probs = softmax(logits)
    ce = 0.0
    g_logits = np.zeros_like(logits)
    if n_lab:
        onehot = np.zeros((n_lab, model.n_classes))
        onehot[np.arange(n_lab), y[lab]] = 1.0
        ce = float(loss_ce(probs[lab], onehot).mean())
        g_logits[lab] = w * (probs[lab] - onehot) / n_lab
    g_z += _chain_backward(P, CLASSIFIER, [(z, logits, None)], g_logits, grads)

    mse = 0.0
    if model.has_decoder:
        x_hat, dec_cache = _chain_forward(P, DECODER, z, p, rng)
        mse = float(loss_mse(X, x_hat).mean())
        g_out = (1.0 - w) * 2.0 * (x_hat - X) / (n * model.d)
        g_z += _chain_backward(P, DECODER, dec_cache, g_out, grads)
    _chain_backward(P, ENCODER, enc_cache, g_z, grads)
    total = combine_losses(ce, mse, w)
    return total, ce, mse, grads


def loss_pbn(model: PBNModel, X, y, w=None) -> float:
    """Deterministic (dropout off) value of the training objective."""
    w = model.config.w if w is None else w
    _, x_hat, probs = forward(model, X)
    y = np.asarray(y)
    lab = y >= 0
    ce = 0.0
    if lab.any():
        onehot = np.eye(model.n_classes)[y[lab]]
        ce = float(loss_ce(probs[lab], onehot).mean())
    if x_hat is None:
        return ce
    return combine_losses(ce, float(loss_mse(X, x_hat).mean()), w)


class Adam:
    def __init__(self, params: dict, lr: float, betas=ADAM_BETAS, eps=ADAM_EPS):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass
class TrainReport:
    loss: list = field(default_factory=list)
    ce: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    wall_time: float = 0.0


def _fit(model: PBNModel, X, y, config: PBNConfig):
    rng = as_rng(derive_seed(config.seed, 1))
    opt = Adam(model.params, config.lr)
    report = TrainReport(initial_loss=loss_pbn(model, X, y))
    n = len(X)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        tot = ce_sum = mse_sum = 0.0
        n_batches = 0
        for b, s in enumerate(range(0, n, config.batch_size)):
            idx = order[s:s + config.batch_size]
            loss, ce, mse, grads = loss_and_grads(model, X[idx], y[idx], rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b} "
                                    f"(lr={config.lr:g}, w={model.config.w:g})")
            opt.step(model.params, grads)
            tot += loss
            ce_sum += ce
            mse_sum += mse
            n_batches += 1
        report.loss.append(tot / n_batches)
        report.ce.append(ce_sum / n_batches)
        report.mse.append(mse_sum / n_batches)
    report.wall_time = time.perf_counter() - start
    report.final_loss = loss_pbn(model, X, y)
    if not np.isfinite(report.final_loss):
        raise TrainingError("non-finite loss after the last epoch")
    return model, report


def _encode_labels(y_l):
    classes, inv = np.unique(np.asarray(y_l), return_inverse=True)
    if len(classes) < 2:
        raise ValueError("training needs at least 2 known classes")
    return inv.astype(np.int64), len(classes)


def train(X_l, y_l, X_u, config: PBNConfig):
    """Fit PBN on the labeled known rows and the unlabeled rows together.

    Known labels are re-indexed in sorted order.  Returns ``(model, report)``;
    the model is returned in inference mode (callers never see dropout).
    """
    y_l, C_l = _encode_labels(y_l)
    X_l = np.asarray(X_l, dtype=float)
    X_u = np.asarray(X_u, dtype=float)
    X = np.vstack([X_l, X_u])
    y = np.concatenate([y_l, np.full(len(X_u), -1, dtype=np.int64)])
    model = init_model(X.shape[1], C_l, config)
    return _fit(model, X, y, config)


def project(model: PBNModel, X) -> np.ndarray:
    z, _ = _chain_forward(model.params, ENCODER, np.asarray(X, dtype=float), 0.0, None)
    return z


def cluster_latent(Z_u, k: int, backend: str = "kmeans", seed=None) -> np.ndarray:
    """Partition latent rows into ``k`` groups.

    ``sc_default`` runs spectral clustering with s_min = 0.6 and ``u = k``.
    """
    Z_u = np.asarray(Z_u, dtype=float)
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if k == 1:
        return np.zeros(len(Z_u), dtype=np.int64)
    if backend == "kmeans":
        return cluster.kmeans(Z_u, k, n_init=cluster.KMEANS_N_INIT, seed=seed).labels
    params = cluster.SCParams.from_data(Z_u, SC_DEFAULT_SMIN, k)
    return cluster.spectral_clustering(Z_u, k, params, seed=seed)


def baseline_train(X_l, y_l, config: PBNConfig):
    """The same encoder plus classifier, trained with cross-entropy on known rows only."""
    y_l, C_l = _encode_labels(y_l)
    X_l = np.asarray(X_l, dtype=float)
    model = init_model(X_l.shape[1], C_l, config.replace(w=1.0), with_decoder=False)
    return _fit(model, X_l, y_l, model.config)


def baseline_cluster(model: PBNModel, X_u, k: int, seed=None) -> np.ndarray:
    """Project through the encoder (the layer feeding the classifier) and run k-means."""
    return cluster_latent(project(model, X_u), k, "kmeans", seed)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def save_model(model: PBNModel, path) -> Path:
    """Write an ``.npz`` of the named weight arrays plus a JSON header array."""
    path = Path(path)
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "d": model.d,
        "n_classes": model.n_classes,
        "hidden": list(model.hidden),
        "has_decoder": model.has_decoder,
        "config": asdict(model.config),
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
    }
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_model(path) -> PBNModel:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header.get('format_version')}")
        params = {k: z[k].astype(float) for k in header["shapes"]}
    for k, shape in header["shapes"].items():
        if list(params[k].shape) != shape:
            raise ValueError(f"array {k} has shape {params[k].shape}, header says {shape}")
    return PBNModel(params, header["d"], header["n_classes"], tuple(header["hidden"]),
                    PBNConfig(**header["config"]), header["has_decoder"])
