"""Command-line experiment runner.

Every subcommand reads a JSON experiment config (``--config``) and writes
line-delimited JSON records plus flat CSV summaries under ``--out``.  Errors
exit nonzero with one JSON object on stderr.

Config keys (all optional unless noted)::

    dataset       manifest name or path (required unless "bundle" is given)
    bundle        directory written by ``prepare``
    method        kmeans | ncd_kmeans | sc | ncd_sc | pbn | baseline
    mode          known_k | estimated_k
    estimation    {"kind": "silhouette", "k_min": 2, "k_max": 100}
    hyperparams   fixed values; defaults come from the manifest's method section
    space         "default" to tune by hidden-class folds (exclusive with hyperparams)
    n_combos      search budget when a space is given (default 30)
    n_seeds       repetitions (default 10)
    master_seed   (default 0)
    backend       latent clustering for pbn: kmeans | sc_default
    n_opt         NCD-SC search budget (default 50)
    sc_max_points subsample cap for the NCD-SC search phase
    epochs        training epochs override
    representation  estimate only: original | latent
    counts, methods, n_assignments   ratio-sweep only
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import sys
import threading
import time
from dataclasses import asdict
from importlib.metadata import PackageNotFoundError, version as pkg_version
from pathlib import Path

import numpy as np

from . import cluster, data, metrics, pbn, tune
from ._rng import as_rng, derive_seed

METHODS = ("kmeans", "ncd_kmeans", "sc", "ncd_sc", "pbn", "baseline")
MODES = ("known_k", "estimated_k")
PLAIN_SC_DEFAULT = {"s_min": 0.6}

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


def library_version() -> str:
    try:
        return pkg_version("tabncd")
    except PackageNotFoundError:
        return "0+unknown"


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def load_config(path) -> dict:
    p = Path(path)
    shipped = data.MANIFEST_DIR / f"{p.stem}.ini"
    if p.suffix == ".ini" or (not p.exists() and len(p.parts) == 1 and shipped.exists()):
        return {"dataset": str(p)}
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return cfg


def validate_config(cfg: dict) -> dict:
    cfg = dict(cfg)
    cfg.setdefault("mode", "known_k")
    cfg.setdefault("n_seeds", 10)
    cfg.setdefault("master_seed", 0)
    cfg.setdefault("backend", "kmeans")
    cfg.setdefault("n_opt", 50)
    if "dataset" not in cfg and "bundle" not in cfg:
        raise ConfigError("config needs a dataset manifest or a prepared bundle")
    method = cfg.get("method")
    if method is not None and method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if cfg["mode"] == "estimated_k" and not cfg.get("estimation"):
        raise ConfigError("estimated_k mode needs an estimation method")
    if cfg.get("hyperparams") is not None and cfg.get("space") is not None:
        raise ConfigError("fixed hyperparams and a search space are mutually exclusive")
    if cfg["backend"] not in pbn.BACKENDS:
        raise ConfigError(f"backend must be one of {pbn.BACKENDS}")
    if int(cfg["n_seeds"]) < 1:
        raise ConfigError("n_seeds must be positive")
    return cfg


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k not in ("output_dir",)}
    return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


def estimation_of(cfg: dict) -> tune.EstimationMethod | None:
    e = cfg.get("estimation")
    if not e:
        return None
    if isinstance(e, str):
        e = {"kind": e}
    return tune.EstimationMethod(e["kind"], int(e.get("k_min", 1 if e["kind"] == "km_acc" else 2)),
                                 int(e.get("k_max", tune.DEFAULT_K_MAX)))


def load_data(cfg: dict, novel=None):
    """``(bundle, manifest or None)`` for a config."""
    if cfg.get("bundle") and novel is None:
        return data.read_bundle(cfg["bundle"]), None
    m = data.read_manifest(cfg["dataset"])
    return data.build_bundle(m, novel=novel), m


def hyperparams_for(cfg: dict, method: str, manifest) -> dict:
    if cfg.get("hyperparams") is not None:
        return dict(cfg["hyperparams"])
    section = {"pbn": "pbn", "baseline": "baseline", "ncd_sc": "ncd_sc", "sc": "sc"}.get(method)
    hp = manifest.method_params(section) if (manifest is not None and section) else {}
    if method == "sc" and not hp:
        hp = dict(PLAIN_SC_DEFAULT)
    if method in ("pbn", "baseline") and not hp:
        raise ConfigError(f"no hyperparameters for {method}: give 'hyperparams', 'space', "
                          "or a manifest with a matching section")
    return hp


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


class RecordWriter:
    """Serialized appender for one JSONL file, truncated when the writer is created."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("")
        self._lock = threading.Lock()

    def write(self, record: dict):
        line = json.dumps(record, sort_keys=True, default=_json_default)
        with self._lock, open(self.path, "a") as fh:
            fh.write(line + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def write_csv_rows(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols: list = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


def fmt_pm(values) -> str:
    """``mean±std`` in percent with one decimal, std over the given runs."""
    v = 100.0 * np.asarray(values, dtype=float)
    return f"{v.mean():.1f}±{v.std():.1f}"


SCORE_KEYS = ("acc", "nmi", "ari", "acc_unlabeled", "nmi_unlabeled", "ari_unlabeled")


def summarize(records: list[dict]) -> list[dict]:
    """One row per (dataset, method, mode, config hash) with mean/std per score."""
    groups: dict = {}
    for r in records:
        if r.get("error"):
            continue
        key = (r.get("dataset"), r.get("method"), r.get("mode"), r.get("config_hash"))
        groups.setdefault(key, []).append(r)
    rows = []
    for (ds, method, mode, h), rs in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))):
        row = {"dataset": ds, "method": method, "mode": mode, "config_hash": h, "n_runs": len(rs)}
        for k in SCORE_KEYS:
            vals = [r[k] for r in rs if r.get(k) is not None]
            if vals:
                row[f"{k}_mean"] = float(np.mean(vals))
                row[f"{k}_std"] = float(np.std(vals))
                row[k] = fmt_pm(vals)
        ks = [r["k_used"] for r in rs if r.get("k_used") is not None]
        if ks:
            row["k_used"] = " ".join(str(k) for k in ks)
        rows.append(row)
    return rows


# --------------------------------------------------------------------------
# running one method
# --------------------------------------------------------------------------


def _scores(y_true, y_pred, suffix=""):
    return {f"acc{suffix}": metrics.clustering_accuracy(y_true, y_pred),
            f"nmi{suffix}": metrics.nmi(y_true, y_pred),
            f"ari{suffix}": metrics.ari(y_true, y_pred)}


def run_method(bundle: data.Bundle, method: str, hyperparams: dict, seed: int, *,
               k: int | None = None, estimation: tune.EstimationMethod | None = None,
               backend: str = "kmeans", n_opt: int = 50, sc_max_points=None,
               epochs=None, ncd_mode=("novel", "unlabeled")) -> dict:
    """Fit ``method`` on the bundle's training split and partition D^u and the test rows.

    Returns the partitions (``labels_unlabeled``, ``labels_test``), the
    cluster count used and, if estimated, the estimate.  Centroid methods
    predict test rows from their fitted centroids; spectral methods embed
    the test rows jointly since they have no out-of-sample map.
    """
    s = bundle.split
    X_l, y_l, X_u, X_t = s.labeled.X, s.labeled.y, s.unlabeled.X, bundle.test.X
    out: dict = {}
    est_seed = derive_seed(seed, 7)

    def pick_k(Z_u, Z_l=None):
        if estimation is None:
            if k is None:
                raise ConfigError("known_k mode needs the novel class count")
            return k
        kk = tune.estimate_novel_count(estimation, Z_u, Z_l, y_l, seed=est_seed,
                                       fallback=estimation.k_min)
        out["estimated_k"] = int(kk)
        return int(kk)

    if method in ("kmeans", "ncd_kmeans", "sc", "ncd_sc"):
        kk = pick_k(X_u, X_l)
        if method == "kmeans":
            r = cluster.kmeans(X_u, kk, seed=seed)
            lu, lt = r.labels, r.predict(X_t)
        elif method == "ncd_kmeans":
            r = cluster.ncd_kmeans(X_l, y_l, X_u, kk, seed=seed, update=ncd_mode[0], data=ncd_mode[1])
            lu, lt = r.labels, r.predict(X_t)
        elif method == "sc":
            hp = {**PLAIN_SC_DEFAULT, **hyperparams}
            joint = np.vstack([X_u, X_t])
            u = int(hp.get("u", kk))
            params = cluster.SCParams.from_data(joint, float(hp["s_min"]), u)
            lab = cluster.spectral_clustering(joint, kk, params, seed=seed)
            lu, lt = lab[:len(X_u)], lab[len(X_u):]
        else:
            r = cluster.ncd_sc_optimize(X_l, y_l, X_u, kk, n_opt=n_opt, seed=seed,
                                        X_extra=X_t, max_points=sc_max_points)
            lu, lt = r.labels, r.labels_extra
            out["sc_params"] = asdict(r.params)
            out["search_ari"] = r.best_ari
    else:
        cfg = tune.make_config(method, hyperparams, seed, epochs=epochs)
        model, report = tune.fit_project(method, X_l, y_l, X_u, cfg)
        out["train_loss"] = {"initial": report.initial_loss, "final": report.final_loss}
        Z_u, Z_t = pbn.project(model, X_u), pbn.project(model, X_t)
        Z_l = pbn.project(model, X_l) if (estimation and estimation.kind == "km_acc") else None
        kk = pick_k(Z_u, Z_l)
        be = backend if method == "pbn" else "kmeans"
        if be == "kmeans":
            r = cluster.kmeans(Z_u, kk, seed=derive_seed(seed, 2))
            lu, lt = r.labels, r.predict(Z_t)
        else:
            lab = pbn.cluster_latent(np.vstack([Z_u, Z_t]), kk, be, seed=derive_seed(seed, 2))
            lu, lt = lab[:len(Z_u)], lab[len(Z_u):]
        out["model"] = model
    out.update(labels_unlabeled=np.asarray(lu), labels_test=np.asarray(lt), k_used=int(kk))
    return out


def score_run(bundle: data.Bundle, result: dict) -> dict:
    """Open the sealed novel labels and score both partitions."""
    with data.evaluation_access():
        y_u = bundle.split.sealed.unseal()
        y_t = bundle.test_sealed.unseal()
    sc = {}
    if len(y_t):
        sc.update(_scores(y_t, result["labels_test"]))
    sc.update(_scores(y_u, result["labels_unlabeled"], "_unlabeled"))
    return sc


def _maybe_tune(cfg, bundle, manifest, method, est, writer=None):
    if cfg.get("space") is None:
        return hyperparams_for(cfg, method, manifest), None
    if method not in tune.METHODS:
        raise ConfigError(f"hidden-class tuning applies to {tune.METHODS}, not {method}")
    space = tune.space_for(method)
    n_hid = int(cfg.get("hidden_per_fold", manifest.hidden_per_fold if manifest else 0))
    n_folds = int(cfg.get("n_folds", manifest.n_folds if manifest else 0))
    if n_hid < 1 or n_folds < 1:
        raise ConfigError("tuning needs hidden_per_fold and n_folds (config or manifest)")
    seed = int(cfg["master_seed"])
    folds = tune.make_folds(bundle.split.known_classes, n_hid, n_folds, seed)
    on_entry = None
    if writer is not None:
        def on_entry(entry):
            for rec in entry.records():
                writer.write({"method": method, **rec})
    res = tune.random_search(bundle.split, method, space, int(cfg.get("n_combos", tune.DEFAULT_N_COMBOS)),
                             folds, est if cfg["mode"] == "estimated_k" else None, seed,
                             epochs=cfg.get("epochs"), on_entry=on_entry)
    return dict(res.best.combo), res


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_prepare(cfg: dict, out: Path, args) -> int:
    m = data.read_manifest(cfg["dataset"])
    bundle = data.build_bundle(m)
    meta = data.write_bundle(bundle, out / m.name)
    print(json.dumps({"bundle": str(out / m.name), "rows": meta["rows"],
                      "features": len(meta["feature_names"]), "checksums": meta["checksums"]}))
    return EXIT_OK


def cmd_run(cfg: dict, out: Path, args) -> int:
    cfg = validate_config(cfg)
    method = cfg.get("method")
    if method is None:
        raise ConfigError("run needs a method")
    bundle, manifest = load_data(cfg)
    est = estimation_of(cfg) if cfg["mode"] == "estimated_k" else None
    hp, search = _maybe_tune(cfg, bundle, manifest, method, est,
                             RecordWriter(out / "tuning.jsonl") if cfg.get("space") else None)
    chash = config_hash(cfg)
    writer = RecordWriter(out / "records.jsonl")
    records, failures = [], 0
    for i in range(int(cfg["n_seeds"])):
        seed = derive_seed(int(cfg["master_seed"]), i)
        rec = {"config_hash": chash, "dataset": bundle.name, "method": method, "mode": cfg["mode"],
               "seed_index": i, "seed": seed, "hyperparams": hp, "backend": cfg["backend"],
               "version": library_version()}
        start = time.perf_counter()
        try:
            res = run_method(bundle, method, hp, seed, k=bundle.split.C_u_true, estimation=est,
                             backend=cfg["backend"], n_opt=int(cfg["n_opt"]),
                             sc_max_points=cfg.get("sc_max_points"), epochs=cfg.get("epochs"))
            rec.update(score_run(bundle, res))
            rec.update({k: res[k] for k in ("k_used", "estimated_k", "sc_params", "search_ari",
                                             "train_loss") if k in res})
        except (pbn.TrainingError, cluster.EigenSolverError, np.linalg.LinAlgError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
            failures += 1
        rec["wall_time"] = time.perf_counter() - start
        writer.write(rec)
        records.append(rec)
    rows = summarize(records)
    write_csv_rows(out / "summary.csv", rows)
    for r in rows:
        print(json.dumps({k: r[k] for k in ("dataset", "method", "mode", "n_runs") if k in r}
                         | {k: r.get(k) for k in ("acc", "acc_unlabeled")}, ensure_ascii=False))
    if failures == len(records):
        raise RuntimeError(f"all {failures} runs failed")
    return EXIT_OK


def cmd_tune(cfg: dict, out: Path, args) -> int:
    cfg = validate_config(cfg)
    method = cfg.get("method")
    if method not in tune.METHODS:
        raise ConfigError(f"tune supports {tune.METHODS}")
    cfg.setdefault("space", "default")
    cfg.pop("hyperparams", None)
    bundle, manifest = load_data(cfg)
    est = estimation_of(cfg) if cfg["mode"] == "estimated_k" else None
    best, res = _maybe_tune(cfg, bundle, manifest, method, est, RecordWriter(out / "leaderboard.jsonl"))
    rows = [{"rank": r, "combo_index": e.index, **e.combo, "mean_ari_hidden": e.mean_ari,
             "mean_acc_hidden": e.evaluation.mean_acc, "failed": e.failed}
            for r, e in enumerate(res.leaderboard)]
    write_csv_rows(out / "leaderboard.csv", rows)
    (out / "best.json").write_text(json.dumps({"dataset": bundle.name, "method": method,
                                               "mode": cfg["mode"], "hyperparams": best,
                                               "mean_ari_hidden": res.best.mean_ari}, indent=2))
    print(json.dumps({"best": best, "mean_ari_hidden": res.best.mean_ari}))
    return EXIT_OK


def cmd_estimate(cfg: dict, out: Path, args) -> int:
    cfg = validate_config(cfg)
    bundle, manifest = load_data(cfg)
    s = bundle.split
    rep = cfg.get("representation", "original")
    kinds = cfg.get("kinds", list(tune.ESTIMATION_KINDS))
    k_max = int(cfg.get("k_max", tune.DEFAULT_K_MAX))
    writer = RecordWriter(out / "estimates.jsonl")
    rows = [{"method": "ground_truth", **{f"seed{i}": s.C_u_true for i in range(int(cfg["n_seeds"]))}}]
    per_kind = {kind: {"method": kind} for kind in kinds}
    for i in range(int(cfg["n_seeds"])):
        seed = derive_seed(int(cfg["master_seed"]), i)
        X_l, X_u = s.labeled.X, s.unlabeled.X
        if rep == "latent":
            method = cfg.get("method", "pbn")
            hp = hyperparams_for(cfg, method, manifest)
            model, _ = tune.fit_project(method, X_l, s.labeled.y, X_u,
                                        tune.make_config(method, hp, seed, epochs=cfg.get("epochs")))
            X_l, X_u = pbn.project(model, X_l), pbn.project(model, X_u)
        elif rep != "original":
            raise ConfigError("representation must be 'original' or 'latent'")
        for kind in kinds:
            em = tune.EstimationMethod(kind, 1 if kind == "km_acc" else 2, k_max)
            k = tune.estimate_novel_count(em, X_u, X_l, s.labeled.y, seed=derive_seed(seed, 7))
            per_kind[kind][f"seed{i}"] = k
            writer.write({"dataset": bundle.name, "representation": rep, "kind": kind,
                          "seed_index": i, "seed": seed, "estimate": k, "ground_truth": s.C_u_true})
    rows.extend(per_kind.values())
    write_csv_rows(out / "estimates.csv", rows)
    print(json.dumps(rows))
    return EXIT_OK


def cmd_ablate_centroids(cfg: dict, out: Path, args) -> int:
    cfg = validate_config(cfg)
    bundle, _ = load_data(cfg)
    writer = RecordWriter(out / "ablation.jsonl")
    rows = []
    for mode in cluster.NCD_KMEANS_MODES:
        recs = []
        for i in range(int(cfg["n_seeds"])):
            seed = derive_seed(int(cfg["master_seed"]), i)
            res = run_method(bundle, "ncd_kmeans", {}, seed, k=bundle.split.C_u_true, ncd_mode=mode)
            rec = {"dataset": bundle.name, "update": mode[0], "data": mode[1], "seed_index": i,
                   "seed": seed, **score_run(bundle, res)}
            writer.write(rec)
            recs.append(rec)
        row = {"dataset": bundle.name, "mode": "/".join(mode), "n_runs": len(recs)}
        for k in ("acc", "acc_unlabeled"):
            vals = [r[k] for r in recs if k in r]
            if vals:
                row[k] = fmt_pm(vals)
                row[f"{k}_mean"] = float(np.mean(vals))
        rows.append(row)
    write_csv_rows(out / "ablation.csv", rows)
    print(json.dumps(rows))
    return EXIT_OK


def parse_mode(text: str) -> tuple[str, str]:
    update, _, which = text.partition("/")
    mode = (update, which)
    if mode not in cluster.NCD_KMEANS_MODES:
        raise ValueError(f"unknown centroid mode {text!r}")
    return mode


def cmd_ratio_sweep(cfg: dict, out: Path, args) -> int:
    cfg = validate_config(cfg)
    m = data.read_manifest(cfg["dataset"])
    counts = [int(c) for c in cfg.get("counts", [])]
    methods = cfg.get("methods", ["ncd_kmeans"])
    if not counts:
        raise ConfigError("ratio-sweep needs a non-empty 'counts' list")
    for meth in methods:
        if meth not in METHODS:
            raise ConfigError(f"unknown method {meth!r}")
    n_assign = int(cfg.get("n_assignments", 5))
    full_train, _ = data.load_manifest_data(m)
    classes = np.unique(full_train.y)
    rng = as_rng(derive_seed(int(cfg["master_seed"]), 0xA55))
    writer = RecordWriter(out / "ratio_sweep.jsonl")
    rows = []
    for c in counts:
        if not 1 <= c < len(classes):
            raise ConfigError(f"novel count {c} must lie in [1, {len(classes) - 1}]")
        assignments = [sorted(rng.choice(classes, size=c, replace=False).tolist()) for _ in range(n_assign)]
        scores = {meth: [] for meth in methods}
        for j, novel in enumerate(assignments):
            bundle = data.build_bundle(m, novel=novel)
            seed = derive_seed(int(cfg["master_seed"]), c, j)
            for meth in methods:
                hp = hyperparams_for(cfg, meth, m) if meth in ("pbn", "baseline", "sc") else {}
                res = run_method(bundle, meth, hp, seed, k=c, backend=cfg["backend"],
                                 n_opt=int(cfg["n_opt"]), sc_max_points=cfg.get("sc_max_points"),
                                 epochs=cfg.get("epochs"))
                sc = score_run(bundle, res)
                writer.write({"dataset": m.name, "count": c, "assignment": novel, "method": meth,
                              "seed": seed, **sc})
                scores[meth].append(sc.get("acc", sc["acc_unlabeled"]))
        for meth in methods:
            rows.append({"count": c, "method": meth, "acc_mean": float(np.mean(scores[meth])),
                         "acc_std": float(np.std(scores[meth])), "n_assignments": n_assign})
    write_csv_rows(out / "ratio_sweep.csv", rows)
    print(json.dumps(rows))
    return EXIT_OK


def cmd_report(cfg: dict, out: Path, args) -> int:
    paths = [Path(p) for p in (args.inputs or [])] or [out]
    files = []
    for p in paths:
        files.extend(sorted(p.rglob("records.jsonl")) if p.is_dir() else [p])
    if not files:
        raise FileNotFoundError(f"no records.jsonl under {', '.join(map(str, paths))}")
    records = [r for f in files for r in read_records(f)]
    rows = summarize(records)
    write_csv_rows(out / "report.csv", rows)
    lines = ["| dataset | method | mode | runs | test ACC | D^u ACC |", "|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['dataset']} | {r['method']} | {r['mode']} | {r['n_runs']} | "
                     f"{r.get('acc', '-')} | {r.get('acc_unlabeled', '-')} |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "run": cmd_run,
    "tune": cmd_tune,
    "estimate": cmd_estimate,
    "ablate-centroids": cmd_ablate_centroids,
    "ratio-sweep": cmd_ratio_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tabncd", description="Novel class discovery experiments on tabular data.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="JSON experiment config or .ini manifest")
        p.add_argument("--seed", type=int, help="override the config's master_seed")
        p.add_argument("--threads", type=int, help="BLAS thread cap for this process")
        p.add_argument("--out", default="results", help="output directory")
        if name == "report":
            p.add_argument("inputs", nargs="*", help="records files or directories to aggregate")
    return ap


def _error_record(exc, command) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "command": command}


def _exit_code(exc) -> int:
    if isinstance(exc, (ConfigError, data.SchemaError, KeyError)):
        return EXIT_CONFIG
    if isinstance(exc, (FileNotFoundError, data.DataFormatError, data.BundleError)):
        return EXIT_DATA
    if isinstance(exc, (RuntimeError, ValueError)):
        return EXIT_RUN
    return EXIT_ERROR


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config) if args.config else {}
        if args.seed is not None:
            cfg["master_seed"] = args.seed
        limiter = contextlib.nullcontext()
        if args.threads:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(limits=args.threads)
        out.mkdir(parents=True, exist_ok=True)
        with limiter:
            return COMMANDS[args.command](cfg, out, args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a JSON record
        print(json.dumps(_error_record(exc, args.command)), file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
