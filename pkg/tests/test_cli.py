import csv
import json

import numpy as np
import pytest

from tabncd import cli, data

TOY_MANIFEST = """[dataset]
name = toy
source = csv:toy.csv
label_column = label
novel_classes = c4, c5
hidden_per_fold = 2
n_folds = 2
test_split = fraction:0.25

[pbn]
latent_dim = 5
lr = 0.01
dropout = 0.0
w = 0.8

[baseline]
latent_dim = 5
lr = 0.01
dropout = 0.0
"""


def _toy_csv(path, n_classes=6, n_per=40, d=6, seed=0, spread=1.0, sep=10.0):
    r = np.random.default_rng(seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(d)] + ["label"])
        for c in range(n_classes):
            center = sep * np.eye(max(d, n_classes))[c][:d]
            for _ in range(n_per):
                w.writerow([f"{v:.6f}" for v in center + spread * r.standard_normal(d)] + [f"c{c}"])


@pytest.fixture
def toy(tmp_path):
    _toy_csv(tmp_path / "toy.csv")
    (tmp_path / "toy.ini").write_text(TOY_MANIFEST)
    return tmp_path


def _run(tmp_path, command, cfg, *extra, tag=""):
    cfg_path = tmp_path / f"{command}{tag}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / f"out_{command}{tag}"
    return cli.main([command, "--config", str(cfg_path), "--out", str(out), *extra]), out


def test_prepare_checksums_are_stable(toy, capsys):
    ini = str(toy / "toy.ini")
    assert cli.main(["prepare", "--config", ini, "--out", str(toy / "a")]) == 0
    first = json.loads(capsys.readouterr().out)
    assert cli.main(["prepare", "--config", ini, "--out", str(toy / "b")]) == 0
    second = json.loads(capsys.readouterr().out)
    assert first["checksums"] == second["checksums"]
    assert first["rows"] == {"labeled": 120, "unlabeled": 60, "test": 20}
    assert data.read_bundle(toy / "a" / "toy").split.C_l == 4


def test_overlap_manifest_exit_code(toy, capsys):
    (toy / "bad.ini").write_text(TOY_MANIFEST.replace("novel_classes = c4, c5",
                                                      "novel_classes = c4, c5\nknown_classes = c0, c4"))
    code = cli.main(["prepare", "--config", str(toy / "bad.ini"), "--out", str(toy / "o")])
    assert code == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "SchemaError" and err["command"] == "prepare" and "overlap" in err["message"]


def test_error_records(toy, capsys):
    code, _ = _run(toy, "run", {"dataset": str(toy / "toy.ini"), "method": "magic"})
    assert code == cli.EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["error"] == "ConfigError"
    code, _ = _run(toy, "run", {"dataset": str(toy / "missing.ini"), "method": "kmeans"})
    assert code == cli.EXIT_DATA
    capsys.readouterr()
    code, _ = _run(toy, "run", {"dataset": str(toy / "toy.ini"), "method": "kmeans", "mode": "estimated_k"})
    assert code == cli.EXIT_CONFIG
    capsys.readouterr()
    code, _ = _run(toy, "run", {"dataset": str(toy / "toy.ini"), "method": "pbn",
                                "hyperparams": {}, "space": "default"})
    assert code == cli.EXIT_CONFIG
    (toy / "broken.json").write_text("{not json")
    assert cli.main(["run", "--config", str(toy / "broken.json"), "--out", str(toy / "x")]) == cli.EXIT_CONFIG


def test_run_single_seed_has_zero_std(toy, capsys):
    code, out = _run(toy, "run", {"dataset": str(toy / "toy.ini"), "method": "ncd_kmeans", "n_seeds": 1})
    assert code == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 1 and rows[0]["acc"].endswith("±0.0")
    rec = cli.read_records(out / "records.jsonl")[0]
    assert {"config_hash", "seed", "acc", "nmi", "ari", "acc_unlabeled", "wall_time", "version"} <= set(rec)
    assert rec["k_used"] == 2


@pytest.mark.parametrize("method", ["kmeans", "sc", "ncd_sc", "pbn", "baseline"])
def test_run_every_method(toy, method):
    cfg = {"dataset": str(toy / "toy.ini"), "method": method, "n_seeds": 2, "n_opt": 3, "epochs": 20}
    code, out = _run(toy, "run", cfg)
    assert code == 0
    recs = cli.read_records(out / "records.jsonl")
    assert len(recs) == 2 and all(0 <= r["acc"] <= 1 for r in recs)


def test_summary_matches_records_and_reruns(toy):
    cfg = {"dataset": str(toy / "toy.ini"), "method": "pbn", "n_seeds": 3, "epochs": 15,
           "mode": "estimated_k", "estimation": {"kind": "silhouette", "k_max": 6}}
    code, out = _run(toy, "run", cfg)
    assert code == 0
    recs = cli.read_records(out / "records.jsonl")
    row = list(csv.DictReader(open(out / "summary.csv")))[0]
    accs = [r["acc"] for r in recs]
    assert float(row["acc_mean"]) == pytest.approx(np.mean(accs), abs=1e-12)
    assert float(row["acc_std"]) == pytest.approx(np.std(accs), abs=1e-12)
    assert all(r["estimated_k"] == r["k_used"] for r in recs)

    (toy / "again").mkdir()
    again = cli.main(["run", "--config", str(toy / "run.json"), "--out", str(toy / "again")])
    assert again == 0
    recs2 = cli.read_records(toy / "again" / "records.jsonl")
    for a, b in zip(recs, recs2):
        assert (a["config_hash"], a["seed"]) == (b["config_hash"], b["seed"])
        assert [a[k] for k in cli.SCORE_KEYS] == [b[k] for k in cli.SCORE_KEYS]


def test_seed_flag_changes_seeds(toy):
    cfg = {"dataset": str(toy / "toy.ini"), "method": "kmeans", "n_seeds": 1}
    _, out = _run(toy, "run", cfg)
    s0 = cli.read_records(out / "records.jsonl")[0]["seed"]
    code, out2 = _run(toy, "run", cfg, "--seed", "5", "--threads", "1")
    assert code == 0
    assert cli.read_records(out2 / "records.jsonl")[0]["seed"] != s0


def test_tune_budget_and_rerun(toy):
    cfg = {"dataset": str(toy / "toy.ini"), "method": "pbn", "n_combos": 1, "epochs": 10}
    code, out = _run(toy, "tune", cfg)
    assert code == 0
    assert len(list(csv.DictReader(open(out / "leaderboard.csv")))) == 1
    cfg["n_combos"] = 3
    _, a = _run(toy, "tune", cfg)
    board_a = open(a / "leaderboard.csv").read()
    (toy / "tune2").mkdir()
    cli.main(["tune", "--config", str(toy / "tune.json"), "--out", str(toy / "tune2")])
    assert open(toy / "tune2" / "leaderboard.csv").read() == board_a
    best = json.loads((a / "best.json").read_text())
    assert set(best["hyperparams"]) == {"latent_dim", "lr", "dropout", "w"}


def test_tuned_run_reaches_high_accuracy(toy):
    cfg = {"dataset": str(toy / "toy.ini"), "method": "pbn", "space": "default", "n_combos": 3,
           "epochs": 40, "n_seeds": 1}
    code, out = _run(toy, "run", cfg)
    assert code == 0
    assert cli.read_records(out / "records.jsonl")[0]["acc_unlabeled"] >= 0.9
    assert (out / "tuning.jsonl").exists()


def test_estimate_grid(toy):
    cfg = {"dataset": str(toy / "toy.ini"), "n_seeds": 1, "k_max": 8}
    code, out = _run(toy, "estimate", cfg)
    assert code == 0
    rows = {r["method"]: r for r in csv.DictReader(open(out / "estimates.csv"))}
    assert set(rows) == {"ground_truth", *cli.tune.ESTIMATION_KINDS}
    assert rows["ground_truth"]["seed0"] == "2"
    assert rows["silhouette"]["seed0"] == "2"
    assert "elbow" in rows
    code, out = _run(toy, "estimate", dict(cfg, representation="latent", epochs=10))
    assert code == 0


def test_elbow_reported_as_none(toy, monkeypatch):
    monkeypatch.setattr(cli.metrics, "kneedle_elbow", lambda xs, ys: None)
    code, out = _run(toy, "estimate", {"dataset": str(toy / "toy.ini"), "n_seeds": 1, "k_max": 8,
                                       "kinds": ["elbow"]})
    assert code == 0
    assert cli.read_records(out / "estimates.jsonl")[0]["estimate"] is None


def test_ablation_modes(toy):
    code, out = _run(toy, "ablate-centroids", {"dataset": str(toy / "toy.ini"), "n_seeds": 2})
    assert code == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [cli.parse_mode(r["mode"]) for r in rows] == list(cli.cluster.NCD_KMEANS_MODES)
    assert all(0 <= float(r["acc_mean"]) <= 1 for r in rows)
    with pytest.raises(ValueError):
        cli.parse_mode("known/unlabeled")


def test_ratio_sweep_rows(tmp_path):
    _toy_csv(tmp_path / "toy.csv", n_classes=8, sep=2.5, n_per=30, d=8)
    (tmp_path / "toy.ini").write_text(TOY_MANIFEST)
    cfg = {"dataset": str(tmp_path / "toy.ini"), "counts": [2], "methods": ["ncd_kmeans", "kmeans"],
           "n_assignments": 2}
    code, out = _run(tmp_path, "ratio-sweep", cfg)
    assert code == 0
    assert len(list(csv.DictReader(open(out / "ratio_sweep.csv")))) == 2
    cfg.update(counts=[2, 4, 6], methods=["ncd_kmeans"], n_assignments=5)
    code, out = _run(tmp_path, "ratio-sweep", cfg)
    rows = list(csv.DictReader(open(out / "ratio_sweep.csv")))
    assert len(rows) == 3
    accs = [float(r["acc_mean"]) for r in rows]
    # more novel classes, less supervision: the curve falls from end to end
    assert accs[0] > accs[-1]
    assert code == 0


def test_report_aggregates(toy, capsys):
    _, out = _run(toy, "run", {"dataset": str(toy / "toy.ini"), "method": "kmeans", "n_seeds": 2})
    rep = toy / "rep"
    assert cli.main(["report", "--out", str(rep), str(out)]) == 0
    md = (rep / "report.md").read_text()
    assert "| toy | kmeans | known_k | 2 |" in md
    assert cli.main(["report", "--out", str(toy / "empty"), str(toy / "nothing")]) == cli.EXIT_DATA


def _poison_bundle(src, dst):
    import shutil
    shutil.copytree(src, dst)
    meta = json.loads((dst / "bundle.json").read_text())
    y = np.load(dst / "y_unlabeled_sealed.npy")
    noise = np.random.default_rng(0).permutation(y)[::-1].copy()
    np.save(dst / "y_unlabeled_sealed.npy", noise)
    meta["checksums"]["y_unlabeled_sealed"] = data._sha(noise)
    (dst / "bundle.json").write_text(json.dumps(meta))


def test_label_poisoning_leaves_decisions_unchanged(toy, capsys):
    assert cli.main(["prepare", "--config", str(toy / "toy.ini"), "--out", str(toy / "b")]) == 0
    _poison_bundle(toy / "b" / "toy", toy / "poisoned")
    outputs = []
    for tag, bundle in (("clean", toy / "b" / "toy"), ("poisoned", toy / "poisoned")):
        base = {"bundle": str(bundle), "method": "pbn", "epochs": 10, "hidden_per_fold": 2, "n_folds": 2}
        code, tout = _run(toy, "tune", dict(base, n_combos=2, mode="estimated_k",
                                            estimation={"kind": "silhouette", "k_max": 6}), tag=tag)
        assert code == 0
        board = open(tout / "leaderboard.csv").read()
        code, rout = _run(toy, "run", dict(base, n_seeds=2, mode="estimated_k",
                                           hyperparams={"latent_dim": 5, "lr": 0.01, "dropout": 0.0, "w": 0.8},
                                           estimation={"kind": "silhouette", "k_max": 6}), tag=tag)
        assert code == 0
        recs = cli.read_records(rout / "records.jsonl")
        outputs.append((board, [(r["estimated_k"], r["train_loss"]) for r in recs]))
    assert outputs[0] == outputs[1]


@pytest.mark.dataset
def test_prepare_pendigits(tmp_path, capsys):
    pytest.importorskip("keel_ds")
    assert cli.main(["prepare", "--config", "pendigits", "--out", str(tmp_path)]) == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["features"] == 16
    assert info["rows"] == {"labeled": 3777, "unlabeled": 3717, "test": 1734}
