"""Tabular datasets, preprocessing and the labeled / unlabeled / hidden splits.

Labels of the unlabeled (novel-class) rows are held in a :class:`SealedLabels`
object. They can only be read inside an :func:`evaluation_access` block, which
metric and reporting code opens explicitly. Training and tuning code never
does, so leaking novel labels into a model raises instead of silently working.
"""
from __future__ import annotations

import configparser
import contextlib
import csv
import hashlib
import json
import threading
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import as_rng

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    pass


class DataFormatError(ValueError):
    pass


class SealedLabelError(RuntimeError):
    pass


class BundleError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# schema and dataset containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[tuple[str, str], ...]
    label_column: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple((str(n), str(k)) for n, k in self.columns))
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        for name, kind in self.columns:
            if kind not in (NUMERIC, CATEGORICAL):
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
        if self.label_column is not None and self.label_column in names:
            raise SchemaError("label column must not be listed as a feature")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]


def _readonly(a):
    if a is None:
        return None
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional contiguous integer labels.

    ``numeric_mask`` marks expanded columns that came from numeric features;
    one-hot columns are excluded from standardization.  ``categories`` keeps
    the category order of each categorical feature so that new files can be
    encoded identically and the data serialized back.
    """

    X: np.ndarray
    y: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    class_names: dict[int, str] = field(default_factory=dict)
    numeric_mask: np.ndarray | None = None
    schema: FeatureSchema | None = None
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d matrix")
        if not np.all(np.isfinite(X)):
            raise DataFormatError("feature matrix contains NaN or Inf")
        object.__setattr__(self, "X", _readonly(X))
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise ValueError("y must have one label per row")
            object.__setattr__(self, "y", _readonly(y))
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match X")
        object.__setattr__(self, "feature_names", names)
        mask = np.ones(X.shape[1], bool) if self.numeric_mask is None else np.asarray(self.numeric_mask, bool)
        object.__setattr__(self, "numeric_mask", _readonly(mask))

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def classes(self) -> np.ndarray:
        if self.y is None:
            raise ValueError("dataset has no labels")
        return np.unique(self.y)

    def take(self, rows, *, keep_labels: bool = True) -> "Dataset":
        rows = np.asarray(rows)
        y = self.y[rows] if (keep_labels and self.y is not None) else None
        return Dataset(self.X[rows], y, self.feature_names, dict(self.class_names),
                       self.numeric_mask, self.schema, dict(self.categories))

    def with_X(self, X, numeric_mask=None, feature_names=None) -> "Dataset":
        return Dataset(X, self.y, self.feature_names if feature_names is None else feature_names,
                       dict(self.class_names),
                       self.numeric_mask if numeric_mask is None else numeric_mask,
                       self.schema if feature_names is None else None, dict(self.categories))

    def without_labels(self) -> "Dataset":
        return Dataset(self.X, None, self.feature_names, dict(self.class_names),
                       self.numeric_mask, self.schema, dict(self.categories))


# --------------------------------------------------------------------------
# sealed labels
# --------------------------------------------------------------------------

_gate = threading.local()


@contextlib.contextmanager
def evaluation_access():
    """Allow :meth:`SealedLabels.unseal` inside this block (evaluation code only)."""
    _gate.depth = getattr(_gate, "depth", 0) + 1
    try:
        yield
    finally:
        _gate.depth -= 1


class SealedLabels:
    """Ground truth of unlabeled rows, readable only under :func:`evaluation_access`."""

    __slots__ = ("_y",)

    def __init__(self, y):
        self._y = _readonly(np.asarray(y, dtype=np.int64))

    def __len__(self):
        return len(self._y)

    def __repr__(self):
        return f"SealedLabels(n={len(self._y)})"

    def unseal(self) -> np.ndarray:
        if getattr(_gate, "depth", 0) <= 0:
            raise SealedLabelError("novel-class labels are sealed; open them with evaluation_access()")
        return self._y

    def _concat(self, other) -> "SealedLabels":
        return SealedLabels(np.concatenate([self._y, np.asarray(other, dtype=np.int64)]))

    def _take(self, rows) -> "SealedLabels":
        return SealedLabels(self._y[np.asarray(rows)])


@dataclass(frozen=True)
class NCDSplit:
    """Labeled known-class rows, unlabeled novel-class rows, optional hidden rows.

    In a tuning fold, the hidden rows are also the trailing ``len(hidden)``
    rows of ``unlabeled``; their labels stay readable through ``hidden.y``.
    """

    labeled: Dataset
    unlabeled: Dataset
    sealed: SealedLabels
    hidden: Dataset | None = None
    C_l: int = 0
    C_u_true: int | None = None

    def __post_init__(self):
        if self.labeled.y is None:
            raise ValueError("labeled set needs labels")
        if self.unlabeled.y is not None:
            raise ValueError("unlabeled set must not expose labels")
        if len(self.sealed) != len(self.unlabeled):
            raise ValueError("sealed labels do not match unlabeled rows")
        if self.C_l != len(np.unique(self.labeled.y)):
            raise ValueError("C_l must equal the number of labeled classes")

    @property
    def n_hidden_rows(self) -> int:
        return 0 if self.hidden is None else len(self.hidden)

    @property
    def hidden_mask(self) -> np.ndarray:
        m = np.zeros(len(self.unlabeled), bool)
        if self.n_hidden_rows:
            m[-self.n_hidden_rows:] = True
        return m

    @property
    def known_classes(self) -> np.ndarray:
        return np.unique(self.labeled.y)


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def _label_order(values: Iterable[str]) -> list[str]:
    vals = sorted(set(values))
    try:
        return sorted(vals, key=float)
    except ValueError:
        return vals


def infer_schema(path, label_column: str | None) -> FeatureSchema:
    """Schema from a CSV header: a column is numeric if every cell parses as float."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = []
    for j, name in enumerate(header):
        if name == label_column:
            continue
        try:
            for r in rows:
                float(r[j])
            kind = NUMERIC
        except ValueError:
            kind = CATEGORICAL
        cols.append((name, kind))
    return FeatureSchema(tuple(cols), label_column)


def load_csv(path, schema: FeatureSchema, *, categories: dict | None = None,
             class_names: dict[int, str] | None = None) -> Dataset:
    """Read a headered CSV into a :class:`Dataset`.

    Categorical columns are one-hot expanded in sorted category order; pass
    ``categories`` (from a training file) to encode a test file identically,
    in which case unseen categories raise.  Labels map to contiguous integers
    in sorted order (numeric order when every label is a number) unless a
    ``class_names`` map is supplied.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    index = {n: j for j, n in enumerate(header)}
    wanted = schema.names + ([schema.label_column] if schema.label_column else [])
    missing = [n for n in wanted if n not in index]
    if missing:
        raise SchemaError(f"{path}: missing columns {missing}")

    cats = {} if categories is None else {k: tuple(v) for k, v in categories.items()}
    for name, kind in schema.columns:
        if kind == CATEGORICAL and name not in cats:
            cats[name] = tuple(sorted({r[index[name]] for r in rows}))

    blocks, names, numeric = [], [], []
    for name, kind in schema.columns:
        j = index[name]
        if kind == NUMERIC:
            col = np.empty(len(rows))
            for i, r in enumerate(rows):
                try:
                    col[i] = float(r[j])
                except (ValueError, IndexError):
                    raise DataFormatError(f"{path}: row {i + 1}, column {name!r}: cannot parse {r[j]!r}") from None
            if not np.all(np.isfinite(col)):
                bad = int(np.flatnonzero(~np.isfinite(col))[0])
                raise DataFormatError(f"{path}: row {bad + 1}, column {name!r}: non-finite value")
            blocks.append(col[:, None])
            names.append(name)
            numeric.append(True)
        else:
            levels = cats[name]
            pos = {c: t for t, c in enumerate(levels)}
            onehot = np.zeros((len(rows), len(levels)))
            for i, r in enumerate(rows):
                try:
                    onehot[i, pos[r[j]]] = 1.0
                except KeyError:
                    raise DataFormatError(f"{path}: row {i + 1}, column {name!r}: unseen category {r[j]!r}") from None
            blocks.append(onehot)
            names.extend(f"{name}={c}" for c in levels)
            numeric.extend([False] * len(levels))

    X = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    y = None
    names_map: dict[int, str] = {}
    if schema.label_column:
        raw = [r[index[schema.label_column]] for r in rows]
        if class_names is None:
            order = _label_order(raw)
            names_map = dict(enumerate(order))
        else:
            names_map = dict(class_names)
        inv = {v: k for k, v in names_map.items()}
        try:
            y = np.array([inv[v] for v in raw], dtype=np.int64)
        except KeyError as e:
            raise DataFormatError(f"{path}: unknown label {e.args[0]!r}") from None
    return Dataset(X, y, tuple(names), names_map, np.array(numeric, bool), schema, cats)


def write_csv(ds: Dataset, path) -> None:
    """Serialize back to the original column layout (inverse of :func:`load_csv`)."""
    if ds.schema is None:
        schema = FeatureSchema(tuple((n, NUMERIC) for n in ds.feature_names),
                               "label" if ds.y is not None else None)
    else:
        schema = ds.schema
    col = 0
    columns: list[list[str]] = []
    for name, kind in schema.columns:
        if kind == NUMERIC:
            columns.append([repr(float(v)) for v in ds.X[:, col]])
            col += 1
        else:
            levels = ds.categories[name]
            block = ds.X[:, col:col + len(levels)]
            columns.append([levels[int(t)] for t in block.argmax(axis=1)])
            col += len(levels)
    header = schema.names
    if ds.y is not None and schema.label_column:
        header = header + [schema.label_column]
        columns.append([ds.class_names.get(int(v), str(int(v))) for v in ds.y])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        if columns:
            w.writerows(zip(*columns))


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    numeric_mask: np.ndarray
    zero_variance: tuple[str, ...] = ()


def standardize(ds: Dataset, stats: StandardizationStats | None = None):
    """Zero mean / unit population variance on numeric columns.

    Returns ``(dataset, stats)``; pass the stats back in to transform test
    data with the training moments.  Zero-variance columns are centered only
    and listed in ``stats.zero_variance``.
    """
    X = np.array(ds.X)
    mask = np.asarray(ds.numeric_mask, bool)
    if stats is None:
        mean = np.zeros(X.shape[1])
        std = np.ones(X.shape[1])
        mean[mask] = X[:, mask].mean(axis=0) if len(X) else 0.0
        sd = X[:, mask].std(axis=0) if len(X) else np.ones(mask.sum())
        flat = sd <= 1e-12 * np.maximum(1.0, np.abs(mean[mask]))
        sd = np.where(flat, 1.0, sd)
        std[mask] = sd
        zero = tuple(np.asarray(ds.feature_names)[mask][flat])
        if zero:
            warnings.warn(f"zero-variance columns left centered: {list(zero)}", stacklevel=2)
        stats = StandardizationStats(_readonly(mean), _readonly(std), _readonly(mask), zero)
    else:
        if stats.mean.shape != (X.shape[1],):
            raise ValueError("standardization stats do not match the number of columns")
        mask = stats.numeric_mask
    X[:, mask] = (X[:, mask] - stats.mean[mask]) / stats.std[mask]
    return ds.with_X(X), stats


def drop_constant_columns(train: Dataset, *others: Dataset):
    """Remove columns constant on ``train`` from ``train`` and every other set."""
    keep = train.X.std(axis=0) > 0
    names = tuple(np.asarray(train.feature_names)[keep])
    out = [d.with_X(d.X[:, keep], d.numeric_mask[keep], names) for d in (train,) + others]
    return out if others else out[0]


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------


def split_known_novel(ds: Dataset, novel_classes: Iterable[int]) -> NCDSplit:
    if ds.y is None:
        raise ValueError("dataset has no labels to split on")
    novel = {int(c) for c in novel_classes}
    present = set(np.unique(ds.y).tolist())
    if not novel:
        raise ValueError("novel class set is empty")
    if not novel <= present:
        raise ValueError(f"novel classes {sorted(novel - present)} not in dataset")
    if novel == present:
        raise ValueError("novel classes cover every class; nothing left to learn from")
    is_novel = np.isin(ds.y, sorted(novel))
    labeled = ds.take(np.flatnonzero(~is_novel))
    rows_u = np.flatnonzero(is_novel)
    unlabeled = ds.take(rows_u, keep_labels=False)
    return NCDSplit(labeled, unlabeled, SealedLabels(ds.y[rows_u]), None,
                    len(present - novel), len(novel))


def hide_classes(split: NCDSplit, hidden: Iterable[int]) -> NCDSplit:
    """One tuning fold: move the ``hidden`` known classes into the unlabeled set."""
    hidden = sorted({int(c) for c in hidden})
    known = set(split.known_classes.tolist())
    if not set(hidden) <= known:
        raise ValueError(f"hidden classes {sorted(set(hidden) - known)} are not known classes")
    if len(hidden) == len(known):
        raise ValueError("cannot hide every known class")
    if not hidden:
        empty = split.labeled.take(np.arange(0))
        return NCDSplit(split.labeled, split.unlabeled, split.sealed, empty, split.C_l, split.C_u_true)
    is_hid = np.isin(split.labeled.y, hidden)
    hid = split.labeled.take(np.flatnonzero(is_hid))
    lab = split.labeled.take(np.flatnonzero(~is_hid))
    unl = split.unlabeled.with_X(np.vstack([split.unlabeled.X, hid.X]))
    c_u = None if split.C_u_true is None else split.C_u_true + len(hidden)
    return NCDSplit(lab, unl, split.sealed._concat(hid.y), hid, split.C_l - len(hidden), c_u)


def train_test_split(ds: Dataset, test_fraction: float, seed=None):
    """Stratified split; each class contributes ``round(fraction * n_c)`` test rows."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    if ds.y is None:
        raise ValueError("stratified split needs labels")
    rng = as_rng(seed)
    test = []
    for c in np.unique(ds.y):
        rows = np.flatnonzero(ds.y == c)
        if len(rows) == 1:
            warnings.warn(f"class {int(c)} has a single instance; kept in train", stacklevel=2)
            continue
        n_test = min(len(rows) - 1, max(1, int(round(test_fraction * len(rows)))))
        test.extend(rng.permutation(rows)[:n_test].tolist())
    is_test = np.zeros(len(ds), bool)
    is_test[test] = True
    return ds.take(np.flatnonzero(~is_test)), ds.take(np.flatnonzero(is_test))


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------

MANIFEST_DIR = Path(__file__).with_name("manifests")


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass(frozen=True)
class Manifest:
    """Key-value dataset description (one ``[dataset]`` section plus method tables).

    Recognized ``[dataset]`` keys: ``name``, ``source`` (``keel:<name>`` or
    ``csv:<path>``), ``source_url``, ``label_column``, ``categorical``,
    ``novel_classes``, ``hidden_per_fold``, ``n_folds``, ``test_split``
    (``rows:<n>`` when the first n rows are the provided training file,
    otherwise ``fraction:<f>``), ``split_seed``, ``drop_constant``, ``test_source``.
    Other sections (``[pbn]``, ``[baseline]``, ``[ncd_sc]``) hold per-method
    hyperparameters.
    """

    name: str
    source: str
    label_column: str
    novel_classes: tuple[str, ...]
    hidden_per_fold: int
    n_folds: int
    test_split: str = "fraction:0.3"
    split_seed: int = 0
    drop_constant: bool = False
    categorical: tuple[str, ...] = ()
    source_url: str = ""
    test_source: str = ""
    path: Path | None = None
    params: dict[str, dict[str, str]] = field(default_factory=dict)

    def method_params(self, section: str) -> dict:
        out = {}
        for k, v in self.params.get(section, {}).items():
            try:
                out[k] = int(v)
            except ValueError:
                out[k] = float(v)
        return out


def read_manifest(path) -> Manifest:
    p = Path(path)
    if not p.exists() and len(p.parts) == 1:
        # bare names resolve against the shipped manifests
        p = MANIFEST_DIR / (p.name if p.suffix else f"{p.name}.ini")
    if not p.exists():
        raise FileNotFoundError(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read(p)
    if "dataset" not in cp:
        raise SchemaError(f"{p}: manifest needs a [dataset] section")
    d = cp["dataset"]
    try:
        m = Manifest(
            name=d.get("name", p.stem),
            source=d["source"],
            label_column=d.get("label_column", "class"),
            novel_classes=tuple(_split_list(d["novel_classes"])),
            hidden_per_fold=d.getint("hidden_per_fold"),
            n_folds=d.getint("n_folds"),
            test_split=d.get("test_split", "fraction:0.3"),
            split_seed=d.getint("split_seed", 0),
            drop_constant=d.getboolean("drop_constant", False),
            categorical=tuple(_split_list(d.get("categorical", ""))),
            source_url=d.get("source_url", ""),
            test_source=d.get("test_source", ""),
            path=p,
            params={s: dict(cp[s]) for s in cp.sections() if s != "dataset"},
        )
    except KeyError as e:
        raise SchemaError(f"{p}: missing manifest key {e.args[0]!r}") from None
    if len(set(m.novel_classes)) != len(m.novel_classes):
        raise SchemaError(f"{p}: novel_classes lists a class twice")
    known = _split_list(d.get("known_classes", ""))
    if set(known) & set(m.novel_classes):
        raise SchemaError(f"{p}: known and novel class lists overlap")
    return m


def _keel_csv_text(name: str) -> str:
    try:
        from importlib import resources
        ref = resources.files("keel_ds") / "data" / "balanced" / "raw" / f"{name}.dat"
        return ref.read_text()
    except (ModuleNotFoundError, FileNotFoundError) as e:
        raise FileNotFoundError(f"keel dataset {name!r} unavailable (pip install keel-ds)") from e


def _load_keel(name: str, label_column: str) -> Dataset:
    rows = [ln for ln in _keel_csv_text(name).splitlines() if ln.strip() and not ln.startswith("@")]
    data = [[v.strip() for v in ln.split(",")] for ln in rows]
    d = len(data[0]) - 1
    X = np.array([[float(v) for v in r[:d]] for r in data])
    raw = [r[d] for r in data]
    order = _label_order(raw)
    inv = {v: k for k, v in enumerate(order)}
    y = np.array([inv[v] for v in raw])
    names = tuple(f"f{j}" for j in range(d))
    schema = FeatureSchema(tuple((n, NUMERIC) for n in names), label_column)
    return Dataset(X, y, names, dict(enumerate(order)), None, schema, {})


def _resolve(base: Path | None, rel: str) -> Path:
    p = Path(rel)
    if not p.is_absolute() and base is not None and not p.exists():
        p = base.parent / p
    return p


def load_manifest_data(m: Manifest) -> tuple[Dataset, Dataset]:
    """Raw (unstandardized) train and test datasets described by a manifest."""
    kind, _, ref = m.source.partition(":")
    if kind == "keel":
        full = _load_keel(ref, m.label_column)
    elif kind == "csv":
        p = _resolve(m.path, ref)
        schema = infer_schema(p, m.label_column)
        if m.categorical:
            schema = FeatureSchema(tuple((n, CATEGORICAL if n in m.categorical else k)
                                         for n, k in schema.columns), m.label_column)
        full = load_csv(p, schema)
        if m.test_source:
            test = load_csv(_resolve(m.path, m.test_source), schema,
                            categories=full.categories, class_names=full.class_names)
            return full, test
    else:
        raise SchemaError(f"unknown source kind {kind!r}")
    how, _, val = m.test_split.partition(":")
    if how == "rows":
        n = int(val)
        return full.take(np.arange(n)), full.take(np.arange(n, len(full)))
    if how == "fraction":
        return train_test_split(full, float(val), seed=m.split_seed)
    raise SchemaError(f"unknown test_split {m.test_split!r}")


# --------------------------------------------------------------------------
# prepared bundles
# --------------------------------------------------------------------------

BUNDLE_VERSION = 1


@dataclass(frozen=True)
class Bundle:
    """Preprocessed experiment data: the NCD split plus novel-class test rows."""

    name: str
    split: NCDSplit
    test: Dataset
    test_sealed: SealedLabels
    class_names: dict[int, str]
    zero_variance: tuple[str, ...] = ()

    @property
    def novel_classes(self) -> list[int]:
        with evaluation_access():
            return sorted(set(self.split.sealed.unseal().tolist()))


def novel_label_ids(ds: Dataset, names: Sequence[str]) -> list[int]:
    inv = {v: k for k, v in ds.class_names.items()}
    try:
        return [inv[str(n)] for n in names]
    except KeyError as e:
        raise SchemaError(f"class {e.args[0]!r} not present in the dataset") from None


def build_bundle(m: Manifest, novel: Sequence[int] | None = None) -> Bundle:
    """Load, split, and standardize with training moments.

    ``novel`` overrides the manifest's novel class list (integer label ids).
    """
    train, test = load_manifest_data(m)
    if m.drop_constant:
        train, test = drop_constant_columns(train, test)
    novel_ids = novel_label_ids(train, m.novel_classes) if novel is None else [int(c) for c in novel]
    train_s, stats = standardize(train)
    test_s, _ = standardize(test, stats)
    split = split_known_novel(train_s, novel_ids)
    rows = np.flatnonzero(np.isin(test_s.y, novel_ids))
    test_novel = test_s.take(rows, keep_labels=False)
    return Bundle(m.name, split, test_novel, SealedLabels(test_s.y[rows]),
                  dict(train.class_names), stats.zero_variance)


def _sha(a: np.ndarray) -> str:
    a = np.ascontiguousarray(a)
    return hashlib.sha256(a.dtype.str.encode() + str(a.shape).encode() + a.tobytes()).hexdigest()


def write_bundle(bundle: Bundle, out_dir) -> dict:
    """Write arrays as ``.npy`` plus ``bundle.json`` with per-array checksums."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = bundle.split
    with evaluation_access():
        arrays = {
            "X_labeled": s.labeled.X, "y_labeled": s.labeled.y,
            "X_unlabeled": s.unlabeled.X, "y_unlabeled_sealed": s.sealed.unseal(),
            "X_test": bundle.test.X, "y_test_sealed": bundle.test_sealed.unseal(),
        }
    sums = {}
    for k, a in arrays.items():
        np.save(out / f"{k}.npy", np.ascontiguousarray(a), allow_pickle=False)
        sums[k] = _sha(a)
    meta = {
        "version": BUNDLE_VERSION, "name": bundle.name,
        "feature_names": list(s.labeled.feature_names),
        "class_names": {str(k): v for k, v in bundle.class_names.items()},
        "zero_variance": list(bundle.zero_variance),
        "C_l": s.C_l, "C_u_true": s.C_u_true,
        "rows": {"labeled": len(s.labeled), "unlabeled": len(s.unlabeled), "test": len(bundle.test)},
        "checksums": sums,
    }
    (out / "bundle.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return meta


def read_bundle(path) -> Bundle:
    p = Path(path)
    meta = json.loads((p / "bundle.json").read_text())
    if meta.get("version") != BUNDLE_VERSION:
        raise BundleError(f"{p}: unsupported bundle version {meta.get('version')}")
    arrays = {}
    for k, expected in meta["checksums"].items():
        a = np.load(p / f"{k}.npy", allow_pickle=False)
        if _sha(a) != expected:
            raise BundleError(f"{p}: checksum mismatch for {k}")
        arrays[k] = a
    names = tuple(meta["feature_names"])
    cls = {int(k): v for k, v in meta["class_names"].items()}
    lab = Dataset(arrays["X_labeled"], arrays["y_labeled"], names, cls)
    unl = Dataset(arrays["X_unlabeled"], None, names, cls)
    split = NCDSplit(lab, unl, SealedLabels(arrays["y_unlabeled_sealed"]), None,
                     meta["C_l"], meta["C_u_true"])
    test = Dataset(arrays["X_test"], None, names, cls)
    return Bundle(meta["name"], split, test, SealedLabels(arrays["y_test_sealed"]), cls,
                  tuple(meta["zero_variance"]))
