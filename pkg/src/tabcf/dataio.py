"""Dataset loading, schemas, preprocessing, synthetic generators, and the
per-class k-means index used to guide pre-training.

Raw data lives in a ``Table`` (typed columns, string categories, integer
labels). A fitted ``Preprocessor`` turns tables into encoded float64 matrices:
numeric columns are z-scored (population std), categorical columns expand to
one-hot blocks in place, and the block layout is published as a group index.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed input data or schema violations."""


# ---------------------------------------------------------------------------
# schema and raw tables

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # "numeric" | "categorical"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.categories) < 2:
            raise DataError(f"column {self.name!r}: needs >= 2 categories, "
                            f"got {len(self.categories)}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSpec, ...]
    target: str
    classes: tuple[str, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names in schema")
        if self.target in names:
            raise DataError(f"target {self.target!r} also listed as a feature")
        if len(self.classes) < 2:
            raise DataError(f"need >= 2 classes, got {len(self.classes)}")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("duplicate class labels")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "kind": c.kind,
                         "categories": list(c.categories)} for c in self.columns],
            "target": self.target,
            "classes": list(self.classes),
        }

    @staticmethod
    def from_dict(d: dict) -> "Schema":
        cols = tuple(ColumnSpec(c["name"], c["kind"], tuple(c.get("categories", ())))
                     for c in d["columns"])
        return Schema(cols, d["target"], tuple(d["classes"]))


class Table:
    """Raw typed table: columnar feature values plus integer class labels."""

    def __init__(self, schema: Schema, columns: dict[str, list], labels: np.ndarray):
        self.schema = schema
        self.columns = columns
        self.labels = np.asarray(labels, dtype=np.int64)
        n = len(self.labels)
        for name in schema.feature_names:
            if len(columns[name]) != n:
                raise DataError(f"column {name!r} has {len(columns[name])} values, "
                                f"expected {n}")
        if n and (self.labels.min() < 0 or self.labels.max() >= schema.n_classes):
            raise DataError("labels outside [0, n_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    def select(self, idx: np.ndarray) -> "Table":
        idx = np.asarray(idx, dtype=np.int64)
        cols = {name: [vals[i] for i in idx] for name, vals in self.columns.items()}
        return Table(self.schema, cols, self.labels[idx])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.schema.n_classes)

    def rows(self) -> list[dict]:
        names = self.schema.feature_names
        return [{name: self.columns[name][i] for name in names}
                for i in range(len(self))]


# ---------------------------------------------------------------------------
# CSV I/O

def _is_numeric(values: Iterable[str]) -> bool:
    try:
        for v in values:
            float(v)
    except ValueError:
        return False
    return True


def load_csv(path: str | Path, target: str,
             kind_hints: dict[str, str] | None = None) -> Table:
    """Parse a headered CSV into a raw Table.

    Column kinds are inferred (all values parse as float -> numeric, else
    categorical) unless overridden in ``kind_hints``. Ragged rows, blank
    cells, and unknown targets are rejected with the offending location.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        raw_rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {line_no} has {len(row)} fields, "
                                f"expected {len(header)}")
            for col_name, cell in zip(header, row):
                if cell == "":
                    raise DataError(f"{path}: row {line_no} has a missing value "
                                    f"in column {col_name!r}")
            raw_rows.append(row)
    if target not in header:
        raise DataError(f"{path}: target column {target!r} not in header {header}")
    if not raw_rows:
        raise DataError(f"{path}: no data rows")

    kind_hints = kind_hints or {}
    by_name = {name: [row[j] for row in raw_rows] for j, name in enumerate(header)}

    label_strings = by_name[target]
    classes = sorted(set(label_strings), key=_label_sort_key)
    class_to_idx = {c: i for i, c in enumerate(classes)}
    labels = np.array([class_to_idx[v] for v in label_strings], dtype=np.int64)

    columns: dict[str, list] = {}
    specs = []
    for name in header:
        if name == target:
            continue
        values = by_name[name]
        kind = kind_hints.get(name) or ("numeric" if _is_numeric(values)
                                        else "categorical")
        if kind == "numeric":
            try:
                columns[name] = [float(v) for v in values]
            except ValueError as exc:
                raise DataError(f"{path}: column {name!r}: {exc}") from None
            specs.append(ColumnSpec(name, "numeric"))
        else:
            cats = tuple(sorted(set(values)))
            columns[name] = list(values)
            specs.append(ColumnSpec(name, "categorical", cats))
    schema = Schema(tuple(specs), target, tuple(classes))
    return Table(schema, columns, labels)


def _label_sort_key(v: str):
    try:
        return (0, float(v), "")
    except ValueError:
        return (1, 0.0, v)


def save_csv(table: Table, path: str | Path) -> None:
    path = Path(path)
    names = table.schema.feature_names
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + [table.schema.target])
        for i in range(len(table)):
            row = [_format_cell(table.columns[n][i]) for n in names]
            row.append(table.schema.classes[table.labels[i]])
            writer.writerow(row)


def _format_cell(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_manifest(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# preprocessing

@dataclass(frozen=True)
class FeatureGroup:
    column: str
    kind: str
    start: int
    stop: int  # exclusive


class Preprocessor:
    """Frozen encoding statistics: z-score parameters for numeric columns and
    one-hot vocabularies for categorical ones, fitted on a train split only."""

    def __init__(self, schema: Schema, noise_sigma: float = 0.05):
        self.schema = schema
        self.noise_sigma = noise_sigma
        self.means: dict[str, float] = {}
        self.stds: dict[str, float] = {}
        self.mins: dict[str, float] = {}
        self.maxs: dict[str, float] = {}
        self.groups: list[FeatureGroup] = []
        self._fitted = False

    def fit(self, table: Table) -> "Preprocessor":
        if len(table) == 0:
            raise DataError("cannot fit preprocessor on an empty split")
        offset = 0
        self.groups = []
        for col in self.schema.columns:
            if col.kind == "numeric":
                vals = np.asarray(table.columns[col.name], dtype=np.float64)
                std = float(vals.std())  # population (ddof=0)
                if std == 0.0:
                    raise DataError(f"numeric column {col.name!r} is constant")
                self.means[col.name] = float(vals.mean())
                self.stds[col.name] = std
                self.mins[col.name] = float(vals.min())
                self.maxs[col.name] = float(vals.max())
                self.groups.append(FeatureGroup(col.name, "numeric",
                                                offset, offset + 1))
                offset += 1
            else:
                width = len(col.categories)
                self.groups.append(FeatureGroup(col.name, "categorical",
                                                offset, offset + width))
                offset += width
        self._fitted = True
        return self

    @property
    def encoded_dim(self) -> int:
        self._require_fit()
        return self.groups[-1].stop if self.groups else 0

    @property
    def numeric_indices(self) -> np.ndarray:
        """Encoded-space indices of numeric columns."""
        self._require_fit()
        return np.array([g.start for g in self.groups if g.kind == "numeric"],
                        dtype=np.int64)

    @property
    def categorical_groups(self) -> list[FeatureGroup]:
        self._require_fit()
        return [g for g in self.groups if g.kind == "categorical"]

    def _require_fit(self):
        if not self._fitted:
            raise DataError("preprocessor used before fit")

    def transform_rows(self, rows: Sequence[dict]) -> np.ndarray:
        """Encode raw feature dicts into the z-scored/one-hot matrix."""
        self._require_fit()
        n = len(rows)
        X = np.zeros((n, self.encoded_dim))
        for col, group in zip(self.schema.columns, self.groups):
            for r in rows:
                if col.name not in r:
                    raise DataError(f"missing column {col.name!r}")
            if col.kind == "numeric":
                try:
                    vals = np.array([float(r[col.name]) for r in rows])
                except (TypeError, ValueError):
                    raise DataError(f"column {col.name!r} expects a number")
                X[:, group.start] = (vals - self.means[col.name]) / self.stds[col.name]
            else:
                lookup = {c: k for k, c in enumerate(col.categories)}
                for i, r in enumerate(rows):
                    v = str(r[col.name])
                    if v not in lookup:
                        raise DataError(f"unseen category {v!r} in column "
                                        f"{col.name!r}")
                    X[i, group.start + lookup[v]] = 1.0
        return X

    def transform_table(self, table: Table) -> np.ndarray:
        return self.transform_rows(table.rows())

    def add_onehot_noise(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Dequantization: i.i.d. N(0, sigma^2) on one-hot coordinates only."""
        if self.noise_sigma <= 0.0:
            return X
        out = X.copy()
        for g in self.categorical_groups:
            out[:, g.start:g.stop] += rng.normal(
                0.0, self.noise_sigma, size=(X.shape[0], g.stop - g.start))
        return out

    def inverse_rows(self, X: np.ndarray) -> list[dict]:
        """Decode encoded rows back to raw values (numeric unscaled,
        categorical by block argmax)."""
        self._require_fit()
        rows: list[dict] = [{} for _ in range(X.shape[0])]
        for col, group in zip(self.schema.columns, self.groups):
            if col.kind == "numeric":
                vals = X[:, group.start] * self.stds[col.name] + self.means[col.name]
                for i, v in enumerate(vals):
                    rows[i][col.name] = float(v)
            else:
                block = X[:, group.start:group.stop]
                picks = block.argmax(axis=1)
                for i, k in enumerate(picks):
                    rows[i][col.name] = col.categories[k]
        return rows

    def snap_categorical(self, X: np.ndarray) -> np.ndarray:
        """Project each categorical block to the exact one-hot of its argmax."""
        out = X.copy()
        for g in self.categorical_groups:
            block = out[:, g.start:g.stop]
            hard = np.zeros_like(block)
            hard[np.arange(block.shape[0]), block.argmax(axis=1)] = 1.0
            out[:, g.start:g.stop] = hard
        return out

    def to_unit_range(self, X: np.ndarray) -> np.ndarray:
        """Re-express numeric coordinates on the train min-max scale, so a
        step of 1.0 spans a column's full observed range. Distance metrics
        are reported in these units; one-hot blocks pass through unchanged."""
        self._require_fit()
        out = np.atleast_2d(np.asarray(X, dtype=np.float64)).copy()
        for col, group in zip(self.schema.columns, self.groups):
            if col.kind != "numeric":
                continue
            span = self.maxs[col.name] - self.mins[col.name]
            raw = out[:, group.start] * self.stds[col.name] + self.means[col.name]
            out[:, group.start] = (raw - self.mins[col.name]) / span
        return out

    def numeric_state(self) -> dict:
        """JSON-safe snapshot of everything needed to rebuild the encoder."""
        return {
            "noise_sigma": self.noise_sigma,
            "means": self.means, "stds": self.stds,
            "mins": self.mins, "maxs": self.maxs,
        }

    @staticmethod
    def from_state(schema: Schema, state: dict) -> "Preprocessor":
        prep = Preprocessor(schema, noise_sigma=state["noise_sigma"])
        prep.fit_from_stats(state)
        return prep

    def fit_from_stats(self, state: dict) -> None:
        self.means = {k: float(v) for k, v in state["means"].items()}
        self.stds = {k: float(v) for k, v in state["stds"].items()}
        self.mins = {k: float(v) for k, v in state["mins"].items()}
        self.maxs = {k: float(v) for k, v in state["maxs"].items()}
        offset = 0
        self.groups = []
        for col in self.schema.columns:
            width = 1 if col.kind == "numeric" else len(col.categories)
            self.groups.append(FeatureGroup(col.name, col.kind, offset,
                                            offset + width))
            offset += width
        self._fitted = True


def fit_preprocessor(table: Table, noise_sigma: float = 0.05) -> Preprocessor:
    return Preprocessor(table.schema, noise_sigma=noise_sigma).fit(table)


def apply_preprocessor(prep: Preprocessor, table: Table, with_noise: bool = False,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    X = prep.transform_table(table)
    if with_noise:
        if rng is None:
            raise DataError("with_noise requires an explicit generator")
        X = prep.add_onehot_noise(X, rng)
    return X


@dataclass
class Dataset:
    """Encoded training data: design matrix, labels, and block layout."""
    schema: Schema
    X: np.ndarray
    y: np.ndarray
    groups: list[FeatureGroup] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError("X and y row counts differ")


def encode_dataset(table: Table, prep: Preprocessor, with_noise: bool = False,
                   rng: np.random.Generator | None = None) -> Dataset:
    X = apply_preprocessor(prep, table, with_noise=with_noise, rng=rng)
    return Dataset(table.schema, X, table.labels.copy(), list(prep.groups))


# ---------------------------------------------------------------------------
# rebalancing and splitting

def downsample_balance(table: Table, seed: int) -> Table:
    """Subsample every class without replacement down to the minority count."""
    counts = table.class_counts()
    present = counts > 0
    if not present.all():
        raise DataError("downsample requires every class to be nonempty")
    target_n = int(counts.min())
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    for c in range(table.schema.n_classes):
        idx = np.flatnonzero(table.labels == c)
        if len(idx) > target_n:
            idx = np.sort(rng.choice(idx, size=target_n, replace=False))
        keep.append(idx)
    order = np.sort(np.concatenate(keep))
    return table.select(order)


def split_train_test(table: Table, test_fraction: float,
                     seed: int) -> tuple[Table, Table]:
    """Stratified disjoint split, deterministic under seed."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction {test_fraction} outside (0, 1)")
    rng = np.random.default_rng(seed)
    test_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for c in range(table.schema.n_classes):
        idx = np.flatnonzero(table.labels == c)
        if len(idx) < 2:
            raise DataError(f"class {table.schema.classes[c]!r} has "
                            f"{len(idx)} samples; need >= 2 to split")
        perm = rng.permutation(idx)
        n_test = int(round(len(idx) * test_fraction))
        n_test = min(max(n_test, 1), len(idx) - 1)
        test_idx.append(perm[:n_test])
        train_idx.append(perm[n_test:])
    return (table.select(np.sort(np.concatenate(train_idx))),
            table.select(np.sort(np.concatenate(test_idx))))


# ---------------------------------------------------------------------------
# synthetic generators and bundled datasets

def _numeric_table(X: np.ndarray, y: np.ndarray, n_classes: int,
                   prefix: str = "x") -> Table:
    cols = tuple(ColumnSpec(f"{prefix}{j + 1}", "numeric")
                 for j in range(X.shape[1]))
    schema = Schema(cols, "label", tuple(str(c) for c in range(n_classes)))
    columns = {f"{prefix}{j + 1}": [float(v) for v in X[:, j]]
               for j in range(X.shape[1])}
    return Table(schema, columns, y)


def generate_synthetic(kind: str, n: int, noise: float, seed: int,
                       n_classes: int = 3) -> Table:
    """Deterministic synthetic datasets.

    moons: two interleaving half-circles of radius 1 (second arc flipped and
    shifted to nest under the first) plus isotropic N(0, noise^2).
    blobs: ``n_classes`` isotropic Gaussians with std ``noise`` (1.0 = the
    default unit variance), centers equally spaced on a circle with pairwise
    distance 8.
    """
    rng = np.random.default_rng(seed)
    if kind == "moons":
        k = 2
        if n < 2 * k:
            raise DataError(f"n={n} too small for {k} classes")
        n0 = n // 2
        n1 = n - n0
        t0 = np.linspace(0.0, np.pi, n0)
        t1 = np.linspace(0.0, np.pi, n1)
        pts0 = np.stack([np.cos(t0), np.sin(t0)], axis=1)
        pts1 = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
        X = np.concatenate([pts0, pts1], axis=0)
        if noise > 0:
            X = X + rng.normal(0.0, noise, size=X.shape)
        y = np.concatenate([np.zeros(n0, dtype=np.int64),
                            np.ones(n1, dtype=np.int64)])
        perm = rng.permutation(n)
        return _numeric_table(X[perm], y[perm], 2)
    if kind == "blobs":
        k = n_classes
        if n < 2 * k:
            raise DataError(f"n={n} too small for {k} classes")
        std = noise if noise > 0 else 1.0
        radius = 4.0 / np.sin(np.pi / k)  # chord between neighbors = 8
        angles = 2.0 * np.pi * np.arange(k) / k
        centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        per = [n // k + (1 if c < n % k else 0) for c in range(k)]
        X_parts, y_parts = [], []
        for c in range(k):
            X_parts.append(centers[c] + rng.normal(0.0, std, size=(per[c], 2)))
            y_parts.append(np.full(per[c], c, dtype=np.int64))
        X = np.concatenate(X_parts, axis=0)
        y = np.concatenate(y_parts)
        perm = rng.permutation(n)
        return _numeric_table(X[perm], y[perm], k)
    raise DataError(f"unknown synthetic kind {kind!r}")


def load_builtin(name: str) -> Table:
    """Bundled reference datasets (via scikit-learn's copies).

    Constant feature columns are dropped up front: they carry no signal and
    the z-score encoder rejects zero-variance columns.
    """
    from sklearn import datasets as skd

    if name == "wine":
        raw = skd.load_wine()
    elif name == "digits":
        raw = skd.load_digits()
    else:
        raise DataError(f"unknown builtin dataset {name!r}")
    X = np.asarray(raw.data, dtype=np.float64)
    y = np.asarray(raw.target, dtype=np.int64)
    keep = X.std(axis=0) > 0.0
    X = X[:, keep]
    return _numeric_table(X, y, int(y.max()) + 1, prefix="f")


# ---------------------------------------------------------------------------
# per-class k-means

def lloyd_kmeans(X: np.ndarray, k: int, rng: np.random.Generator,
                 tol: float = 1e-6, max_iter: int = 300) -> np.ndarray:
    """k-means++ seeding then Lloyd iterations; empty clusters are re-seeded
    to the point farthest from its assigned center."""
    n = X.shape[0]
    if n < k:
        raise DataError(f"k-means needs >= {k} points, got {n}")
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest_sq = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0.0:
            centers[j:] = X[rng.integers(n, size=k - j)]
            break
        probs = closest_sq / total
        centers[j] = X[rng.choice(n, p=probs)]
        closest_sq = np.minimum(closest_sq,
                                np.sum((X - centers[j]) ** 2, axis=1))

    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = X[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
            else:
                farthest = d2[np.arange(n), assign].argmax()
                new_centers[j] = X[farthest]
        move = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if move < tol:
            break
    return centers


class ClusterIndex:
    """Per-class k-means centers in encoded space."""

    def __init__(self, centers: dict[int, np.ndarray]):
        self.centers = {int(c): np.asarray(v, dtype=np.float64)
                        for c, v in centers.items()}
        for c, arr in self.centers.items():
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite center for class {c}")

    def classes(self) -> list[int]:
        return sorted(self.centers)

    def nearest(self, x: np.ndarray, cls: int) -> np.ndarray:
        """Euclidean-nearest center of ``cls``; ties go to the lowest ordinal."""
        centers = self.centers[cls]
        d2 = ((centers - x) ** 2).sum(axis=1)
        return centers[int(d2.argmin())]

    def nearest_batch(self, X: np.ndarray, cls: int) -> np.ndarray:
        centers = self.centers[cls]
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        return centers[d2.argmin(axis=1)]


def kmeans_per_class(X: np.ndarray, y: np.ndarray, k: int, seed: int) -> ClusterIndex:
    """Cluster each class separately; requires every class to have >= k rows."""
    centers: dict[int, np.ndarray] = {}
    for c in sorted(set(int(v) for v in y)):
        pts = X[y == c]
        if len(pts) < k:
            raise DataError(f"class {c} has {len(pts)} rows; needs >= {k} "
                            f"for k-means")
        rng = np.random.default_rng((seed, c))
        centers[c] = lloyd_kmeans(pts, k, rng)
    return ClusterIndex(centers)


def nearest_alt_center(index: ClusterIndex, x: np.ndarray, cls: int) -> np.ndarray:
    return index.nearest(x, cls)
