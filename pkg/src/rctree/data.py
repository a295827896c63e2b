"""Dataset ingestion, encoding, scaling and fold splitting.

Numeric columns are min-max scaled to [0, 1] with statistics from the fitting
rows only and clamped when applied to other rows.  Categorical columns (any
column with a non-numeric cell) are one-hot encoded.  Class labels are mapped
to 1..K in order of first appearance.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .objective import default_costs

__all__ = [
    "RawTable",
    "Dataset",
    "Transform",
    "load_csv",
    "encode_and_scale",
    "kfold_split",
    "default_costs",
]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True)
class RawTable:
    """Unencoded feature columns (strings) and the label column.

    ``labels`` is None when the table was read without a label column.
    """

    feature_names: tuple
    columns: tuple  # one tuple of strings per feature
    labels: tuple | None
    label_name: str | None = None

    @property
    def n_rows(self) -> int:
        if self.columns:
            return len(self.columns[0])
        return 0 if self.labels is None else len(self.labels)

    @classmethod
    def from_arrays(cls, X, y=None, feature_names=None) -> RawTable:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {X.shape}")
        names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
        cols = tuple(tuple(repr(float(v)) for v in X[:, j]) for j in range(X.shape[1]))
        labels = None if y is None else tuple(str(v) for v in np.asarray(y).tolist())
        return cls(names, cols, labels, None if y is None else "label")

    def subset(self, rows) -> RawTable:
        rows = np.asarray(rows, dtype=int)
        cols = tuple(tuple(col[i] for i in rows) for col in self.columns)
        labels = None if self.labels is None else tuple(self.labels[i] for i in rows)
        return RawTable(self.feature_names, cols, labels, self.label_name)


def load_csv(path, label_column: str | int | None = -1) -> RawTable:
    """Read a UTF-8 CSV with a header row.

    Parameters
    ----------
    path : path-like
    label_column : str, int or None
        Column name, column index (default: last), or None for a table
        without labels.

    Raises
    ------
    DataError
        Missing header, ragged rows or empty cells, with the row (1-based,
        header is row 1) and column named.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not UTF-8: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if any(_is_number(h) for h in header):
        raise DataError(f"{path}: missing header row (first row is numeric)")
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    body = rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i} has {len(r)} cells, header has {len(header)}")
        for j, cell in enumerate(r):
            if not cell.strip():
                raise DataError(f"{path}: empty cell at row {i}, column {header[j]!r}")
    if label_column is None:
        li = None
    elif isinstance(label_column, str):
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        li = header.index(label_column)
    else:
        li = int(label_column) % len(header)
    cols = [tuple(r[j].strip() for r in body) for j in range(len(header))]
    names = tuple(h for j, h in enumerate(header) if j != li)
    features = tuple(c for j, c in enumerate(cols) if j != li)
    labels = None if li is None else cols[li]
    return RawTable(names, features, labels, None if li is None else header[li])


@dataclass(frozen=True)
class Dataset:
    """Scaled features in [0, 1] and labels in 1..K."""

    X: np.ndarray
    y: np.ndarray | None
    feature_names: tuple
    class_names: tuple

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class Transform:
    """Serializable encoding and scaling fitted on a set of rows.

    ``features`` holds one entry per raw column: ``{"name", "kind": "numeric",
    "lo", "hi"}`` or ``{"name", "kind": "categorical", "levels"}``.
    """

    features: tuple
    class_names: tuple
    label_name: str | None = None

    @property
    def output_names(self) -> tuple:
        out = []
        for f in self.features:
            if f["kind"] == "numeric":
                out.append(f["name"])
            else:
                out.extend(f"{f['name']}={lvl}" for lvl in f["levels"])
        return tuple(out)

    def to_dict(self) -> dict:
        return {"features": list(self.features), "class_names": list(self.class_names), "label_name": self.label_name}

    @classmethod
    def from_dict(cls, doc: dict) -> Transform:
        try:
            feats = tuple(
                {**f, "levels": tuple(f["levels"])} if f["kind"] == "categorical" else dict(f)
                for f in doc["features"]
            )
            return cls(feats, tuple(doc["class_names"]), doc.get("label_name"))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed transform record: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> Transform:
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError as exc:
            raise DataError(f"transform record not found: {path}") from exc

    def encode_labels(self, labels) -> np.ndarray:
        index = {name: k + 1 for k, name in enumerate(self.class_names)}
        unknown = sorted({v for v in labels if v not in index})
        if unknown:
            raise DataError(f"labels {unknown} were not seen when fitting")
        return np.array([index[v] for v in labels], dtype=int)

    def apply(self, raw: RawTable) -> Dataset:
        """Encode and scale ``raw``; columns are matched by name."""
        have = dict(zip(raw.feature_names, raw.columns))
        missing = [f["name"] for f in self.features if f["name"] not in have]
        if missing:
            raise DataError(f"input is missing columns {missing}")
        blocks = []
        for f in self.features:
            col = have[f["name"]]
            if f["kind"] == "numeric":
                try:
                    v = np.array([float(c) for c in col])
                except ValueError as exc:
                    raise DataError(f"column {f['name']!r}: non-numeric value ({exc})") from exc
                span = f["hi"] - f["lo"]
                s = np.zeros_like(v) if span <= 0 else (v - f["lo"]) / span
                blocks.append(np.clip(s, 0.0, 1.0)[:, None])
            else:
                levels = f["levels"]
                onehot = np.zeros((len(col), len(levels)))
                pos = {lvl: k for k, lvl in enumerate(levels)}
                unseen = set()
                for i, c in enumerate(col):
                    if c in pos:
                        onehot[i, pos[c]] = 1.0
                    else:
                        unseen.add(c)
                if unseen:
                    warnings.warn(
                        f"column {f['name']!r}: unknown levels {sorted(unseen)} encoded as all zeros",
                        stacklevel=2,
                    )
                blocks.append(onehot)
        n = raw.n_rows
        X = np.hstack(blocks) if blocks else np.zeros((n, 0))
        y = None if raw.labels is None else self.encode_labels(raw.labels)
        return Dataset(X, y, self.output_names, self.class_names)


def fit_transform(raw: RawTable, fit_rows=None) -> Transform:
    """Fit encoding and scaling on ``fit_rows`` (default: all rows)."""
    n = raw.n_rows
    rows = np.arange(n) if fit_rows is None else np.asarray(fit_rows, dtype=int)
    if rows.size == 0:
        raise ConfigError("fit_rows must be nonempty")
    feats = []
    for name, col in zip(raw.feature_names, raw.columns):
        if all(_is_number(c) for c in col):
            v = np.array([float(col[i]) for i in rows])
            lo, hi = float(v.min()), float(v.max())
            if hi <= lo:
                warnings.warn(f"feature {name!r} is constant on the fitting rows; scaled to 0", stacklevel=2)
            feats.append({"name": name, "kind": "numeric", "lo": lo, "hi": hi})
        else:
            levels = tuple(dict.fromkeys(col[i] for i in rows))
            feats.append({"name": name, "kind": "categorical", "levels": levels})
    classes = () if raw.labels is None else tuple(dict.fromkeys(raw.labels))
    return Transform(tuple(feats), classes, raw.label_name)


def encode_and_scale(raw: RawTable, fit_rows=None) -> tuple[Dataset, Transform]:
    """Fit on ``fit_rows`` and apply to every row of ``raw``.

    Examples
    --------
    >>> raw = RawTable.from_arrays([[2.0], [4.0], [6.0]], [1, 2, 1])
    >>> encode_and_scale(raw)[0].X.ravel().tolist()
    [0.0, 0.5, 1.0]
    """
    tf = fit_transform(raw, fit_rows)
    return tf.apply(raw), tf


def kfold_split(N: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded partition of 0..N-1 into ``k`` parts whose sizes differ by at most one."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > N:
        raise ConfigError(f"cannot split {N} rows into {k} folds")
    perm = np.random.default_rng([int(seed) % 2**63]).permutation(N)
    return [np.sort(part) for part in np.array_split(perm, k)]


def synthetic_oblique(n: int = 3000, p: int = 20, seed: int = 2024, flip: float = 0.03) -> RawTable:
    """Three-class data labelled by a fixed depth-2 oblique tree, with label noise.

    Features are uniform on [0, 1]^p; the three splits use disjoint triples of
    the first nine features, so ``p >= 9``.  A fraction ``flip`` of labels is
    redrawn uniformly.
    """
    if p < 9:
        raise ConfigError(f"synthetic generator needs p >= 9, got {p}")
    rng = np.random.default_rng([int(seed) % 2**63])
    X = rng.uniform(size=(n, p))
    A = np.zeros((p, 3))
    A[0:3, 0] = [1.0, -1.0, 0.5]
    A[3:6, 1] = [1.0, 1.0, -1.0]
    A[6:9, 2] = [-1.0, 0.5, 1.0]
    v = X @ A - np.array([0.25, 0.5, 0.25])
    leaf = np.where(v[:, 0] > 0, np.where(v[:, 1] > 0, 0, 1), np.where(v[:, 2] > 0, 2, 3))
    y = np.array([1, 2, 3, 1])[leaf]
    noisy = rng.uniform(size=n) < flip
    y[noisy] = rng.integers(1, 4, noisy.sum())
    return RawTable.from_arrays(X, y)
