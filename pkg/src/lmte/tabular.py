"""Tabular datasets, reversible preprocessing, and K-nearest-neighbor locality.

A Dataset keeps numerical cells as floats and categorical cells as integer
indices into the column's category list. Transforms (min-max, Box-Cox,
one-hot) are fitted once into a TransformModel and can be applied and
inverted; the apply/invert pair round-trips to 1e-9 relative error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"

# Grid the Box-Cox lambda search runs over: [-5, 5] in steps of 0.1.
BOXCOX_GRID = np.round(np.arange(-50, 51) * 0.1, 1)

# Safety margin added when shifting a column to be strictly positive.
BOXCOX_EPS = 1e-3

CATEGORY_INFERENCE_THRESHOLD = 10


class TabularError(ValueError):
    """Raised for malformed schemas, datasets, or CSV input."""


class DegenerateColumnError(TabularError):
    """Raised when a transform cannot be fitted on a constant column."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise TabularError("column name must be non-empty")
        if self.kind not in (NUMERICAL, CATEGORICAL):
            raise TabularError(f"unknown column kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.categories) < 1:
                raise TabularError(f"categorical column {self.name!r} needs >= 1 category")
            if len(set(self.categories)) != len(self.categories):
                raise TabularError(f"duplicate categories in column {self.name!r}")
        elif self.categories:
            raise TabularError(f"numerical column {self.name!r} must not list categories")


@dataclass(frozen=True)
class Schema:
    """Ordered column descriptions shared by every row operation."""

    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise TabularError("column names must be unique")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise TabularError(f"unknown column {name!r}")

    def numerical_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == NUMERICAL]

    def categorical_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == CATEGORICAL]

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind}
            if c.kind == CATEGORICAL:
                d["categories"] = list(c.categories)
            cols.append(d)
        return {"columns": cols}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        cols = []
        for c in d["columns"]:
            cols.append(Column(c["name"], c["kind"], tuple(c.get("categories", ()))))
        return cls(tuple(cols))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Dataset:
    """Schema plus a row matrix; categorical cells hold category indices."""

    schema: Schema
    values: np.ndarray  # float64, shape (n_rows, n_columns)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise TabularError("values must be a 2-D matrix")
        if self.values.shape[1] != len(self.schema.columns):
            raise TabularError(
                f"row width {self.values.shape[1]} != schema width {len(self.schema.columns)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise TabularError("dataset contains NaN or infinite cells")
        for j in self.schema.categorical_indices():
            col = self.values[:, j]
            n_cat = len(self.schema.columns[j].categories)
            if col.size and (np.any(col != np.round(col)) or col.min() < 0 or col.max() >= n_cat):
                raise TabularError(
                    f"categorical column {self.schema.columns[j].name!r} has out-of-range index"
                )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def take(self, indices) -> "Dataset":
        return Dataset(self.schema, self.values[np.asarray(indices, dtype=int)])

    def raw_rows(self) -> list[list]:
        """Rows with categorical indices replaced by their category strings."""
        out = []
        for row in self.values:
            cells = []
            for j, col in enumerate(self.schema.columns):
                if col.kind == CATEGORICAL:
                    cells.append(col.categories[int(row[j])])
                else:
                    cells.append(float(row[j]))
            out.append(cells)
        return out

    def to_named_row(self, i: int) -> dict:
        """Row i as a {column name: value} mapping, categoricals as strings."""
        out = {}
        for j, col in enumerate(self.schema.columns):
            if col.kind == CATEGORICAL:
                out[col.name] = col.categories[int(self.values[i, j])]
            else:
                out[col.name] = float(self.values[i, j])
        return out


def row_from_named(schema: Schema, named: dict) -> np.ndarray:
    """Build a row vector from a {column name: value} mapping."""
    row = np.empty(len(schema.columns))
    for j, col in enumerate(schema.columns):
        if col.name not in named:
            raise TabularError(f"missing value for column {col.name!r}")
        v = named[col.name]
        if col.kind == CATEGORICAL:
            v = str(v)
            if v not in col.categories:
                raise TabularError(f"unknown category {v!r} for column {col.name!r}")
            row[j] = col.categories.index(v)
        else:
            row[j] = float(v)
    return row


def _is_numeric_token(tok: str) -> bool:
    try:
        v = float(tok)
    except ValueError:
        return False
    return math.isfinite(v)


def load_csv(path, schema: Schema | None = None,
             category_threshold: int = CATEGORY_INFERENCE_THRESHOLD) -> Dataset:
    """Load an RFC-4180 style CSV (header row, UTF-8) into a Dataset.

    When no schema is given, a column is inferred categorical iff it contains
    a non-numeric token or has at most `category_threshold` distinct values.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise TabularError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TabularError(f"empty CSV: {path}") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise TabularError(
                    f"{path}: line {lineno}: expected {len(header)} cells, got {len(row)}"
                )
            rows.append(row)

    if schema is not None:
        if [c.name for c in schema.columns] != header:
            raise TabularError(f"{path}: header {header} does not match schema {schema.names}")
    else:
        schema = _infer_schema(header, rows, category_threshold)

    values = np.empty((len(rows), len(header)))
    for j, col in enumerate(schema.columns):
        if col.kind == CATEGORICAL:
            lookup = {c: i for i, c in enumerate(col.categories)}
            for i, row in enumerate(rows):
                tok = row[j]
                if tok not in lookup:
                    raise TabularError(
                        f"{path}: line {i + 2}: unknown category {tok!r} in column {col.name!r}"
                    )
                values[i, j] = lookup[tok]
        else:
            for i, row in enumerate(rows):
                tok = row[j]
                if not _is_numeric_token(tok):
                    raise TabularError(
                        f"{path}: line {i + 2}: cannot parse {tok!r} as a number "
                        f"in column {col.name!r}"
                    )
                values[i, j] = float(tok)
    return Dataset(schema, values)


def _infer_schema(header, rows, threshold):
    cols = []
    for j, name in enumerate(header):
        tokens = [row[j] for row in rows]
        numeric = all(_is_numeric_token(t) for t in tokens)
        distinct = sorted(set(tokens))
        if not numeric or len(distinct) <= threshold:
            cols.append(Column(name, CATEGORICAL, tuple(distinct)))
        else:
            cols.append(Column(name, NUMERICAL))
    return Schema(tuple(cols))


def save_csv(data: Dataset, path, extra_columns: dict | None = None) -> None:
    """Write a Dataset back to CSV, categoricals as strings.

    `extra_columns` maps appended column names to value sequences (e.g.
    oracle labels next to synthetic rows).
    """
    extra = extra_columns or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.schema.names + list(extra))
        raw = data.raw_rows()
        for i, row in enumerate(raw):
            cells = [c if isinstance(c, str) else repr(c) for c in row]
            writer.writerow(cells + [repr(v) if not isinstance(v, str) else v
                                     for v in (extra[k][i] for k in extra)])


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

@dataclass
class NumericTransform:
    """Per-column min-max + Box-Cox state; either part may be absent."""

    minmax: tuple[float, float] | None = None  # (lo, hi), hi > lo
    boxcox: tuple[float, float] | None = None  # (lambda, shift)
    observed_min: float = 0.0  # post-minmax/shift minimum, used to clamp inverses


@dataclass
class TransformModel:
    """Fitted reversible encoding: numeric transforms + one-hot layout.

    The encoded matrix lays columns out in schema order: one slot per
    numerical column, a one-hot block per categorical column.
    """

    schema: Schema
    numeric: dict[int, NumericTransform] = field(default_factory=dict)
    use_minmax: bool = False
    use_boxcox: bool = False

    @property
    def offsets(self) -> list[int]:
        offs, pos = [], 0
        for col in self.schema.columns:
            offs.append(pos)
            pos += 1 if col.kind == NUMERICAL else len(col.categories)
        return offs

    @property
    def width(self) -> int:
        w = 0
        for col in self.schema.columns:
            w += 1 if col.kind == NUMERICAL else len(col.categories)
        return w

    def encoded_names(self) -> list[str]:
        names = []
        for col in self.schema.columns:
            if col.kind == NUMERICAL:
                names.append(col.name)
            else:
                names.extend(f"{col.name}={c}" for c in col.categories)
        return names

    def encoded_column_of(self, j: int) -> tuple[int, str | None]:
        """Map encoded slot -> (schema column index, category or None)."""
        pos = 0
        for ci, col in enumerate(self.schema.columns):
            w = 1 if col.kind == NUMERICAL else len(col.categories)
            if pos <= j < pos + w:
                if col.kind == NUMERICAL:
                    return ci, None
                return ci, col.categories[j - pos]
            pos += w
        raise TabularError(f"encoded index {j} out of range")


def fit_transforms(data: Dataset, use_minmax: bool = False,
                   use_boxcox: bool = False) -> TransformModel:
    """Fit the reversible encoding on `data`.

    Min-max is fitted only on numerical columns that contain a non-positive
    value (columns already positive are left alone). The Box-Cox lambda is
    chosen per column by maximizing the Box-Cox log-likelihood over a grid
    of step 0.1 on [-5, 5].
    """
    if data.n_rows == 0:
        raise TabularError("cannot fit transforms on an empty dataset")
    model = TransformModel(data.schema, use_minmax=use_minmax, use_boxcox=use_boxcox)
    for j in data.schema.numerical_indices():
        col = data.values[:, j]
        tr = NumericTransform()
        x = col.astype(float)
        if use_minmax and np.any(x <= 0):
            lo, hi = float(x.min()), float(x.max())
            if hi <= lo:
                raise DegenerateColumnError(
                    f"column {data.schema.columns[j].name!r} is constant; min-max undefined"
                )
            tr.minmax = (lo, hi)
            x = (x - lo) / (hi - lo)
        if use_boxcox:
            shift = max(0.0, BOXCOX_EPS - float(x.min()))
            xs = x + shift
            lam = _best_boxcox_lambda(xs)
            if lam is not None:
                tr.boxcox = (lam, shift)
                x = _boxcox(xs, lam)
        tr.observed_min = float(x.min())
        model.numeric[j] = tr
    return model


def _boxcox(x: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0.0:
        return np.log(x)
    return (np.power(x, lam) - 1.0) / lam


def _boxcox_inverse(y: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0.0:
        return np.exp(y)
    return np.power(lam * y + 1.0, 1.0 / lam)


def boxcox_loglik(x: np.ndarray, lam: float) -> float:
    """Profile log-likelihood of the Box-Cox transform at `lam` (x > 0)."""
    n = x.size
    y = _boxcox(x, lam)
    var = float(np.mean((y - y.mean()) ** 2))
    if var <= 0 or not np.isfinite(var):
        return -np.inf
    return -0.5 * n * math.log(var) + (lam - 1.0) * float(np.sum(np.log(x)))


def _best_boxcox_lambda(x: np.ndarray) -> float | None:
    if np.ptp(x) == 0:
        return None  # constant column: likelihood undefined, skip the transform
    lls = np.array([boxcox_loglik(x, lam) for lam in BOXCOX_GRID])
    if not np.any(np.isfinite(lls)):
        return None
    return float(BOXCOX_GRID[int(np.argmax(lls))])


def apply_transforms(model: TransformModel, data: Dataset) -> np.ndarray:
    """Encode a Dataset into the transformed one-hot matrix."""
    if data.schema != model.schema:
        raise TabularError("dataset schema does not match the fitted transform model")
    n = data.n_rows
    out = np.zeros((n, model.width))
    offsets = model.offsets
    for j, col in enumerate(model.schema.columns):
        pos = offsets[j]
        if col.kind == NUMERICAL:
            out[:, pos] = transform_numeric_column(model, j, data.values[:, j])
        else:
            idx = data.values[:, j].astype(int)
            out[np.arange(n), pos + idx] = 1.0
    return out


def transform_numeric_column(model: TransformModel, j: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    tr = model.numeric.get(j)
    if tr is None:
        return x.copy()
    if tr.minmax is not None:
        lo, hi = tr.minmax
        x = (x - lo) / (hi - lo)
    if tr.boxcox is not None:
        lam, shift = tr.boxcox
        x = _boxcox(x + shift, lam)
    return x


def invert_numeric_column(model: TransformModel, j: int, y: np.ndarray,
                          clamp_counts: dict[str, int] | None = None) -> np.ndarray:
    """Invert one numeric column; out-of-domain Box-Cox inputs are clamped.

    When lam*y + 1 <= 0 the inverse is undefined; such cells are clamped to
    the column's observed minimum at fit time and, when `clamp_counts` is
    given, counted per column name.
    """
    y = np.asarray(y, dtype=float).copy()
    tr = model.numeric.get(j)
    if tr is None:
        return y
    if tr.boxcox is not None:
        lam, shift = tr.boxcox
        if lam != 0.0:
            bad = lam * y + 1.0 <= 0.0
            if np.any(bad):
                if clamp_counts is not None:
                    name = model.schema.columns[j].name
                    clamp_counts[name] = clamp_counts.get(name, 0) + int(bad.sum())
                y[bad] = tr.observed_min
        y = _boxcox_inverse(y, lam) - shift
    if tr.minmax is not None:
        lo, hi = tr.minmax
        y = y * (hi - lo) + lo
    return y


def invert_transforms(model: TransformModel, encoded: np.ndarray,
                      clamp_counts: dict[str, int] | None = None) -> Dataset:
    """Decode a transformed one-hot matrix back into a Dataset."""
    encoded = np.asarray(encoded, dtype=float)
    if encoded.ndim != 2 or encoded.shape[1] != model.width:
        raise TabularError(f"encoded width {encoded.shape} does not match layout {model.width}")
    n = encoded.shape[0]
    values = np.empty((n, len(model.schema.columns)))
    offsets = model.offsets
    for j, col in enumerate(model.schema.columns):
        pos = offsets[j]
        if col.kind == NUMERICAL:
            values[:, j] = invert_numeric_column(model, j, encoded[:, pos], clamp_counts)
        else:
            block = encoded[:, pos:pos + len(col.categories)]
            values[:, j] = np.argmax(block, axis=1)
    return Dataset(model.schema, values)


def transform_dataset(model: TransformModel, data: Dataset) -> Dataset:
    """Dataset with numeric columns transformed, categoricals untouched."""
    values = data.values.copy()
    for j in model.schema.numerical_indices():
        values[:, j] = transform_numeric_column(model, j, data.values[:, j])
    return Dataset(model.schema, values)


def invert_dataset(model: TransformModel, data: Dataset,
                   clamp_counts: dict[str, int] | None = None) -> Dataset:
    """Inverse of transform_dataset, with Box-Cox domain clamping."""
    values = data.values.copy()
    for j in model.schema.numerical_indices():
        values[:, j] = invert_numeric_column(model, j, data.values[:, j], clamp_counts)
    return Dataset(model.schema, values)


def onehot_encoder(schema: Schema) -> TransformModel:
    """Layout-only encoder: identity numerics + one-hot categoricals."""
    return TransformModel(schema)


# ---------------------------------------------------------------------------
# K nearest neighbors
# ---------------------------------------------------------------------------

def mixed_distances(data: Dataset, point: np.ndarray) -> np.ndarray:
    """Euclidean distance over z-scored numericals plus categorical mismatches."""
    point = np.asarray(point, dtype=float)
    num = data.schema.numerical_indices()
    cat = data.schema.categorical_indices()
    d = np.zeros(data.n_rows)
    if num:
        cols = data.values[:, num]
        mu = cols.mean(axis=0)
        sd = cols.std(axis=0)
        sd[sd == 0] = 1.0  # constant columns contribute nothing
        z = (cols - mu) / sd
        zp = (point[num] - mu) / sd
        d += np.sqrt(((z - zp) ** 2).sum(axis=1))
    for j in cat:
        d += (data.values[:, j] != point[j]).astype(float)
    return d


def knn(data: Dataset, point: np.ndarray, k: int, seed: int = 0) -> Dataset:
    """The k rows nearest to `point`; ties broken by lower row index.

    The `seed` is accepted for interface stability but the selection is
    fully deterministic.
    """
    if data.n_rows == 0:
        raise TabularError("knn on an empty dataset")
    if not 1 <= k <= data.n_rows:
        raise TabularError(f"k={k} out of range for {data.n_rows} rows")
    d = mixed_distances(data, point)
    order = np.argsort(d, kind="stable")
    return data.take(order[:k])
