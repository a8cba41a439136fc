"""Deterministic desk-scale datasets bundled for tests and experiments.

Every generator returns (features: Dataset, labels: ndarray, task). Sizes
stay in the hundreds so full pipelines run in seconds.
"""

from __future__ import annotations

import numpy as np

from ..tabular import Column, Dataset, Schema

REGRESSION = "regression"
CLASSIFICATION = "classification"


def _numeric_schema(names) -> Schema:
    return Schema(tuple(Column(n, "numerical") for n in names))


def make_two_moons(n: int = 500, noise: float = 0.12, seed: int = 7):
    """Two interleaving half-circles; the classic nonlinear binary task."""
    rng = np.random.default_rng(seed)
    half = n // 2
    t1 = rng.uniform(0, np.pi, half)
    t2 = rng.uniform(0, np.pi, n - half)
    pts = np.empty((n, 2))
    pts[:half, 0] = np.cos(t1)
    pts[:half, 1] = np.sin(t1)
    pts[half:, 0] = 1.0 - np.cos(t2)
    pts[half:, 1] = 0.5 - np.sin(t2)
    pts += rng.normal(size=(n, 2)) * noise
    y = np.r_[np.zeros(half), np.ones(n - half)]
    order = rng.permutation(n)
    ds = Dataset(_numeric_schema(["x1", "x2"]), pts[order])
    return ds, y[order], CLASSIFICATION


def make_rings(n: int = 500, noise: float = 0.08, seed: int = 11):
    """Inner disk vs surrounding ring; boundary everywhere."""
    rng = np.random.default_rng(seed)
    half = n // 2
    r = np.r_[rng.uniform(0, 0.9, half), rng.uniform(1.3, 2.0, n - half)]
    theta = rng.uniform(0, 2 * np.pi, n)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    pts += rng.normal(size=(n, 2)) * noise
    y = np.r_[np.zeros(half), np.ones(n - half)]
    order = rng.permutation(n)
    ds = Dataset(_numeric_schema(["x1", "x2"]), pts[order])
    return ds, y[order], CLASSIFICATION


def make_xor_blobs(n: int = 400, spread: float = 0.25, seed: int = 13):
    """Four Gaussian blobs with diagonal labels (the XOR pattern)."""
    rng = np.random.default_rng(seed)
    centers = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    labels = [1, 0, 0, 1]
    per = n // 4
    pts = np.vstack([rng.normal(size=(per, 2)) * spread + c for c in centers])
    y = np.repeat(labels, per).astype(float)
    order = rng.permutation(len(y))
    ds = Dataset(_numeric_schema(["x1", "x2"]), pts[order])
    return ds, y[order], CLASSIFICATION


def make_curve_reg(n: int = 500, noise: float = 0.1, seed: int = 17):
    """Nonlinear regression surface over four inputs."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n, 4))
    y = (np.sin(1.5 * X[:, 0]) * 3.0
         + X[:, 1] ** 2
         - 2.0 * X[:, 2]
         + 0.3 * X[:, 3]
         + rng.normal(size=n) * noise)
    ds = Dataset(_numeric_schema(["x1", "x2", "x3", "x4"]), X)
    return ds, y, REGRESSION


def make_moons_cat(n: int = 500, noise: float = 0.12, seed: int = 19):
    """Two moons plus a noisy categorical region column (mixed types)."""
    ds, y, _ = make_two_moons(n, noise, seed)
    rng = np.random.default_rng(seed + 1)
    terciles = np.quantile(ds.values[:, 0], [1 / 3, 2 / 3])
    region = np.digitize(ds.values[:, 0], terciles).astype(float)
    flip = rng.uniform(size=n) < 0.15
    region[flip] = rng.integers(0, 3, size=int(flip.sum()))
    schema = Schema((
        Column("x1", "numerical"),
        Column("x2", "numerical"),
        Column("region", "categorical", ("low", "mid", "high")),
    ))
    values = np.column_stack([ds.values, region])
    return Dataset(schema, values), y, CLASSIFICATION


def make_checker6(n: int = 500, seed: int = 23):
    """Six features; the label is an XOR of two thresholded coordinates
    softened by a third, the rest are distractors."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 6))
    score = (np.sign(X[:, 0]) * np.sign(X[:, 1])
             + 0.8 * X[:, 2]
             + rng.normal(size=n) * 0.15)
    y = (score > 0).astype(float)
    ds = Dataset(_numeric_schema([f"f{i}" for i in range(6)]), X)
    return ds, y, CLASSIFICATION


def make_slopes6(n: int = 500, seed: int = 31):
    """Six features, three informative with smooth local effects everywhere."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 6))
    score = (1.6 * X[:, 0]
             - 2.2 * X[:, 1]
             + 1.8 * np.tanh(2.0 * X[:, 2])
             + rng.normal(size=n) * 0.1)
    y = (score > 0).astype(float)
    ds = Dataset(_numeric_schema([f"f{i}" for i in range(6)]), X)
    return ds, y, CLASSIFICATION


def make_ridge8(n: int = 500, seed: int = 29):
    """Eight features; the label depends on a curved score of three of them."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 8))
    score = 2.0 * X[:, 0] + X[:, 1] ** 2 * 3.0 - 2.5 * np.abs(X[:, 2]) \
        + rng.normal(size=n) * 0.1
    y = (score > 0.2).astype(float)
    ds = Dataset(_numeric_schema([f"f{i}" for i in range(8)]), X)
    return ds, y, CLASSIFICATION


_REGISTRY = {
    "two_moons": make_two_moons,
    "rings": make_rings,
    "xor_blobs": make_xor_blobs,
    "curve_reg": make_curve_reg,
    "moons_cat": make_moons_cat,
    "checker6": make_checker6,
    "slopes6": make_slopes6,
    "ridge8": make_ridge8,
}


def dataset_names() -> list[str]:
    return sorted(_REGISTRY)


def load_bundled(name: str, **overrides):
    """Instantiate a bundled dataset by registry name."""
    if name not in _REGISTRY:
        raise KeyError(f"unknown dataset {name!r}; available: {dataset_names()}")
    return _REGISTRY[name](**overrides)
