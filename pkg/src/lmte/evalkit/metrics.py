"""Fidelity, rule-quality, and faithfulness metrics plus the URS baseline
sampler."""

from __future__ import annotations

import numpy as np

from ..lmt import LeafModel, RuleConjunction
from ..tabular import Dataset, apply_transforms, onehot_encoder


class MetricError(ValueError):
    pass


def fidelity_classification(surrogate: np.ndarray, oracle: np.ndarray) -> float:
    """Fraction of rows where surrogate and target labels agree."""
    s = np.asarray(surrogate)
    o = np.asarray(oracle)
    if s.shape != o.shape or s.size == 0:
        raise MetricError("need equal-length non-empty label vectors")
    return float(np.mean(s == o))


def fidelity_regression(surrogate: np.ndarray, oracle: np.ndarray) -> float:
    """RMSE divided by the population stdev of the target predictions.

    0 is a perfect surrogate; 1 matches a constant-at-the-mean surrogate.
    """
    s = np.asarray(surrogate, dtype=float)
    o = np.asarray(oracle, dtype=float)
    if s.shape != o.shape or s.size < 2:
        raise MetricError("need equal-length vectors of at least 2 rows")
    sd = float(o.std())
    if sd == 0:
        raise MetricError("target predictions are constant; standardized RMSE undefined")
    rmse = float(np.sqrt(np.mean((s - o) ** 2)))
    return rmse / sd


# ---------------------------------------------------------------------------
# URS baseline sampler
# ---------------------------------------------------------------------------

class TrainStats:
    """Per-column statistics of a training set, feeding urs_sample."""

    def __init__(self, data: Dataset):
        self.schema = data.schema
        self.mean = {}
        self.std = {}
        self.freq = {}
        for j, col in enumerate(data.schema.columns):
            if col.kind == "numerical":
                self.mean[j] = float(data.values[:, j].mean())
                self.std[j] = float(data.values[:, j].std())
            else:
                k = len(col.categories)
                counts = np.bincount(data.values[:, j].astype(int), minlength=k)
                self.freq[j] = counts / counts.sum()


def urs_sample(stats: TrainStats, x_t: np.ndarray, n: int, seed: int = 0) -> Dataset:
    """LIME-style independent perturbation around a point.

    Numeric cells add N(0,1) times the column's training stdev to the test
    point's value; categorical cells are drawn from the training frequency
    distribution. Every feature is perturbed independently.
    """
    rng = np.random.default_rng(seed)
    x_t = np.asarray(x_t, dtype=float)
    schema = stats.schema
    values = np.empty((n, len(schema.columns)))
    for j, col in enumerate(schema.columns):
        if col.kind == "numerical":
            values[:, j] = x_t[j] + rng.standard_normal(n) * stats.std[j]
        else:
            values[:, j] = rng.choice(len(col.categories), size=n, p=stats.freq[j])
    return Dataset(schema, values)


def lime_kernel_weights(data: Dataset, x_t: np.ndarray) -> np.ndarray:
    """Optional exponential proximity kernel exp(-d^2 / sigma^2) with
    sigma = 0.75 sqrt(d), computed on the one-hot encoded rows."""
    enc = apply_transforms(onehot_encoder(data.schema), data)
    xt_enc = apply_transforms(onehot_encoder(data.schema),
                              Dataset(data.schema, np.asarray(x_t, float)[None, :]))[0]
    d2 = ((enc - xt_enc) ** 2).sum(axis=1)
    sigma = 0.75 * np.sqrt(enc.shape[1])
    return np.exp(-d2 / sigma ** 2)


# ---------------------------------------------------------------------------
# Rule quality
# ---------------------------------------------------------------------------

def coverage_precision(context: RuleConjunction, leaf_model: LeafModel,
                       oracle, rows: Dataset) -> dict:
    """Coverage of a context rule and precision of its leaf model.

    Coverage is the fraction of rows satisfying the rule. Precision is the
    agreement, over covered rows, between the leaf model's local prediction
    and the target labels; it is None when nothing is covered. `oracle` is
    anything with a predict(Dataset) method, or a precomputed label vector.
    """
    schema = rows.schema
    covered = np.array([context.satisfied_by(schema, rows.values[i])
                        for i in range(rows.n_rows)], dtype=bool)
    coverage = float(covered.mean()) if rows.n_rows else 0.0
    if not covered.any():
        return {"coverage": coverage, "precision": None, "n_covered": 0}
    if hasattr(oracle, "predict"):
        labels = np.asarray(oracle.predict(rows))[covered]
    else:
        labels = np.asarray(oracle)[covered]
    enc = apply_transforms(onehot_encoder(schema), rows.take(np.flatnonzero(covered)))
    pred = leaf_model.predict(enc)
    if leaf_model.kind == "logistic":
        pred = (pred >= 0.5).astype(float)
    precision = float(np.mean(pred == labels))
    return {"coverage": coverage, "precision": precision, "n_covered": int(covered.sum())}


def recall_faithfulness(attribution_values: dict[str, float],
                        true_features: set[str]) -> float:
    """Overlap of the top half of attributed features with a reference
    explanation's features.

    The top half is the ceil(d/2) features with the largest absolute
    attribution; recall is the covered fraction of `true_features`.
    """
    if not attribution_values:
        raise MetricError("empty attribution list")
    if not true_features:
        raise MetricError("empty true-feature set")
    d = len(attribution_values)
    top_n = -(-d // 2)
    ranked = sorted(attribution_values, key=lambda k: -abs(attribution_values[k]))
    top = set(ranked[:top_n])
    return len(top & set(true_features)) / len(true_features)
