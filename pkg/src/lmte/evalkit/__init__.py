"""Evaluation harness: fidelity metrics, baseline samplers, reference target
models, and the experiment runner.

Submodules `metrics`, `forest`, and `datasets` are re-exported here;
`experiments` must be imported explicitly (it depends on the explanation
pipeline and is kept out of this namespace to avoid import cycles).
"""

from .datasets import dataset_names, load_bundled
from .forest import CartTree, ForestConfig, ReferenceForest, fit_reference_forest
from .metrics import (
    coverage_precision,
    fidelity_classification,
    fidelity_regression,
    recall_faithfulness,
    urs_sample,
)

__all__ = [
    "CartTree",
    "ForestConfig",
    "ReferenceForest",
    "coverage_precision",
    "dataset_names",
    "fidelity_classification",
    "fidelity_regression",
    "fit_reference_forest",
    "load_bundled",
    "recall_faithfulness",
    "urs_sample",
]
