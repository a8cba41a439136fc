import numpy as np
import pytest

from lmte.evalkit.datasets import make_two_moons
from lmte.evalkit.forest import ForestConfig, fit_reference_forest
from lmte.explain import ForestOracle
from lmte.tabular import apply_transforms, onehot_encoder


@pytest.fixture(scope="session")
def moons():
    """(features, labels) of the bundled 500-point two-moons dataset."""
    ds, y, _ = make_two_moons(500)
    return ds, y


@pytest.fixture(scope="session")
def moons_oracle(moons):
    """Reference forest trained on two-moons, behind the Oracle interface."""
    ds, y = moons
    enc = apply_transforms(onehot_encoder(ds.schema), ds)
    forest = fit_reference_forest(enc, y, ForestConfig(n_trees=60, seed=0))
    return ForestOracle(forest, ds.schema)


@pytest.fixture(scope="session")
def boundary_point(moons, moons_oracle):
    """The training row whose forest probability sits closest to 0.5."""
    ds, _ = moons
    probs = moons_oracle.predict_proba(ds)
    return ds.row(int(np.argmin(np.abs(probs - 0.5))))
