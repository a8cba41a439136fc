"""Local explanations for black-box tabular models.

The pipeline samples a synthetic neighborhood around a test point with a
conditional tabular GAN, labels it by querying the target model, fits a
linear model tree surrogate, and reads the explanation off the tree: the
decision path gives the context rule, the leaf coefficients give feature
attributions.
"""

from .explain import (
    Explanation,
    Neighborhood,
    SessionConfig,
    explain_point,
    generate_neighborhood,
    make_oracle,
    run_session,
    top_attributions,
    what_if,
)
from .tabular import Column, Dataset, Schema, load_csv

__version__ = "0.1.0"

__all__ = [
    "Column",
    "Dataset",
    "Explanation",
    "Neighborhood",
    "Schema",
    "SessionConfig",
    "explain_point",
    "generate_neighborhood",
    "load_csv",
    "make_oracle",
    "run_session",
    "top_attributions",
    "what_if",
    "__version__",
]
