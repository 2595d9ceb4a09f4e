"""Advanced spectral clustering for mixed numeric and bag-of-words data."""

from ascluster.clustering import AscConfig, AscResult, run_asc
from ascluster.ingest import (
    ConstraintSets,
    NumericDataset,
    SyntheticSpec,
    TextDataset,
    generate_synthetic,
    load_constraints,
    load_numeric_csv,
    load_term_frequency,
)

__all__ = [
    "AscConfig",
    "AscResult",
    "ConstraintSets",
    "NumericDataset",
    "SyntheticSpec",
    "TextDataset",
    "generate_synthetic",
    "load_constraints",
    "load_numeric_csv",
    "load_term_frequency",
    "run_asc",
]

__version__ = "0.1.0"
