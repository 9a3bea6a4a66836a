"""Deconfounded automated meta-analysis over risk-of-bias indicators."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AssociationLabels,
    BiasMatrix,
    Dataset,
    DimensionMismatch,
    DomainError,
    MCMAError,
    Simplex3,
    SyntheticParams,
    validate_dataset,
)
from .pipeline import MCMAConfig, run_basic, run_mcma  # noqa: E402

__all__ = [
    "AssociationLabels", "BiasMatrix", "Dataset", "DimensionMismatch", "DomainError", "MCMAError",
    "Simplex3", "SyntheticParams", "validate_dataset", "MCMAConfig", "run_basic", "run_mcma",
]
