"""Multiple-test design for overlapping populations under population-wise
error-rate control: strata bookkeeping, prevalence estimation, boundary
solving, diagnostics, and a Monte Carlo scenario engine."""

from . import control, design, mvdist, prevalence, sim, strata
from .errors import (
    BudgetExceededError,
    ConfigurationError,
    MatrixError,
    NumericalError,
    PwerError,
    SolverError,
    SpecificationError,
)

__version__ = "0.1.0"

__all__ = [
    "control",
    "design",
    "mvdist",
    "prevalence",
    "sim",
    "strata",
    "PwerError",
    "ConfigurationError",
    "NumericalError",
    "MatrixError",
    "BudgetExceededError",
    "SolverError",
    "SpecificationError",
    "__version__",
]
