"""Numerical kernel: multivariate normal / t probabilities."""

from ._engine import (
    BACKEND,
    Budget,
    CorrelationMatrix,
    ProbResult,
    equicoordinate_cdf,
    mvn_cdf,
    mvn_rectangle,
    mvt_cdf,
)

__all__ = [
    "BACKEND",
    "Budget",
    "CorrelationMatrix",
    "ProbResult",
    "equicoordinate_cdf",
    "mvn_cdf",
    "mvn_rectangle",
    "mvt_cdf",
]
