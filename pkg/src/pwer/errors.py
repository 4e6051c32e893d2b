"""Exception hierarchy.

Configuration-type errors (bad inputs, bad config files) and numerical
errors (integration budgets, solver failures) are kept on separate branches
so the CLI can map them to distinct exit codes.
"""


class PwerError(Exception):
    """Base class for all library errors."""


class ConfigurationError(PwerError):
    """Invalid user-supplied configuration or out-of-range parameter."""


class DegenerateModelError(ConfigurationError):
    """Biomarker model puts (numerically) no mass on the screened population."""


class EmptySampleError(ConfigurationError):
    """An estimator was asked to work from zero observations."""


class InfeasibleAdjustmentError(ConfigurationError):
    """Minimal-prevalence floor cannot be satisfied by rescaling."""


class UndefinedStatisticError(ConfigurationError):
    """A population has an empty treatment or control cell, so its test
    statistic does not exist."""


class VarianceInestimableError(ConfigurationError):
    """No cell holds two or more observations."""


class SpecificationError(ConfigurationError):
    """Inconsistent or incomplete model specification (missing cell means,
    wrong variance regime for the requested operation, ...)."""


class NumericalError(PwerError):
    """Base class for numerical failures."""


class MatrixError(NumericalError):
    """Matrix fails the correlation-matrix contract beyond clipping
    tolerances."""


class BudgetExceededError(NumericalError):
    """Integration could not reach the requested tolerance within budget.

    Carries the best estimate obtained so far in ``result``; when raised
    out of an error-rate evaluation, ``partial_report`` holds the strata
    already finished.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
        self.partial_report = None


class SolverError(NumericalError):
    """Root bracketing or bisection failed."""
