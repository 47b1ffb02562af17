"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input/schema problems exit 2,
numerical failures exit 3, selection failures exit 4.
"""


class FunmoeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FunmoeError):
    """Malformed inputs: bad shapes, schema violations, invalid arguments."""


class InvalidBasisError(InvalidInputError):
    """Basis construction impossible (e.g. dimension < degree + 1)."""


class DomainError(InvalidInputError):
    """Evaluation point outside the basis domain."""


class IdentifiabilityError(InvalidInputError):
    """Basis dimensions violate the p <= r and q <= r constraint."""


class UndefinedMetricError(InvalidInputError):
    """A metric is undefined for the given data (e.g. zero denominator)."""


class NumericalError(FunmoeError):
    """Numerical failure during fitting or linear algebra."""


class DegenerateDerivativeError(NumericalError):
    """Finite-difference matrix is singular beyond repair."""


class EmptyComponentError(NumericalError):
    """A mixture component lost all its responsibility mass."""


class NrFailureError(NumericalError):
    """Newton-Raphson could not produce an ascent step."""


class NumericUnderflowError(NumericalError):
    """All component densities underflowed for some observation."""


class LpInfeasibleError(NumericalError):
    """Linear program infeasible (after any allowed bound relaxation)."""


class GatingUpdateError(NumericalError):
    """Gating network update failed and no fallback applies."""


class FitFailureError(NumericalError):
    """Every EM restart failed."""


class SelectionFailureError(FunmoeError):
    """Every candidate in a model-selection grid failed to fit."""
