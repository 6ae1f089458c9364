"""
Error hierarchy for the normal-form toolkit

Every failure raised by the library carries the process exit code the CLI
should return:
  2  configuration / input validation
  3  numerical failure (resonance, solver, internal consistency)
  4  assumption-validation failure (well, frequencies, domain box)
"""

from typing import Any, Dict, List, Optional, Sequence


class BirkhoffError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = dict(details or {})

    def to_dict(self) -> Dict[str, Any]:
        return {
            'error': type(self).__name__,
            'exit_code': self.exit_code,
            'message': self.message,
            'details': self.details,
        }


class ConfigError(BirkhoffError, ValueError):
    """Invalid run configuration. Collects every violation found."""

    exit_code = 2

    def __init__(self, violations: Sequence[str]):
        if isinstance(violations, str):
            violations = [violations]
        self.violations: List[str] = list(violations)
        message = '; '.join(self.violations) if self.violations else 'invalid configuration'
        super().__init__(message, {'violations': self.violations})


class NumericalError(BirkhoffError):
    exit_code = 3


class JetDimensionError(NumericalError, ValueError):
    """Operands over different variable sets."""


class BoundOverflowError(NumericalError):
    """Requested order exceeds what the jet bound can represent."""


class ValuationError(NumericalError, ValueError):
    """Operand has too low a valuation (e.g. a generator of degree < 3)."""


class SingularJetError(NumericalError, ZeroDivisionError):
    """Jet with vanishing constant term passed to an inversion."""


class ResonanceError(NumericalError):
    """A homological divisor or frequency gap vanished.

    ``vector`` is the offending integer combination, sign-normalized so that
    its first nonzero entry is positive.
    """

    def __init__(self, message: str, vector: Optional[Sequence[int]] = None,
                 divisor: Optional[complex] = None):
        self.vector = normalize_sign(vector) if vector is not None else None
        self.divisor = divisor
        details: Dict[str, Any] = {}
        if self.vector is not None:
            details['vector'] = list(self.vector)
        if divisor is not None:
            details['divisor'] = abs(divisor)
        super().__init__(message, details)


class DegenerateFieldError(NumericalError):
    """Field matrix singular or otherwise unusable."""


class DegenerateWellError(NumericalError):
    """Quadratic form at the well is not positive definite."""


class ConvergenceError(NumericalError):
    """Iteration cap reached before the stopping criterion."""


class SolverError(NumericalError):
    """Eigensolver failure; ``residuals`` holds what was achieved."""

    def __init__(self, message: str, residuals: Optional[Sequence[float]] = None,
                 details: Optional[Dict[str, Any]] = None):
        self.residuals = [float(r) for r in residuals] if residuals is not None else []
        merged = dict(details or {})
        if self.residuals:
            merged['residuals'] = self.residuals
        super().__init__(message, merged)


class FitError(NumericalError):
    """Ill-conditioned least-squares fit."""


class InternalConsistencyError(NumericalError):
    """A construction that must succeed left a residual above tolerance."""


class AssumptionError(BirkhoffError):
    """Well / frequency / domain assumptions violated."""

    exit_code = 4

    def __init__(self, message: str, report: Optional[Dict[str, Any]] = None):
        super().__init__(message, {'report': report} if report else None)
        self.report = report


def normalize_sign(vector: Sequence[int]) -> tuple:
    vec = tuple(int(v) for v in vector)
    for v in vec:
        if v != 0:
            return vec if v > 0 else tuple(-x for x in vec)
    return vec
