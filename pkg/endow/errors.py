"""Exceptions raised by endow."""


class EndowError(Exception):
    """Base class for all solver, policy and simulation errors."""


class InvalidParams(EndowError, ValueError):
    """Market or auxiliary parameters violate their invariants."""


class DegenerateMerton(EndowError):
    """b1 <= 0: the frictionless problem has no finite certainty equivalent."""


class DomainViolation(EndowError):
    """(q, n) lies outside the admissible band (1-R)(l(q) - n) > 0."""


class StiffnessFailure(EndowError):
    """Step size underflowed before any terminating event."""

    def __init__(self, message: str, q_reached: float):
        super().__init__(message)
        self.q_reached = q_reached


class BracketFailure(EndowError):
    """The b3_crit predicate does not change sign over the bracket."""


class MonotonicityViolation(EndowError):
    """N is not strictly monotone on the stored grid."""


class IntegrationFailure(EndowError):
    """The h-ODE (or its reparameterisation) could not be integrated."""


class TailEstimateFailure(EndowError):
    """The improper integral's tail cannot be bounded within tolerance."""


class IllPosedValue(EndowError):
    """The value function is infinite (regime 4)."""


class NonpositiveBase(EndowError):
    """g - z g'/(1-R) <= 0, so the consumption formula is undefined."""


class StepRejection(EndowError):
    """Simulated wealth became non-positive even after halving dt."""


class RegimeMismatch(EndowError):
    """An operation was called for a regime it does not handle."""
