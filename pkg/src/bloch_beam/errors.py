"""Exception hierarchy.

Every failure maps onto one of two process exit codes: 2 for violated
assumptions and invalid input, 3 for numerical-accuracy or I/O failures.
"""


class BlochBeamError(Exception):
    exit_code = 3


class AssumptionViolation(BlochBeamError):
    """A standing hypothesis (simple band, nonvanishing velocity, simple closed orbit, ...) does not hold."""

    exit_code = 2


class SimplicityViolation(AssumptionViolation):
    """The requested band is (numerically) degenerate with a neighbour."""


class LevelSetNotFound(AssumptionViolation):
    pass


class OrbitNotClosed(AssumptionViolation):
    pass


class InvalidInput(BlochBeamError, ValueError):
    exit_code = 2


class DomainError(InvalidInput):
    """Evaluation point outside the region where an operation is defined."""


class AccuracyError(BlochBeamError):
    """A convergence or conservation check failed its tolerance."""

    exit_code = 3


class ConsistencyError(AccuracyError):
    """An internal identity that should hold by construction was violated."""


class OutputError(BlochBeamError):
    """Writing results failed."""

    exit_code = 3
