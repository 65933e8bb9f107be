"""Exception hierarchy shared by all solvers."""


class QviError(Exception):
    """Base class for errors raised by movingqvi."""


class DimensionError(QviError, ValueError):
    pass


class FactorizationError(QviError):
    """Gram matrix (or a reduced system) is not symmetric positive definite."""


class InfeasibleError(QviError, ValueError):
    pass


class ProjectionError(QviError):
    """The active-set projection did not terminate."""


class ConditionViolated(QviError):
    """No uniqueness condition holds for the given constants."""


class NotContraction(QviError):
    """The moving map is not a contraction, so I - Phi cannot be inverted by iteration."""


class NonContractive(QviError):
    """Projected fixed-point map is not a contraction (mu_B <= 0)."""


class NonCoercive(QviError):
    """A linear operator that must be coercive is not."""


class SingularLinearization(QviError):
    pass


class InvalidMultiplier(QviError, ValueError):
    """A multiplier is not an element of the normal cone."""


class RankDeficient(QviError):
    pass


class MaxIterations(QviError):
    """Iteration budget exhausted; ``report`` holds the last state, if any."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
