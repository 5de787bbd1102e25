class FinslerLabError(Exception):
    """Base class for all errors raised by the workbench."""


class DivisionNearZeroError(FinslerLabError):
    pass


class DomainError(FinslerLabError):
    """A function was applied outside of its domain, for example the
    square root of a series with non-positive constant term."""


class OrderExceededError(FinslerLabError):
    """A derivative was requested beyond the truncation order of a
    series."""


class SingularMatrixError(FinslerLabError):
    pass


class SingularMetricError(SingularMatrixError):
    pass


class ExpressionSyntaxError(FinslerLabError):
    """Malformed expression text, located by a 1-based character
    position."""

    def __init__(self, position, message):
        super().__init__(f"{message} at position {position}")
        self.position = position
        self.message = message


class UnknownVariableError(FinslerLabError):

    def __init__(self, name, position=None):
        where = "" if position is None else f" at position {position}"
        super().__init__(f"Unknown variable '{name}'{where}")
        self.name = name
        self.position = position


class EvaluationError(FinslerLabError):
    """An engine error raised while evaluating an expression, with the
    position of the offending node attached."""

    def __init__(self, position, cause):
        super().__init__(f"{cause} (evaluating node at position {position})")
        self.position = position
        self.cause = cause


class ZeroSectionError(FinslerLabError):
    pass


class TargetZeroSectionError(ZeroSectionError):
    pass


class NotPositiveDefiniteError(FinslerLabError):
    pass


class SprayMismatchError(FinslerLabError):
    pass


class CrossCheckFailureError(FinslerLabError):
    pass


class ZeroVelocityError(FinslerLabError):
    pass


class StepSizeUnderflowError(FinslerLabError):
    pass


class DimensionMismatchError(FinslerLabError):
    pass


class SingularJacobianError(FinslerLabError):
    pass


class UnsupportedVarianceError(FinslerLabError):
    pass


class ScenarioError(FinslerLabError):
    """Invalid scenario file or configuration value."""
