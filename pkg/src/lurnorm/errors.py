"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class LurError(Exception):
    exit_code = 3


class ValidationError(LurError):
    """Input violates a stated axiom or precondition."""

    exit_code = 1

    def __init__(self, message, *, axiom=None, witness=None):
        super().__init__(message)
        self.axiom = axiom
        self.witness = witness


class TopologyError(ValidationError):
    pass


class MetricError(ValidationError):
    pass


class IsolationError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


class SeparationError(ValidationError):
    """No pair of disjoint open sets separates the two unions."""


class InstanceFormatError(ValidationError):
    def __init__(self, message, *, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedKind(LurError):
    exit_code = 2


class ConsistencyError(LurError):
    """Two routes to the same quantity disagree, or a proved statement failed."""

    exit_code = 3


class TruncationExhausted(ConsistencyError):
    pass


class NonConvergence(ConsistencyError):
    pass
