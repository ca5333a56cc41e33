"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument violates a documented precondition."""


class ConeExitError(RuntimeError):
    """An iterate's augmented spectrum left the admissible cone.

    Carries the offending flat node index (or tuple index) when known.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SolverError(RuntimeError):
    """A linear system could not be solved to the required residual."""


class NonContractionError(RuntimeError):
    """The contraction iteration failed to contract at the given scale."""

    def __init__(self, message, r=None, rate=None):
        super().__init__(message)
        self.r = r
        self.rate = rate


class OracleError(RuntimeError):
    """An oracle construction (shooting, gluing) failed."""


class PathError(RuntimeError):
    """A continuation path stalled; carries the last good tau."""

    def __init__(self, message, last_tau=None):
        super().__init__(message)
        self.last_tau = last_tau
