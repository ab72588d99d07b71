"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a bound is defined."""


class ConfigError(ValueError):
    """A protocol, channel or sweep configuration violates a precondition."""


class EstimationError(RuntimeError):
    """A parameter-estimation linear program did not reach an optimum.

    ``status`` carries the solver status (``"infeasible"`` or ``"unbounded"``)
    and ``program`` names the offending LP.
    """

    def __init__(self, message, status, program):
        super().__init__(message)
        self.status = status
        self.program = program
