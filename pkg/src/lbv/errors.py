"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class LbvError(Exception):
    exit_code = 1


class ValidationError(LbvError):
    """Bad input data, schema, or configuration."""

    exit_code = 2


class SchemaError(ValidationError):
    pass


class InventoryError(ValidationError):
    pass


class JoinError(ValidationError):
    pass


class EstimationError(LbvError):
    """Rank deficiency or other problems with a design matrix."""

    exit_code = 2


class ConvergenceError(LbvError):
    exit_code = 3

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class InsufficientDataError(LbvError):
    exit_code = 2
