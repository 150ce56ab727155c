"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a precondition (bad CSV cell, missing outcome, ...)."""


class NumericalError(ArithmeticError):
    """A fit produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatVersionError(ValueError):
    """A serialized artifact has an unsupported ``format_version``."""
