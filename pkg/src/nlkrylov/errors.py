"""Exception types shared across the package."""


class UsageError(ValueError):
    """Invalid arguments: mismatched dimensions, bad configuration values."""


class BreakdownError(ArithmeticError):
    """A new direction lies (numerically) in the span of the current basis."""


class NumericalDomainError(ArithmeticError):
    """A function produced non-finite output or left its domain of definition.

    ``index`` is the flat index of the first offending entry, when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
