class DissimError(Exception):
    """Base class for all errors raised by dissimknn."""


class ConfigurationError(DissimError, ValueError):
    """Invalid parameter, preset name or option combination."""

    def __init__(self, message, option=None):
        super().__init__(message)
        self.option = option


class DataError(DissimError):
    """Input data cannot be turned into a usable dataset."""


class EmptyInputError(DataError):
    """The input contained no valid interaction records."""


class InsufficientDataError(DataError):
    """Not enough observations for the requested statistic."""
