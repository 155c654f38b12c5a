"""Exception hierarchy shared by every sstnet module."""


class SstError(Exception):
    """Base class for sstnet failures."""


class ShapeError(SstError, ValueError):
    """Operands have incompatible shapes."""


class ParameterError(SstError, ValueError):
    """A scalar or configuration argument is outside its valid domain."""


class ContractError(SstError, ValueError):
    """A documented precondition of an operation does not hold."""


class FormatError(SstError, ValueError):
    """A file does not follow its documented binary or text layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(SstError):
    """Input data is missing, empty, or unusable."""


class NumericalError(SstError, ArithmeticError):
    """A computation produced non-finite values."""


class ConfigError(SstError, ValueError):
    """A configuration file or flag could not be interpreted."""
