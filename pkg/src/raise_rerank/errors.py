"""Exception types shared across the package."""


class RaiseError(Exception):
    """Base class for all package errors."""


class DimensionError(RaiseError, ValueError):
    pass


class NumericError(RaiseError, ArithmeticError):
    pass


class ConfigError(RaiseError, ValueError):
    pass


class ParseError(RaiseError, ValueError):
    pass


class FormatError(RaiseError, ValueError):
    pass


class LookupFailure(RaiseError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class EmptyDatasetError(RaiseError, ValueError):
    pass


class CapacityError(RaiseError, ValueError):
    pass


class DataError(RaiseError, ValueError):
    pass


class DependencyError(RaiseError, RuntimeError):
    pass


class ExplanationUnavailable(RaiseError, ValueError):
    pass
