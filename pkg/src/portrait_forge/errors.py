"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PortraitForgeError(Exception):
    exit_code = 1


class ConfigError(PortraitForgeError):
    """Missing files, invalid flags or configuration values."""

    exit_code = 2


class DataError(PortraitForgeError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class DimensionError(DataError):
    pass


class BadMagic(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class SchemaError(DataError):
    """Raised by loaders; ``problems`` lists every failing field."""

    def __init__(self, what, problems):
        self.problems = list(problems)
        super().__init__(f"{what}: " + "; ".join(self.problems))


class NumericalError(PortraitForgeError, ArithmeticError):
    exit_code = 4
