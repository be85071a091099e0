"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class OVLWError(Exception):
    exit_code = 1


class ConfigError(OVLWError, ValueError):
    """Invalid configuration or hyperparameters."""

    exit_code = 2


class DataError(OVLWError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class InvalidInputError(DataError):
    pass


class FormatError(DataError):
    """A file failed to parse. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class EncodingError(DataError):
    def __init__(self, failures):
        self.failures = failures
        names = ", ".join(repr(p) for p, _ in failures)
        super().__init__(f"text encoder failed on {len(failures)} phrase(s): {names}")


class NumericalError(OVLWError, ArithmeticError):
    exit_code = 4
