"""Exception hierarchy; each class maps to a CLI exit code."""


class DivselError(Exception):
    exit_code = 3


class ConfigError(DivselError, ValueError):
    exit_code = 1


class DataError(DivselError, ValueError):
    exit_code = 2


class InvariantViolation(DivselError, AssertionError):
    exit_code = 3
