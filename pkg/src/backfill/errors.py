"""Exception hierarchy; each class maps to a CLI exit code."""


class BackfillError(Exception):
    exit_code = 1


class ConfigError(BackfillError):
    exit_code = 2


class DataError(BackfillError):
    exit_code = 3


class NumericError(BackfillError):
    exit_code = 4
