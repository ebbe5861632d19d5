"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto process exit codes, so each class carries its own.
"""


class ChartlabError(Exception):
    exit_code = 1


class ConfigError(ChartlabError, ValueError):
    """Invalid parameters or configuration files."""

    exit_code = 2


class GeometryError(ChartlabError, ValueError):
    exit_code = 3


class DomainError(ChartlabError, ValueError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 3


class DataError(ChartlabError):
    """Missing, corrupt or mismatched files on disk."""

    exit_code = 3


class NumericalError(ChartlabError, ArithmeticError):
    exit_code = 4
