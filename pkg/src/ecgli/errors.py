"""Exception taxonomy shared by the library and the CLI.

Exit codes are part of the CLI contract: 0 success, 2 configuration or
argument error, 3 numerical failure, 4 I/O or corrupt data.
"""


class EcgliError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InvalidArgumentError(EcgliError):
    """A caller-supplied value violates a documented precondition."""

    exit_code = 2


class ConfigError(InvalidArgumentError):
    """A run configuration file is missing, malformed, or inconsistent."""


class NumericFailureError(EcgliError):
    """An iterative numerical procedure failed to converge or blew up."""

    exit_code = 3


class CorruptDataError(EcgliError):
    """A data file is unreadable, truncated, or fails its checksum."""

    exit_code = 4
