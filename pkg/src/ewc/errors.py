"""Exception hierarchy. Each category maps to a distinct CLI exit code."""


class EWCError(Exception):
    exit_code = 1


class ConfigError(EWCError, ValueError):
    """Invalid configuration, policy name, or parameter combination."""

    exit_code = 2


class DataError(EWCError):
    """Missing or malformed dataset / model files."""

    exit_code = 3


class ReportIOError(EWCError, OSError):
    """Failure while writing report artifacts."""

    exit_code = 4


class TooFewUsersError(ConfigError):
    """More clusters requested than there are users to cluster."""

    exit_code = 5
