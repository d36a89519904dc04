"""Exception hierarchy with exit-code categories."""


class LabError(Exception):
    """Base class for every error raised by the lab."""

    exit_code = 1
    category = "error"


class ConfigError(LabError):
    """Invalid configuration, flags or grid."""

    exit_code = 2
    category = "config"


class DataError(LabError):
    """Input data that violates a structural requirement."""

    exit_code = 3
    category = "data"


class NumericError(LabError):
    """A computation that cannot produce a meaningful number."""

    exit_code = 4
    category = "numeric"


class InvalidGridError(ConfigError):
    pass


class RegimeLengthError(DataError):
    pass


class InvalidRegimeError(DataError):
    pass


class BoundaryNotRetainedError(DataError):
    """The regime's specified/unspecified boundary is not on the coarse grid."""


class NotFollowedError(DataError):
    pass


class EmptyPanelError(DataError):
    pass


class PanelFormatError(DataError):
    pass


class MalformedMdpError(DataError):
    pass


class ZeroWeightError(NumericError):
    pass


class EnumerationGuardError(NumericError):
    pass
