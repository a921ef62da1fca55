"""Exception types shared across the package."""


class DimensionMismatch(ValueError):
    """An input violates a declared dimension contract."""


class ConfigError(ValueError):
    """A configuration (name, file, or option set) is invalid.

    The message names the offending field or lists the valid choices.
    """


class EvaluationError(RuntimeError):
    """A numeric callback produced a non-finite value.

    Carries the offending evaluation point in ``point`` so that failures
    deep inside a solve can be reproduced.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point
