"""Exception types shared across the package."""


class FedsimError(Exception):
    """Base class for all fedsim errors."""


class ConfigurationError(FedsimError):
    """An experiment or component was configured inconsistently."""


class DataFormatError(FedsimError):
    """A dataset file is malformed.

    Carries the byte offset at which parsing failed when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InvalidArgumentError(FedsimError):
    """An operation received an argument outside its domain."""


class MetricError(FedsimError):
    """A metric is undefined for the given inputs."""


class DivergenceError(FedsimError):
    """Model parameters became non-finite during a run."""
