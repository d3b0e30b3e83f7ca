"""Exception hierarchy shared across the package."""


class OptAggError(Exception):
    """Base class for all package errors."""


class InvalidInput(OptAggError, ValueError):
    pass


class Unsupported(OptAggError):
    pass


class ModelUnavailable(OptAggError):
    """An external model process could not be reached or died."""


class ProtocolError(OptAggError):
    """An external model sent a reply that violates the wire protocol."""


class DegenerateCorrelation(OptAggError):
    """Pearson correlation is undefined because one series has zero variance."""


class FormatError(OptAggError):
    """A file on disk does not match its declared format.

    ``offset`` is the byte offset at which the problem was detected.
    """

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(OptAggError):
    pass
