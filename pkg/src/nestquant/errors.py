"""Exception hierarchy shared by every nestquant module."""


class NestQuantError(Exception):
    """Base class for all errors raised by this package."""


class InvalidBitwidthError(NestQuantError, ValueError):
    pass


class InvalidCombinationError(NestQuantError, ValueError):
    """Raised for an (n, h) pair that cannot be nested."""


class RangeError(NestQuantError, ValueError):
    """A value falls outside the integer range of its bitwidth."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ShapeError(NestQuantError, ValueError):
    pass


class DataError(NestQuantError, ValueError):
    """Non-finite or otherwise unusable numeric input."""


class FormatError(NestQuantError):
    """Malformed container, archive or wire frame."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    pass


class TruncationError(FormatError):
    def __init__(self, message, expected=None, actual=None, offset=None):
        super().__init__(message, offset=offset)
        self.expected = expected
        self.actual = actual


class CorruptionError(NestQuantError):
    """Recomposed weights left the n-bit range."""


class SwitchError(NestQuantError):
    """An illegal or failed full-bit/part-bit transition."""


class ModeError(NestQuantError):
    pass


class TrainingError(NestQuantError):
    pass


class UndefinedCorrelationError(NestQuantError, ValueError):
    pass


class UndefinedRatioError(NestQuantError, ZeroDivisionError):
    pass


class TransferError(NestQuantError):
    """Connection failure or an ERROR frame returned by the peer."""
