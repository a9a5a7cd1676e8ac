"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ValidationError -> 2 (usage),
OSError -> 3 (I/O), FormatError -> 4 (format), NumericError -> 5.
"""


class LatentCodecError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LatentCodecError, ValueError):
    """A precondition on arguments or configuration was violated."""


class FormatError(LatentCodecError):
    """A serialized artifact could not be parsed or is inconsistent."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedFormatError(FormatError):
    """Recognized file, but an unsupported version/dtype/field value."""


class TruncatedPayloadError(FormatError):
    """Declared payload extends past the end of the data."""


class CorruptPayloadError(FormatError):
    """Payload length or content inconsistent with the header."""


class ChecksumError(FormatError):
    """Trailing CRC does not match the stored bytes."""


class LayoutMismatchError(FormatError):
    """Latent/container layout does not match the model it is used with."""


class NumericError(LatentCodecError):
    """Numeric or degenerate-data failure."""


class NonFiniteValueError(NumericError):
    """A NaN or infinity appeared where finite values are required."""


class DegenerateDataError(NumericError):
    """Input data has no usable spread (constant values, empty range)."""


class SizeOverflowError(NumericError):
    """A computed byte size exceeds the supported range."""
