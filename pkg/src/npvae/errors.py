"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError and its subclasses
exit 1, FormatError and I/O problems exit 2.
"""


class NpvaeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(NpvaeError, ValueError):
    """Bad configuration, unusable inputs, or an unsupported request."""


class DimensionError(ValidationError):
    """Operand shapes do not line up. The message names both shapes."""


class DegenerateBatchError(ValidationError):
    """A batch with fewer than two rows where leave-one-out weights are needed."""


class NonFiniteError(ValidationError):
    """A loss or gradient came out NaN/Inf. The message names the culprit."""


class TrainingAborted(NpvaeError):
    """Training stopped mid-run; carries the epoch/batch position."""


class FormatError(NpvaeError):
    """A file does not follow its binary or text grammar."""


class BadMagicError(FormatError):
    """Leading magic bytes are wrong for the expected container."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload; message names the offset."""


class DimensionOverflowError(FormatError):
    """Declared dimensions multiply out to an implausible element count."""


class UnknownSectionError(FormatError):
    """A checkpoint carries a section name this version does not define."""


class ChecksumError(FormatError):
    """A checkpoint section's stored CRC32 does not match its payload."""


class VersionError(FormatError):
    """A checkpoint declares a container version this code cannot read."""
