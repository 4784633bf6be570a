"""Error taxonomy shared across the package.

Structural problems raise; data-quality problems are returned as
:class:`~drex.features.Violation` values by ``validate_manifest``.
"""


class DrexError(Exception):
    """Base class for all errors raised by this package."""


class FeatureFormatError(DrexError):
    """Feature file has a bad magic, unsupported version, or malformed framing."""


class TruncatedPayloadError(FeatureFormatError):
    """Feature file ends mid-record; the message names the record index."""


class NonFiniteValueError(DrexError):
    """A NaN or infinity was found where only finite values are allowed."""


class DimensionMismatchError(DrexError):
    """Array length differs from the configured dimension."""


class ValidationError(DrexError):
    """A manifest violated its invariants at write time."""


class CheckpointError(DrexError):
    """Checkpoint file is corrupt or structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class UndefinedCorrelationError(DrexError):
    """Correlation requested on a degenerate (zero-variance) input."""


class MissingScoreError(DrexError):
    """An operation requiring ground-truth scores met a score-less record."""


class TrainingDivergedError(DrexError):
    """Training produced a non-finite loss; the message names the batch."""
