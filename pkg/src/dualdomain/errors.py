"""Exception types shared across the package.

Validation failures (bad arguments, inconsistent shapes) raise
:class:`ValidationError`; file-format problems raise the dedicated parse
errors so callers can map them to distinct exit codes.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class CoverageError(ValidationError):
    """A patch grid leaves at least one pixel uncovered."""


class PgmError(ValueError):
    """Base class for binary graymap parse/write failures."""


class PgmHeaderError(PgmError):
    """Malformed or non-P5 header."""


class PgmUnsupportedError(PgmError):
    """Valid PNM header but an unsupported variant (e.g. 16-bit depth)."""


class PgmTruncatedError(PgmError):
    """Pixel payload shorter than the header promises."""


class CheckpointError(ValueError):
    """Base class for model checkpoint format failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version not supported by this build."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint ends before all declared tensors were read."""


class TrainingDivergedError(RuntimeError):
    """Training hit a non-finite loss; message names the offending batch."""
