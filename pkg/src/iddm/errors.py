"""Exception and warning types shared across the package."""


class IddmError(Exception):
    """Base class for package-specific errors."""


class UnsupportedFormatError(IddmError):
    """File format, bit depth, or colour type outside the supported set."""


class CorruptFileError(IddmError):
    """File claims a supported format but its stream cannot be decoded."""


class InvalidDepthError(IddmError):
    """Depth data violates its contract (negative or non-finite values)."""


class CheckpointError(IddmError):
    """Checkpoint is malformed or does not match the expected architecture."""


class TrainingDivergedError(IddmError):
    """Training loss became non-finite."""


class ConstantDepthWarning(UserWarning):
    """Depth map was constant; min-max normalization produced all zeros."""
