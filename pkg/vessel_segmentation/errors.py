"""
Purpose: Exception hierarchy for the vessel segmentation toolkit

Every failure that library code reports on purpose derives from `VesselSegError`,
so the CLI can turn it into a one-line diagnostic and a nonzero exit status.
Missing files are left as the builtin `FileNotFoundError`.
"""

from typing import List, Optional, Sequence


class VesselSegError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(VesselSegError, ValueError):
    """An argument violates an operation's precondition."""


class ShapeError(VesselSegError, ValueError):
    """Tensor or raster dimensions do not agree."""


class ConfigError(VesselSegError):
    """Malformed configuration file, line or override."""


class ImageDecodeError(VesselSegError):
    """A raster file could not be decoded."""

    def __init__(self, path: str, offset: Optional[int], reason: str):
        self.path = path
        self.offset = offset
        self.reason = reason
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"cannot decode {path}{where}: {reason}")


class ManifestParseError(VesselSegError):
    """A manifest line has the wrong shape."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {reason}")


class ManifestValidationError(VesselSegError):
    """A manifest references files that do not exist."""

    def __init__(self, missing: Sequence[str]):
        self.missing: List[str] = list(missing)
        listing = ", ".join(self.missing)
        super().__init__(f"{len(self.missing)} referenced file(s) missing: {listing}")


class CheckpointFormatError(VesselSegError):
    """The file is not a checkpoint (bad magic bytes)."""


class CheckpointVersionError(VesselSegError):
    """The checkpoint was written by a newer format version."""


class CheckpointLengthError(VesselSegError):
    """The checkpoint payload ends early."""


class TrainingDivergedError(VesselSegError):
    """The loss became NaN or infinite."""

    def __init__(self, epoch: int, batch_index: int, value: float):
        self.epoch = epoch
        self.batch_index = batch_index
        self.value = value
        super().__init__(
            f"non-finite loss {value} at epoch {epoch}, batch {batch_index}"
        )
