"""Exception types raised by the ctwarp core and I/O layers."""


class CtwarpError(Exception):
    """Base class for every error raised by ctwarp."""


class InvalidCoordinate(CtwarpError, ValueError):
    """A sampling coordinate is NaN or infinite."""


class ShapeMismatch(CtwarpError, ValueError):
    """Two inputs do not live on compatible grids."""


class UnknownLabel(CtwarpError, ValueError):
    """A class id outside the label range of a segmentation."""


class DegenerateVolume(CtwarpError, ValueError):
    """A volume has fewer than two distinct values."""


class OutOfRange(CtwarpError, ValueError):
    """Values fall outside the range an operation accepts."""


class InvalidParams(CtwarpError, ValueError):
    """A parameter violates its constraint.

    ``key`` names the offending parameter when it comes from a config file.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NotEnoughLabels(CtwarpError, ValueError):
    """More labels requested than the label universe holds."""


class EmptyLabel(CtwarpError, ValueError):
    """A label has no voxels in one of the masks."""

    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class DegenerateSample(CtwarpError, ValueError):
    """Paired differences have zero variance."""


class EmptyMask(CtwarpError, ValueError):
    """A mask selects no voxels."""


class MalformedFile(CtwarpError):
    """A volume file cannot be parsed."""


class UnsupportedDatatype(CtwarpError):
    """A volume file stores a datatype ctwarp does not read."""


class UnsupportedOrientation(CtwarpError):
    """A volume file carries a rotated (non axis-aligned) orientation."""


class WriteError(CtwarpError):
    """A volume, report or log could not be written."""
