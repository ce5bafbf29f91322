"""Exception hierarchy shared by all cctvision modules."""


class CctError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(CctError):
    """Bad configuration or bad CLI input, detected before any work starts."""


class ShapeMismatchError(CctError):
    """Tensor shapes are incompatible for the requested operation."""


class GeometryError(CctError):
    """An image/feature-map geometry precondition failed (kernel too large,
    window exceeds input, a stage would collapse a dimension below 1, ...)."""


class ImageFormatError(CctError):
    """An image file could not be read or has an unsupported layout."""


class DatasetError(CctError):
    """Dataset folder layout or manifest problems."""


class CheckpointError(CctError):
    """Corrupt, truncated, or incompatible checkpoint file."""
