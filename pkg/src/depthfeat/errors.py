"""Exception types shared across the package."""


class DepthFeatError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DepthFeatError):
    """An array argument has an incompatible shape."""


class InvalidDepthError(DepthFeatError):
    """A depth value required by an operation is missing or non-positive."""


class BehindCameraError(DepthFeatError):
    """A world point projects behind the camera plane."""


class InputTooSmallError(DepthFeatError):
    """An input raster is below the minimum size the network supports."""


class NoNegativeError(DepthFeatError):
    """No cell lies outside the exclusion radius of a correspondence."""


class SkipPair(DepthFeatError):
    """A training pair carries no usable supervision and should be skipped."""


class TrainingAborted(DepthFeatError):
    """Too many consecutive training pairs were skipped."""


class ConfigError(DepthFeatError):
    """A configuration file is malformed or fails validation."""


class IngestionError(DepthFeatError):
    """A dataset on disk is malformed or incomplete."""


class EmptySequenceError(DepthFeatError):
    """A loaded sequence contains no usable frames."""


class InsufficientPointsError(DepthFeatError):
    """Too few 2D-3D correspondences for pose estimation."""


class DegenerateConfigurationError(DepthFeatError):
    """The 3D points span too small a subspace for pose estimation."""


class LocalizationFailure(DepthFeatError):
    """No acceptable pose hypothesis was found."""
