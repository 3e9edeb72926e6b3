"""Exception types raised across voxlink.

Every error derives from :class:`VoxlinkError` so callers (and the CLI) can
catch the whole family in one place.
"""

from __future__ import annotations


class VoxlinkError(Exception):
    """Base class for all voxlink errors."""


# volume I/O and geometry
class UnsupportedFormat(VoxlinkError, ValueError):
    pass


class CorruptHeader(VoxlinkError, ValueError):
    pass


class DimensionMismatch(VoxlinkError, ValueError):
    pass


class IoFailure(VoxlinkError, OSError):
    pass


class SingularTransform(VoxlinkError, ValueError):
    pass


class EmptyMask(VoxlinkError, ValueError):
    pass


class MissingMask(VoxlinkError, ValueError):
    pass


class ManifestError(VoxlinkError, ValueError):
    pass


# harmonization
class NoOverlap(VoxlinkError, ValueError):
    pass


class DidNotImprove(UserWarning):
    """Registration ended below its starting cost; the initializer is returned."""


class DegenerateIntensities(VoxlinkError, ValueError):
    pass


class EmptyMaskDerived(VoxlinkError, ValueError):
    pass


# similarity measures
class ShapeMismatch(VoxlinkError, ValueError):
    pass


class ZeroVector(VoxlinkError, ValueError):
    pass


class TooSmallForScales(VoxlinkError, ValueError):
    pass


class NonConvergentSqrt(VoxlinkError, ArithmeticError):
    pass


class UnknownMeasure(VoxlinkError, ValueError):
    pass


# thresholding / evaluation
class Unimodal(VoxlinkError, ValueError):
    pass


class TooFewScores(VoxlinkError, ValueError):
    pass


class NonConvergence(VoxlinkError, ArithmeticError):
    pass


class OneClassOnly(VoxlinkError, ValueError):
    pass
