"""Exception taxonomy for the calibration engine.

Every failure that callers are expected to handle gets its own class so the
pipeline can isolate faults per scene / per view instead of dying wholesale.
"""


class CalibrationError(Exception):
    """Base class for all engine-specific failures."""


class NonPositiveDepth(CalibrationError):
    """A point landed on or behind the camera plane (z <= 0)."""


class EmptyProjection(CalibrationError):
    """No point of the cloud fell inside the virtual image."""


class DegenerateCloud(CalibrationError):
    """Point cloud has no angular extent (all points share one bearing)."""


class NoMasks(CalibrationError):
    """A mask list was empty where at least one instance is required."""


class ZeroBaselineDensity(CalibrationError):
    """Baseline virtual view produced zero feature density."""


class DegenerateContour(CalibrationError):
    """Contour too small to carry corners (fewer than 3 survive)."""


class FormatError(CalibrationError):
    """A file did not parse; message carries line/field diagnostics."""


class NoMatches(CalibrationError):
    """No mask pair scored below the matching threshold."""


class DegenerateConfiguration(CalibrationError):
    """Correspondence geometry does not constrain a camera pose."""


class NonConvergence(CalibrationError):
    """Iterative refinement hit the iteration cap before the step tolerance."""


class InsufficientCorrespondences(CalibrationError):
    """Not enough (or not usable) correspondences to attempt a solve."""


class NoVisibleGeometry(CalibrationError):
    """Synthetic scene has no primitive face visible to both sensors."""


class AllScenesFailed(CalibrationError):
    """Every scene of a calibration run failed; nothing to estimate from."""


class ConstantDepthWarning(UserWarning):
    """Depth normalization saw a constant field and returned zeros."""
