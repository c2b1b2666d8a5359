"""Targetless LiDAR-camera extrinsic calibration engine."""

from .geometry import (
    EulerAngles,
    Intrinsics,
    Pose,
    backproject_pixel,
    error_metrics,
    euler_deg_to_matrix,
    matrix_to_euler_deg,
    project_pinhole,
    reprojection_error,
)

__version__ = "0.1.0"

__all__ = [
    "EulerAngles",
    "Intrinsics",
    "Pose",
    "backproject_pixel",
    "error_metrics",
    "euler_deg_to_matrix",
    "matrix_to_euler_deg",
    "project_pinhole",
    "reprojection_error",
    "__version__",
]
