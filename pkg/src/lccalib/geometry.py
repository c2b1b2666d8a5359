"""Rigid transforms, pinhole projection and pose error metrics.

Coordinate conventions used throughout the engine:

* LiDAR frame: x forward, y left, z up (spinning-sensor convention).
* Camera frame: x right, y down, z forward (optical convention).
* An extrinsic ``Pose`` maps LiDAR-frame points into the camera frame:
  ``p_cam = R @ p_lidar + t``.
* Euler angles are intrinsic yaw-pitch-roll about Z, Y, X (applied in that
  order), stored in radians internally and reported in degrees.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth

_MIN_DEPTH = 1e-12


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) (closest in Frobenius norm)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return r


class Pose:
    """SE(3) transform with an orthonormal rotation and a translation.

    The constructor snaps the rotation onto SO(3); inputs further than
    ``1e-4`` from a proper rotation are rejected as corrupt.
    """

    __slots__ = ("R", "t")

    def __init__(self, R: np.ndarray, t: np.ndarray):
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        err = np.linalg.norm(R.T @ R - np.eye(3))
        if err > 1e-4 or np.linalg.det(R) < 0:
            raise ValueError("matrix is not a rotation (orthonormality off by %g)" % err)
        if err > 1e-12:
            R = nearest_rotation(R)
        R = R.copy()
        t = t.copy()
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def __setattr__(self, name, value):
        raise AttributeError("Pose is immutable")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_euler_deg(cls, yaw: float, pitch: float, roll: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(euler_deg_to_matrix(yaw, pitch, roll), np.asarray(t, dtype=float))

    def compose(self, other: "Pose") -> "Pose":
        """Return the transform applying ``other`` first, then ``self``."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.t

    def camera_center(self) -> np.ndarray:
        """Position of the camera origin expressed in the source frame."""
        return -self.R.T @ self.t

    def matrix_3x4(self) -> np.ndarray:
        return np.hstack([self.R, self.t[:, None]])

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            np.linalg.norm(self.R - other.R) < tol
            and np.linalg.norm(self.t - other.t) < tol
        )

    def __repr__(self):
        y, p, r = matrix_to_euler_deg(self.R)
        return "Pose(yaw=%.3f, pitch=%.3f, roll=%.3f, t=%s)" % (
            y, p, r, np.array2string(self.t, precision=4),
        )


@dataclass(frozen=True)
class EulerAngles:
    """Intrinsic Z-Y-X Euler decomposition of a rotation, in degrees."""

    yaw: float
    pitch: float
    roll: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll])


def euler_deg_to_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation matrix for intrinsic yaw (Z), pitch (Y), roll (X), degrees."""
    cy, sy = np.cos(np.radians(yaw)), np.sin(np.radians(yaw))
    cp, sp = np.cos(np.radians(pitch)), np.sin(np.radians(pitch))
    cr, sr = np.cos(np.radians(roll)), np.sin(np.radians(roll))
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def matrix_to_euler_deg(R: np.ndarray) -> EulerAngles:
    """Decompose a rotation into intrinsic Z-Y-X Euler angles (degrees).

    Well defined away from |pitch| = 90 deg; at the gimbal singularity the
    yaw/roll split is arbitrary and yaw is set to absorb it.
    """
    R = np.asarray(R, dtype=float)
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    pitch = np.arcsin(sp)
    if abs(sp) < 1.0 - 1e-12:
        yaw = np.arctan2(R[1, 0], R[0, 0])
        roll = np.arctan2(R[2, 1], R[2, 2])
    else:
        yaw = np.arctan2(-R[0, 1], R[1, 1])
        roll = 0.0
    return EulerAngles(np.degrees(yaw), np.degrees(pitch), np.degrees(roll))


def project_pinhole(point_cam: np.ndarray, cam: Intrinsics) -> np.ndarray:
    """Project one camera-frame point to pixel coordinates (u, v).

    Raises:
        NonPositiveDepth: if the point is on or behind the camera plane.
    """
    p = np.asarray(point_cam, dtype=float).reshape(3)
    if p[2] <= _MIN_DEPTH:
        raise NonPositiveDepth("point depth %g is not positive" % p[2])
    return np.array(
        [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy]
    )


def project_points(points_cam: np.ndarray, cam: Intrinsics):
    """Vectorized pinhole projection.

    Returns:
        (pixels (N, 2), depths (N,), valid (N,) bool). Pixels of invalid
        (non-positive-depth) points are filled with NaN instead of raising,
        so scoring loops can count them as failures explicitly.
    """
    p = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    z = p[:, 2]
    valid = z > _MIN_DEPTH
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p[:, 0] / z + cam.cx
        v = cam.fy * p[:, 1] / z + cam.cy
    pix = np.stack([u, v], axis=1)
    pix[~valid] = np.nan
    return pix, z, valid


def backproject_pixel(pixel, depth: float, cam: Intrinsics) -> np.ndarray:
    """Inverse of the pinhole map: pixel plus metric depth to a 3D point."""
    u, v = float(pixel[0]), float(pixel[1])
    return np.array(
        [(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth]
    )


def reprojection_error(pose: Pose, point_lidar, pixel, cam: Intrinsics) -> float:
    """Distance in pixels between a projected LiDAR point and its match."""
    proj = project_pinhole(pose.apply(np.asarray(point_lidar, dtype=float)), cam)
    return float(np.linalg.norm(proj - np.asarray(pixel, dtype=float)))


def _wrap_deg(a: np.ndarray) -> np.ndarray:
    """Wrap angle differences into (-180, 180]."""
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


def error_metrics(estimate: Pose, reference: Pose):
    """Rotation / translation error between two extrinsic estimates.

    Rotation error is the Euclidean norm of the (shortest-path) difference
    of the two Euler vectors, in degrees.  Translation error is the distance
    between the two camera centers expressed in the LiDAR frame, in meters,
    which keeps the metric symmetric in its arguments.
    """
    ea = matrix_to_euler_deg(estimate.R).as_vector()
    eb = matrix_to_euler_deg(reference.R).as_vector()
    e_r = float(np.linalg.norm(_wrap_deg(ea - eb)))
    e_t = float(np.linalg.norm(estimate.camera_center() - reference.camera_center()))
    return e_r, e_t
