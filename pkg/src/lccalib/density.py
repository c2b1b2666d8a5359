"""Feature-density scene discrimination and virtual camera planning.

The number of virtual views the engine spends on a scene is driven by how
feature-rich the camera image is relative to a baseline LiDAR projection:
dense urban imagery earns several viewpoints, a sparse wall earns one.
Besides the density-balance rule there are two cheaper planning strategies
(field-of-view ratio and initial-guess spacing) plus a manual override.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoMasks, ZeroBaselineDensity
from .geometry import Intrinsics, Pose
from .masks import MIN_MASK_AREA, union_area
from .projection import FieldOfView

# Axis permutation taking the LiDAR frame (x fwd, y left, z up) to a camera
# frame (z fwd, x right, y down); the front-facing default orientation.
FORWARD_FACING = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

DENSITY_BALANCE = "density"
FOV_RATIO = "fov"
INITIAL_GUESS = "initial-guess"
MANUAL = "manual"

DEFAULT_SPHERE_RADIUS = 0.3  # meters
DEFAULT_N_MAX = 7


@dataclass(frozen=True)
class FeatureDensity:
    """Scalar feature-richness summary of one segmented image."""

    textural: float
    structural: float

    @property
    def total(self) -> float:
        return self.textural * self.structural


def feature_density(masks) -> FeatureDensity:
    """Density of a segmented image from its masks' corners and areas.

    The textural part grows with the (squared) total corner count; the
    structural part sums the log area ratios between the mask union and each
    mask, so one dominant region scores 0 and many comparable regions score
    high.  Natural logarithms throughout; masks below the ingestion area
    floor are ignored.

    Raises:
        NoMasks: if no usable mask remains.
    """
    usable = [m for m in masks if m.area >= MIN_MASK_AREA]
    if not usable:
        raise NoMasks("no mask with area >= %d px" % MIN_MASK_AREA)
    total_corners = sum(len(m.corners) for m in usable)
    textural = math.log(float(total_corners) ** 2) if total_corners > 0 else 0.0
    union = union_area(usable)
    structural = float(sum(math.log(union / m.area) for m in usable))
    return FeatureDensity(textural, structural)


@dataclass(frozen=True)
class CameraPlan:
    """How many virtual views to render per channel, and from where.

    ``poses`` is a shared prefix list: the intensity channel uses the first
    ``n_intensity`` entries and the depth channel the first ``n_depth``.
    """

    n_intensity: int
    n_depth: int
    poses: list = field(default_factory=list)
    strategy: str = MANUAL

    def __post_init__(self):
        if self.n_intensity < 1 or self.n_depth < 1:
            raise ValueError("camera counts must be >= 1")
        if len(self.poses) < max(self.n_intensity, self.n_depth):
            raise ValueError("not enough poses for the requested counts")

    def intensity_poses(self):
        return self.poses[: self.n_intensity]

    def depth_poses(self):
        return self.poses[: self.n_depth]


def _pose_at(center: np.ndarray, orientation: np.ndarray) -> Pose:
    return Pose(orientation, -orientation @ center)


def sphere_poses(n: int, radius: float = DEFAULT_SPHERE_RADIUS,
                 orientation: np.ndarray | None = None) -> list:
    """Front-facing viewpoints on nested spheres around the LiDAR origin.

    Consumed in a fixed order: origin, then +X, -X, +Y, -Y, +Z, -Z at the
    given radius; demand beyond 7 opens further axis shells at half the
    previous radius.
    """
    R = FORWARD_FACING if orientation is None else np.asarray(orientation, dtype=float)
    axes = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
        dtype=float,
    )
    centers = [np.zeros(3)]
    shell = float(radius)
    while len(centers) < n:
        centers.extend(shell * axes)
        shell /= 2.0
    return [_pose_at(c, R) for c in centers[:n]]


def plan_cameras_density(
    cam_rgb_density: FeatureDensity,
    cam_depth_density: FeatureDensity,
    lidar_intensity_density: FeatureDensity,
    lidar_depth_density: FeatureDensity,
    n_max: int = DEFAULT_N_MAX,
    radius: float = DEFAULT_SPHERE_RADIUS,
    orientation: np.ndarray | None = None,
) -> CameraPlan:
    """Balance camera-side density against the baseline virtual view.

    Each channel gets ``ceil(camera density / baseline density)`` views,
    clamped to [1, n_max].

    Raises:
        ZeroBaselineDensity: if a baseline density is zero; callers fall
            back to a single view per channel.
    """
    if lidar_intensity_density.total <= 0 or lidar_depth_density.total <= 0:
        raise ZeroBaselineDensity("baseline virtual view has zero feature density")
    n_i = math.ceil(cam_rgb_density.total / lidar_intensity_density.total)
    n_d = math.ceil(cam_depth_density.total / lidar_depth_density.total)
    n_i = min(max(n_i, 1), n_max)
    n_d = min(max(n_d, 1), n_max)
    poses = sphere_poses(max(n_i, n_d), radius, orientation)
    return CameraPlan(n_i, n_d, poses, DENSITY_BALANCE)


def plan_cameras_fov(
    lidar_fov: FieldOfView,
    cam: Intrinsics,
    rho_fov: float = 1.0,
    center_azimuth_deg: float = 0.0,
    orientation: np.ndarray | None = None,
) -> CameraPlan:
    """One view per camera-FoV-sized slice of the LiDAR's horizontal sweep.

    The camera's horizontal FoV comes from 2*atan(width / 2fx); the count is
    ``rho_fov`` times the ceiling FoV ratio, and the views fan out in yaw to
    cover the scanned range.
    """
    if rho_fov < 1:
        raise ValueError("rho_fov must be >= 1")
    cam_fov_deg = math.degrees(2.0 * math.atan(cam.width / (2.0 * cam.fx)))
    ratio = math.ceil(lidar_fov.horizontal / cam_fov_deg - 1e-9)
    n = max(1, math.ceil(rho_fov * ratio - 1e-9))
    R = FORWARD_FACING if orientation is None else np.asarray(orientation, dtype=float)
    span = lidar_fov.horizontal
    poses = []
    for i in range(n):
        yaw = center_azimuth_deg - span / 2.0 + span * (i + 0.5) / n
        c, s = np.cos(np.radians(yaw)), np.sin(np.radians(yaw))
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        poses.append(Pose(R @ rz.T, np.zeros(3)))
    return CameraPlan(n, n, poses, FOV_RATIO)


def plan_cameras_initial_guess(
    t_initial: np.ndarray,
    per_meter: float = 10.0,
    orientation: np.ndarray | None = None,
) -> CameraPlan:
    """Views spaced along the rough translation between the sensors.

    The count is the translation length times a per-meter density (at least
    one); viewpoints sit at even fractions of the segment from the LiDAR
    origin to the guessed camera position.
    """
    if per_meter <= 0:
        raise ValueError("per_meter must be positive")
    t = np.asarray(t_initial, dtype=float).reshape(3)
    length = float(np.linalg.norm(t))
    n = max(1, int(math.floor(per_meter * length + 0.5)))
    R = FORWARD_FACING if orientation is None else np.asarray(orientation, dtype=float)
    fractions = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.0])
    poses = [_pose_at(f * t, R) for f in fractions]
    return CameraPlan(n, n, poses, INITIAL_GUESS)


def manual_plan(n_intensity: int, n_depth: int,
                radius: float = DEFAULT_SPHERE_RADIUS,
                orientation: np.ndarray | None = None) -> CameraPlan:
    """Fixed view counts on the standard sphere layout."""
    poses = sphere_poses(max(n_intensity, n_depth), radius, orientation)
    return CameraPlan(n_intensity, n_depth, poses, MANUAL)
