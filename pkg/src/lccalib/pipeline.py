"""End-to-end extrinsic calibration: prepare, match, solve.

The run splits into three stages with very different costs.  ``prepare_scene``
does the heavy lifting (virtual-view rendering, segmentation, corner tracing)
and distills a scene into a handful of corner-carrying masks per view;
``match_scene`` turns those into cross-modal correspondences in microseconds;
the solvers then estimate one pose per scene and polish a joint pose over all
of them.  Experiment code that sweeps matching or solver parameters should
hold on to the prepared scenes and re-run only the cheap stages.

Scene failures are isolated: a scene that cannot be prepared, matched or
solved is reported with its reason while the remaining scenes calibrate.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import density
from .errors import (
    AllScenesFailed,
    CalibrationError,
    DegenerateContour,
    EmptyProjection,
    NoMasks,
    NoMatches,
    ZeroBaselineDensity,
)
from .geometry import Intrinsics, Pose
from .masks import Mask, extract_corners, segment_depth, synthetic_segment
from .matching import (
    SPATIAL,
    TEXTURAL,
    MatchConfig,
    match_corners,
    match_masks,
    with_view_depths,
)
from .optimize import (
    MultiSceneResult,
    OptimizerConfig,
    SceneBundle,
    multi_scene_solve,
    multi_view_solve,
    select_scene_subsets,
)
from .pointcloud import PointCloud, remove_isolated_points
from .projection import (
    DEPTH,
    INTENSITY,
    VirtualCamera,
    dilate_sparse,
    render,
    trace_source,
)

# Shade assigned to the nearest depth reading; farther readings fade toward
# _SHADE_FLOOR so that a depth image segments like an intensity image while
# exact zeros keep meaning "no reading".
_SHADE_FLOOR = 0.1


@dataclass
class PipelineSettings:
    """Every knob of the calibration run, with working defaults."""

    strategy: str = density.DENSITY_BALANCE
    n_intensity: int = 1  # manual-strategy view counts
    n_depth: int = 1
    sor_k: int = 8  # statistical outlier removal; 0 keeps the raw cloud
    sor_factor: float = 3.0
    n_max: int = density.DEFAULT_N_MAX
    sphere_radius: float = density.DEFAULT_SPHERE_RADIUS
    dilation_radius: int = 1
    segment_levels: int = 8
    min_mask_area: int = 25
    corner_epsilon: float = 4.0  # splat rasters are ragged; 4 px still keeps
    # every corner of our piecewise-planar silhouettes bit-exact
    border_margin: float = 2.0  # px; corners this close to the frame edge are
    # clip artifacts of the frame, not object geometry
    n_neighbors: int = 6
    patch_size: int = 7
    match: MatchConfig = field(default_factory=MatchConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    q_max: int = 2000
    s_max: int = 5
    initial_guess: Pose | None = None
    single_scene: bool = False
    seed: int = 0


@dataclass
class SceneInputs:
    """Raw per-scene sensor data as the pipeline expects it.

    ``image`` is grayscale in [0, 1]; ``depth_image`` is metric with 0 for
    pixels without a reading (pass None to disable the depth pathway).  When
    no dedicated depth masks exist the camera masks are reused for both
    pathways.
    """

    cloud: PointCloud
    image: np.ndarray
    camera_masks: list
    depth_image: np.ndarray | None = None
    depth_masks: list | None = None

    @classmethod
    def from_synthetic(cls, data) -> "SceneInputs":
        return cls(data.cloud, data.image, list(data.masks), data.depth_image,
                   list(data.depth_masks))


@dataclass
class PreparedView:
    """One virtual view reduced to its matchable content."""

    pathway: str  # TEXTURAL (intensity raster) or SPATIAL (depth raster)
    view_index: int
    camera: VirtualCamera
    masks: list  # corner-carrying masks, LiDAR tracebacks attached
    depth_range: tuple  # (min, max) positive splat depth, meters


@dataclass
class PreparedScene:
    """A scene after the expensive stage: views and camera-side masks."""

    scene_index: int
    inputs: SceneInputs
    plan: density.CameraPlan
    views: list
    camera_masks: dict  # pathway -> corner-carrying masks


@dataclass
class SceneOutcome:
    """Per-scene record of what happened during a calibration run."""

    scene_index: int
    status: str  # "ok" or "skipped"
    reason: str | None = None
    n_correspondences: int = 0
    hypothesis: object | None = None  # best single-scene Hypothesis
    bundle: SceneBundle | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class CalibrationOutcome:
    """Result of a full run: the pose plus per-scene bookkeeping."""

    pose: Pose
    scenes: list
    init_pose: Pose
    init_scene: int
    multi: MultiSceneResult | None = None  # None when the joint stage was skipped

    @property
    def solved_scenes(self) -> list:
        return [s for s in self.scenes if s.ok]


def look_at_orientation(direction) -> np.ndarray:
    """Rotation mapping LiDAR coordinates into a camera frame whose optical
    axis points along ``direction``, with image "up" following LiDAR +Z.

    Falls back to the front-facing orientation when the direction is
    degenerate (zero, or parallel to the LiDAR vertical).
    """
    d = np.asarray(direction, dtype=float).reshape(3)
    n = np.linalg.norm(d)
    if n < 1e-12:
        return density.FORWARD_FACING.copy()
    z = d / n
    x = np.cross(z, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([1.0, 0.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def depth_shading(depth: np.ndarray) -> np.ndarray:
    """Map a metric depth image to [0, 1] brightness, nearest reading = 1.

    Zeros (no reading) stay exactly 0 so segmentation keeps treating them as
    background; a constant positive field shades uniformly bright.
    """
    depth = np.asarray(depth, dtype=float)
    shade = np.zeros_like(depth)
    pos = depth > 0
    if not pos.any():
        return shade
    vals = depth[pos]
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo <= 0:
        shade[pos] = 1.0
        return shade
    shade[pos] = 1.0 - (1.0 - _SHADE_FLOOR) * (vals - lo) / (hi - lo)
    return shade


def _clone_mask(mask: Mask) -> Mask:
    out = Mask(mask.mask_id, mask.contour.copy(), mask.raster, mask.instance)
    return out


def _extract_all_corners(masks, image, settings: PipelineSettings):
    """Corner-extract every mask, dropping the ones too degenerate to carry
    corners; returns the survivors.

    Corners within ``border_margin`` of the frame edge are discarded: a
    silhouette cut off by the frame ends in junction points that belong to
    the frame, not the object, and their apparent position shifts with any
    viewpoint change.
    """
    kept = []
    h, w = image.shape
    margin = settings.border_margin
    for m in masks:
        try:
            corners = extract_corners(m, image, settings.corner_epsilon,
                                      settings.n_neighbors, settings.patch_size)
        except DegenerateContour:
            continue
        if margin > 0:
            corners = [c for c in corners
                       if margin <= c.position[0] <= w - 1 - margin
                       and margin <= c.position[1] <= h - 1 - margin]
            m.corners = corners
        kept.append(m)
    return kept


def _adaptive_radius(projection, floor: int, cap: int = 4) -> int:
    """Dilation radius sized to the raster's actual splat spacing.

    A thin cloud leaves gaps between splats that shred segmentation into
    fragments, so the fill window grows with the median nearest-neighbor
    pixel distance.  The cap keeps distinct silhouettes a few pixels apart
    from being dilated into one region.
    """
    occupied = np.argwhere(projection.occupancy)
    if len(occupied) < 2:
        return floor
    dists, _ = cKDTree(occupied).query(occupied, k=2)
    spacing = float(np.quantile(dists[:, 1], 0.9))
    return int(min(max(floor, math.ceil(0.75 * spacing)), cap))


def _build_view(cloud: PointCloud, pose: Pose, intrinsics: Intrinsics,
                channel: str, view_index: int,
                settings: PipelineSettings) -> PreparedView:
    """Render one virtual view and reduce it to corner-carrying masks.

    Raises:
        EmptyProjection: if the cloud misses the virtual image entirely.
    """
    camera = VirtualCamera(pose, intrinsics, channel)
    projection = render(cloud, camera)
    radius = _adaptive_radius(projection, settings.dilation_radius)
    filled = dilate_sparse(projection, radius)
    if channel == DEPTH:
        # depth rasters are smooth ramps: segment on discontinuities, but
        # sample corner texture from the shaded rendition so depth patches
        # compare against the camera-side shading on equal footing
        seg_image = depth_shading(filled)
        masks = segment_depth(filled, settings.min_mask_area)
    else:
        seg_image = filled
        masks = synthetic_segment(seg_image, settings.segment_levels,
                                  settings.min_mask_area)
    masks = _extract_all_corners(masks, seg_image, settings)
    for m in masks:
        for corner in m.corners:
            src = trace_source(projection, corner.position, radius=radius)
            if src >= 0:
                corner.lidar_point = cloud.points[src].copy()
    positive = projection.depth[projection.depth > 0]
    depth_range = (float(positive.min()), float(positive.max()))
    pathway = TEXTURAL if channel == INTENSITY else SPATIAL
    return PreparedView(pathway, view_index, camera, masks, depth_range)


def _make_plan(inputs: SceneInputs, camera_masks: dict,
               intrinsics: Intrinsics, orientation: np.ndarray,
               settings: PipelineSettings):
    """Choose view counts and poses; returns (plan, baseline views to reuse).

    The density strategy renders one baseline view per channel to measure
    the LiDAR side; those views are recycled as the first planned views when
    the plan keeps the origin pose, which it always does.
    """
    if settings.strategy == density.MANUAL:
        return density.manual_plan(settings.n_intensity, settings.n_depth,
                                   settings.sphere_radius, orientation), {}
    if settings.strategy == density.FOV_RATIO:
        from .projection import estimate_fov

        fov = estimate_fov(inputs.cloud)
        centroid = inputs.cloud.points.mean(axis=0)
        center_az = float(np.degrees(np.arctan2(centroid[1], centroid[0])))
        return density.plan_cameras_fov(fov, intrinsics,
                                        center_azimuth_deg=center_az,
                                        orientation=orientation), {}
    if settings.strategy == density.INITIAL_GUESS:
        if settings.initial_guess is None:
            raise ValueError("initial-guess planning needs an initial guess")
        t_cam = settings.initial_guess.camera_center()
        return density.plan_cameras_initial_guess(t_cam,
                                                  orientation=orientation), {}

    # density balance: measure both sides on baseline origin views
    origin = density.sphere_poses(1, settings.sphere_radius, orientation)[0]
    baselines = {}
    baseline_density = {}
    for channel in (INTENSITY, DEPTH):
        view = _build_view(inputs.cloud, origin, intrinsics, channel, 0,
                           settings)
        baselines[view.pathway] = view
        try:
            baseline_density[view.pathway] = density.feature_density(view.masks)
        except NoMasks:
            baseline_density[view.pathway] = density.FeatureDensity(0.0, 0.0)
    cam_rgb = density.feature_density(camera_masks[TEXTURAL])
    cam_depth = (density.feature_density(camera_masks[SPATIAL])
                 if camera_masks[SPATIAL] else cam_rgb)
    try:
        plan = density.plan_cameras_density(
            cam_rgb, cam_depth,
            baseline_density[TEXTURAL], baseline_density[SPATIAL],
            settings.n_max, settings.sphere_radius, orientation,
        )
    except ZeroBaselineDensity:
        plan = density.manual_plan(1, 1, settings.sphere_radius, orientation)
    return plan, baselines


def prepare_scene(inputs: SceneInputs, intrinsics: Intrinsics,
                  settings: PipelineSettings | None = None,
                  scene_index: int = 0) -> PreparedScene:
    """Expensive stage: camera-side corners, view planning, virtual views.

    Raises:
        NoMasks: no camera mask survives corner extraction.
        EmptyProjection: no virtual view sees the cloud.
    """
    settings = settings or PipelineSettings()
    if settings.sor_k > 0:
        cleaned = remove_isolated_points(inputs.cloud, k=settings.sor_k,
                                         factor=settings.sor_factor)
        inputs = replace(inputs, cloud=cleaned)
    cam_t = _extract_all_corners(list(inputs.camera_masks), inputs.image,
                                 settings)
    if not cam_t:
        raise NoMasks("scene %d: no usable camera mask" % scene_index)
    cam_s = []
    if inputs.depth_image is not None:
        shade = depth_shading(inputs.depth_image)
        source = (inputs.depth_masks if inputs.depth_masks is not None
                  else [_clone_mask(m) for m in inputs.camera_masks])
        cam_s = _extract_all_corners(list(source), shade, settings)
    camera_masks = {TEXTURAL: cam_t, SPATIAL: cam_s}

    if settings.initial_guess is not None:
        orientation = settings.initial_guess.R.copy()
    else:
        orientation = look_at_orientation(inputs.cloud.points.mean(axis=0))

    plan, baselines = _make_plan(inputs, camera_masks, intrinsics,
                                 orientation, settings)

    views = []
    channel_specs = [(INTENSITY, plan.intensity_poses())]
    if cam_s:
        channel_specs.append((DEPTH, plan.depth_poses()))
    for channel, poses in channel_specs:
        pathway = TEXTURAL if channel == INTENSITY else SPATIAL
        for i, pose in enumerate(poses):
            if i == 0 and pathway in baselines:
                views.append(baselines[pathway])
                continue
            try:
                views.append(_build_view(inputs.cloud, pose, intrinsics,
                                         channel, i, settings))
            except EmptyProjection:
                continue
    if not views:
        raise EmptyProjection("scene %d: no virtual view sees the cloud"
                              % scene_index)
    return PreparedScene(scene_index, inputs, plan, views, camera_masks)


def match_scene(prep: PreparedScene,
                settings: PipelineSettings | None = None) -> SceneBundle:
    """Cheap stage: cross-modal mask and corner matching for every view."""
    settings = settings or PipelineSettings()
    corr_sets = []
    for view in prep.views:
        cam_masks = prep.camera_masks.get(view.pathway, [])
        if not view.masks or not cam_masks:
            continue
        try:
            matches = match_masks(view.masks, cam_masks, settings.match)
        except NoMatches:
            continue
        corr = match_corners(view.masks, cam_masks, matches, view.pathway,
                             view.view_index, settings.match)
        if len(corr) == 0:
            continue
        corr_sets.append(with_view_depths(corr, view.camera.pose,
                                          *view.depth_range))
    return SceneBundle(prep.scene_index, corr_sets)


def _scene_rng(settings: PipelineSettings, scene_index: int):
    return np.random.default_rng([settings.seed, scene_index])


def _solve_scene(prep: PreparedScene, intrinsics: Intrinsics,
                 settings: PipelineSettings) -> SceneOutcome:
    """Match and solve one prepared scene into a SceneOutcome."""
    try:
        bundle = match_scene(prep, settings)
        best, _ = multi_view_solve(bundle, intrinsics, settings.optimizer,
                                   _scene_rng(settings, prep.scene_index))
    except CalibrationError as exc:
        return SceneOutcome(prep.scene_index, "skipped",
                            "%s: %s" % (type(exc).__name__, exc))
    n = len(bundle.pooled()[0])
    return SceneOutcome(prep.scene_index, "ok", None, n, best, bundle)


def _finish(outcomes, intrinsics: Intrinsics,
            settings: PipelineSettings) -> CalibrationOutcome:
    """Select the init scene and run (or skip) the joint stage."""
    outcomes = sorted(outcomes, key=lambda o: o.scene_index)
    solved = [o for o in outcomes if o.ok]
    if not solved:
        raise AllScenesFailed(
            "all %d scenes failed: %s" % (
                len(outcomes),
                "; ".join("scene %d %s" % (o.scene_index, o.reason)
                          for o in outcomes)))
    # initialize the joint stage from the scene whose best hypothesis has the
    # lowest mean loss per correspondence (raw scores scale with scene size)
    init = min(solved, key=lambda o: o.hypothesis.score / o.n_correspondences)
    if settings.single_scene or len(solved) == 1:
        return CalibrationOutcome(init.hypothesis.pose, outcomes,
                                  init.hypothesis.pose, init.scene_index,
                                  multi=None)
    bundles = [o.bundle for o in solved]
    select_scene_subsets(bundles, settings.q_max, settings.s_max)
    multi = multi_scene_solve(bundles, intrinsics, init.hypothesis.pose,
                              settings.optimizer)
    return CalibrationOutcome(multi.pose, outcomes, init.hypothesis.pose,
                              init.scene_index, multi=multi)


def calibrate_prepared(preps, intrinsics: Intrinsics,
                       settings: PipelineSettings | None = None,
                       failures: list | None = None) -> CalibrationOutcome:
    """Match and solve already-prepared scenes; see ``calibrate``.

    The entry point for parameter sweeps: preparation is the expensive
    stage, so sweeping matching or solver settings should reuse one list of
    PreparedScene objects across calls.  ``failures`` carries SceneOutcome
    records of scenes that never reached preparation, so the final report
    still lists them.
    """
    settings = settings or PipelineSettings()
    outcomes = list(failures or [])
    for prep in preps:
        outcomes.append(_solve_scene(prep, intrinsics, settings))
    return _finish(outcomes, intrinsics, settings)


def calibrate(scene_inputs, intrinsics: Intrinsics,
              settings: PipelineSettings | None = None) -> CalibrationOutcome:
    """Run the full pipeline over a list of SceneInputs.

    Scenes failing at any stage are skipped with a reason and the rest
    calibrate; each scene's prepared data is dropped before the next scene
    starts, so memory stays bounded by one scene's rasters.

    Raises:
        AllScenesFailed: when no scene yields a pose.
    """
    settings = settings or PipelineSettings()
    outcomes = []
    for idx, inputs in enumerate(scene_inputs):
        try:
            prep = prepare_scene(inputs, intrinsics, settings, idx)
        except CalibrationError as exc:
            outcomes.append(SceneOutcome(
                idx, "skipped", "%s: %s" % (type(exc).__name__, exc)))
            continue
        outcomes.append(_solve_scene(prep, intrinsics, settings))
    return _finish(outcomes, intrinsics, settings)
