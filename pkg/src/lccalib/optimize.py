"""Robust pose estimation from cross-modal correspondences.

The solver stack has three tiers.  ``solve_pnp`` recovers a single pose from
point-pixel pairs: closed-form initialization (DLT, or a plane-homography
decomposition when the points are coplanar) followed by damped Gauss-Newton
refinement on an SE(3) chart.  ``multi_view_solve`` is the robust layer: it
draws many small random subsets of a scene's pooled correspondences, solves
each, and scores every candidate pose on all correspondences under a
depth-aware saturating loss, so gross mismatches cannot dominate.
``multi_scene_solve`` then polishes one pose jointly over the reliable
subsets of several scenes.

The loss for a correspondence with reprojection error eps and normalized
depth d' is

    G(eps) = eps * (e - K) / (H + eps),
    K = exp(-(d' - mean d')^2 / (2 * mean_depth^2)),

which grows linearly for small errors but saturates below Euler's number e,
and discounts points whose virtual-view depth is unusual for the scene.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateConfiguration,
    InsufficientCorrespondences,
    NonConvergence,
)
from .geometry import Intrinsics, Pose, nearest_rotation

E = math.e
_MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class RobustLossParams:
    """Scene-level constants entering the saturating loss."""

    image_height: float  # H, pixels
    mean_norm_depth: float  # average normalized virtual-view depth
    mean_true_depth: float  # average camera-frame depth under the hypothesis

    def __post_init__(self):
        if self.image_height <= 0:
            raise ValueError("image height must be positive")


def depth_gate(d_norm, params: RobustLossParams):
    """K: closeness of a correspondence's depth to the scene average, (0, 1]."""
    spread = max(params.mean_true_depth, _MIN_DEPTH)
    d = np.asarray(d_norm, dtype=float)
    return np.exp(-((d - params.mean_norm_depth) ** 2) / (2.0 * spread * spread))


def g_loss(eps, d_norm, params: RobustLossParams):
    """Saturating reprojection loss; see module docstring."""
    eps = np.asarray(eps, dtype=float)
    k = depth_gate(d_norm, params)
    return eps * (E - k) / (params.image_height + eps)


def g_loss_saturated(d_norm, params: RobustLossParams):
    """The eps -> infinity limit, charged to points behind the camera."""
    return E - depth_gate(d_norm, params)


def irls_weights(eps, d_norm, params: RobustLossParams):
    """Per-residual weights making weighted least squares follow the G loss.

    With rho(eps) = c*eps/(H+eps), the influence-matching weight is
    w = rho'(eps)/eps = c*H / ((H+eps)^2 * eps), floored at eps = 1e-6 px.
    """
    eps = np.asarray(eps, dtype=float)
    c = E - depth_gate(d_norm, params)
    h = params.image_height
    return c * h / ((h + eps) ** 2 * np.maximum(eps, 1e-6))


# ---------------------------------------------------------------------------
# SE(3) chart and Jacobian


def apply_increment(pose: Pose, delta: np.ndarray) -> Pose:
    """Left-compose a 6-vector (rotation-vector, translation) step."""
    delta = np.asarray(delta, dtype=float).reshape(6)
    rot = Rotation.from_rotvec(delta[:3]).as_matrix()
    return Pose(rot @ pose.R, rot @ pose.t + delta[3:])


def _skew(v):
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def residual_jacobian(pose: Pose, points: np.ndarray, intrinsics: Intrinsics):
    """Residuals r = projection - observation need pixels; this returns the
    camera-frame points q, the projected pixels, and d(pixel)/d(delta) under
    the left-composed chart: d(q)/d(omega) = -[q]x, d(q)/d(t) = I."""
    q = pose.apply(points)
    z = q[:, 2]
    zsafe = np.where(np.abs(z) < _MIN_DEPTH, _MIN_DEPTH, z)
    px = np.stack(
        [
            intrinsics.fx * q[:, 0] / zsafe + intrinsics.cx,
            intrinsics.fy * q[:, 1] / zsafe + intrinsics.cy,
        ],
        axis=1,
    )
    n = len(points)
    jac = np.zeros((n, 2, 6))
    inv_z = 1.0 / zsafe
    a = np.zeros((n, 2, 3))
    a[:, 0, 0] = intrinsics.fx * inv_z
    a[:, 0, 2] = -intrinsics.fx * q[:, 0] * inv_z * inv_z
    a[:, 1, 1] = intrinsics.fy * inv_z
    a[:, 1, 2] = -intrinsics.fy * q[:, 1] * inv_z * inv_z
    for i in range(n):
        jac[i, :, :3] = a[i] @ (-_skew(q[i]))
        jac[i, :, 3:] = a[i]
    return q, px, jac


# ---------------------------------------------------------------------------
# closed-form initialization


def _dlt_pose(points, norm_pixels) -> Pose:
    """Direct linear transform for a full [R|t], needs >= 6 points."""
    centroid = points.mean(axis=0)
    spread = float(np.abs(points - centroid).mean()) or 1.0
    pn = (points - centroid) / spread
    n = len(points)
    a = np.zeros((2 * n, 12))
    ph = np.hstack([pn, np.ones((n, 1))])
    a[0::2, 0:4] = ph
    a[0::2, 8:12] = -norm_pixels[:, :1] * ph
    a[1::2, 4:8] = ph
    a[1::2, 8:12] = -norm_pixels[:, 1:2] * ph
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-12 * max(sv[0], 1.0):
        raise DegenerateConfiguration("DLT system is rank deficient")
    m = vt[-1].reshape(3, 4)
    # undo the 3D conditioning, then normalize scale and sign
    rot_raw = m[:, :3] / spread
    t_raw = m[:, 3] - rot_raw @ centroid
    scale = np.linalg.norm(rot_raw[2])
    if scale < 1e-12:
        raise DegenerateConfiguration("degenerate DLT solution")
    rot_raw /= scale
    t_raw /= scale
    depths = points @ rot_raw[2] + t_raw[2]
    if np.mean(depths > 0) < 0.5:
        rot_raw, t_raw = -rot_raw, -t_raw
    return Pose(nearest_rotation(rot_raw), t_raw)


def _planar_pose(points, norm_pixels, basis, centroid) -> Pose:
    """Homography decomposition for coplanar points, needs >= 4."""
    w = (points - centroid) @ basis  # (n, 2) plane coordinates
    n = len(points)
    a = np.zeros((2 * n, 9))
    wh = np.hstack([w, np.ones((n, 1))])
    a[0::2, 0:3] = wh
    a[0::2, 6:9] = -norm_pixels[:, :1] * wh
    a[1::2, 3:6] = wh
    a[1::2, 6:9] = -norm_pixels[:, 1:2] * wh
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-12 * max(sv[0], 1.0):
        raise DegenerateConfiguration("homography system is rank deficient")
    h = vt[-1].reshape(3, 3)
    scale = 0.5 * (np.linalg.norm(h[:, 0]) + np.linalg.norm(h[:, 1]))
    if scale < 1e-12:
        raise DegenerateConfiguration("degenerate homography")
    h = h / scale
    if h[2, 2] < 0:  # centroid of the plane must sit in front of the camera
        h = -h
    r3 = np.cross(h[:, 0], h[:, 1])
    rot_plane = nearest_rotation(np.column_stack([h[:, 0], h[:, 1], r3]))
    normal = np.cross(basis[:, 0], basis[:, 1])
    frame = np.column_stack([basis, normal])
    rot = rot_plane @ frame.T
    t = h[:, 2] - rot @ centroid
    return Pose(nearest_rotation(rot), t)


def _shape_analysis(points):
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    extent = sv[0] if sv[0] > 0 else 1.0
    _, _, vt = np.linalg.svd(centered)
    return sv / extent, vt


def solve_pnp(points, pixels, intrinsics: Intrinsics,
              init: Pose | None = None, max_iter: int = 100,
              grad_tol: float = 1e-10) -> Pose:
    """Pose from 3D-2D correspondences, unweighted least squares.

    Initialization picks the right closed form for the point geometry: a
    plane homography when the cloud is flat (relative thickness < 1e-3,
    needs >= 4 points), otherwise a 3D DLT (needs >= 6).  Pass ``init`` to
    skip the closed form.  Refinement is damped Gauss-Newton, converging at
    gradient norm below ``grad_tol`` (or a vanishing accepted step).

    Raises:
        DegenerateConfiguration: collinear points, or too few for the
            applicable initializer.
        NonConvergence: iteration budget exhausted.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(points) != len(pixels):
        raise ValueError("points and pixels must align")
    if len(points) < 4:
        raise DegenerateConfiguration("need at least 4 correspondences")

    if init is None:
        rel_sv, vt = _shape_analysis(points)
        if rel_sv[1] < 1e-6:
            raise DegenerateConfiguration("points are collinear")
        norm_px = np.stack(
            [
                (pixels[:, 0] - intrinsics.cx) / intrinsics.fx,
                (pixels[:, 1] - intrinsics.cy) / intrinsics.fy,
            ],
            axis=1,
        )
        if rel_sv[2] < 1e-3:
            init = _planar_pose(points, norm_px, vt[:2].T, points.mean(axis=0))
        elif len(points) >= 6:
            init = _dlt_pose(points, norm_px)
        else:
            raise DegenerateConfiguration(
                "%d non-planar points need an initial pose" % len(points)
            )

    pose, converged, _ = _refine_pose(
        points, pixels, intrinsics, init, weights=None,
        max_iter=max_iter, grad_tol=grad_tol
    )
    if not converged:
        raise NonConvergence("PnP refinement did not converge")
    return pose


def _refine_pose(points, pixels, intrinsics, pose, weights=None,
                 max_iter=100, grad_tol=1e-10, step_tol=1e-12):
    """Damped least-squares refinement; returns (pose, converged, iters).

    The damping parameter scales with the largest normal-matrix diagonal so
    behaviour is invariant to duplicating the data set.
    """
    w = None if weights is None else np.asarray(weights, dtype=float)
    lam_factor = 1e-3
    for it in range(max_iter):
        q, px, jac = residual_jacobian(pose, points, intrinsics)
        res = px - pixels
        valid = q[:, 2] > _MIN_DEPTH
        if not np.any(valid):
            return pose, False, it
        scale = valid.astype(float) if w is None else w * valid
        jw = jac * scale[:, None, None]
        jtj = np.einsum("nij,nik->jk", jw, jac)
        grad = np.einsum("nij,ni->j", jw, res)
        if np.linalg.norm(grad) < grad_tol:
            return pose, True, it
        cost = float(np.sum(scale * np.sum(res * res, axis=1)))
        diag_max = max(float(np.max(np.diag(jtj))), 1e-12)
        accepted = False
        for _ in range(25):
            lhs = jtj + lam_factor * diag_max * np.eye(6)
            try:
                delta = np.linalg.solve(lhs, -grad)
            except np.linalg.LinAlgError:
                lam_factor *= 10.0
                continue
            trial = apply_increment(pose, delta)
            tq, tpx, _ = residual_jacobian(trial, points, intrinsics)
            tres = tpx - pixels
            tvalid = tq[:, 2] > _MIN_DEPTH
            tscale = tvalid.astype(float) if w is None else w * tvalid
            tcost = float(np.sum(tscale * np.sum(tres * tres, axis=1)))
            if tcost < cost:
                pose = trial
                lam_factor = max(lam_factor / 10.0, 1e-12)
                accepted = True
                if (np.linalg.norm(delta) < step_tol
                        or cost - tcost <= 1e-14 * max(cost, 1e-12)):
                    return pose, True, it + 1
                break
            lam_factor *= 10.0
        if not accepted:
            # no descent direction exists in double precision: this is the
            # numerical minimum even if the gradient test was not reached
            return pose, True, it + 1
    return pose, False, max_iter


# ---------------------------------------------------------------------------
# hypothesis layer


@dataclass(frozen=True)
class Hypothesis:
    """A candidate pose, the correspondence subset that produced it, and its
    total G-loss over the whole scene (lower is better)."""

    pose: Pose
    support: tuple  # indices into the scene's pooled correspondences
    score: float

    def __post_init__(self):
        if len(self.support) < 4:
            raise ValueError("hypothesis support needs >= 4 correspondences")


@dataclass
class SceneBundle:
    """Everything the solvers need from one scene."""

    scene_index: int
    corr_sets: list  # CorrespondenceSet, all views and pathways
    hypotheses: list = field(default_factory=list)  # ranked, best first
    subset: np.ndarray | None = None  # S_t: pooled indices chosen for joint solve

    def pooled(self):
        """Concatenated (points, pixels, normalized depths) across views."""
        pts, pix, nd = [], [], []
        for cs in self.corr_sets:
            if len(cs) == 0:
                continue
            pts.append(cs.points)
            pix.append(cs.pixels)
            if cs.norm_depths is None:
                nd.append(np.full(len(cs), 0.5))
            else:
                nd.append(np.asarray(cs.norm_depths, dtype=float))
        if not pts:
            return np.zeros((0, 3)), np.zeros((0, 2)), np.zeros(0)
        return np.vstack(pts), np.vstack(pix), np.concatenate(nd)


@dataclass
class OptimizerConfig:
    n_hypotheses: int = 200
    subset_size: int = 6
    inlier_px: float = 3.0
    image_height: float | None = None  # defaults to the intrinsics' height
    max_iter: int = 100
    seed: int = 0


def score_pose(pose: Pose, points, pixels, norm_depths,
               intrinsics: Intrinsics, image_height: float) -> float:
    """Total G-loss of a pose over a correspondence pool.

    Points mapped behind the camera are charged the saturated loss, so a
    pose that flips geometry backwards can never look attractive.
    """
    q = pose.apply(points)
    z = q[:, 2]
    valid = z > _MIN_DEPTH
    mean_depth = float(z[valid].mean()) if np.any(valid) else 1.0
    params = RobustLossParams(image_height, float(np.mean(norm_depths)),
                              mean_depth)
    total = float(np.sum(g_loss_saturated(norm_depths[~valid], params)))
    if np.any(valid):
        px = np.stack(
            [
                intrinsics.fx * q[valid, 0] / z[valid] + intrinsics.cx,
                intrinsics.fy * q[valid, 1] / z[valid] + intrinsics.cy,
            ],
            axis=1,
        )
        eps = np.linalg.norm(px - pixels[valid], axis=1)
        total += float(np.sum(g_loss(eps, norm_depths[valid], params)))
    return total


def reprojection_residuals(pose: Pose, points, pixels, intrinsics):
    """Per-correspondence pixel error and camera depth (inf when behind)."""
    q = pose.apply(points)
    z = q[:, 2]
    valid = z > _MIN_DEPTH
    eps = np.full(len(points), np.inf)
    if np.any(valid):
        px = np.stack(
            [
                intrinsics.fx * q[valid, 0] / z[valid] + intrinsics.cx,
                intrinsics.fy * q[valid, 1] / z[valid] + intrinsics.cy,
            ],
            axis=1,
        )
        eps[valid] = np.linalg.norm(px - pixels[valid], axis=1)
    return eps, z


def multi_view_solve(scene: SceneBundle, intrinsics: Intrinsics,
                     config: OptimizerConfig | None = None,
                     rng: np.random.Generator | None = None):
    """Robust pose search over one scene's pooled correspondences.

    Randomly sampled small subsets are solved with PnP and every resulting
    candidate is scored on all correspondences; the best candidate is then
    refined on its inliers with G-weighted iterative least squares.  The
    full ranking is stored on the scene (``scene.hypotheses``) and returned.

    Raises:
        InsufficientCorrespondences: fewer than 4 pooled correspondences, or
            no sampled subset admitted a PnP solution.
    """
    config = config or OptimizerConfig()
    rng = rng or np.random.default_rng(config.seed)
    points, pixels, norm_depths = scene.pooled()
    n = len(points)
    if n < 4:
        raise InsufficientCorrespondences(
            "scene %d pooled only %d correspondences" % (scene.scene_index, n)
        )
    height = config.image_height or float(intrinsics.height)

    subsets = []
    if n <= config.subset_size:
        subsets.append(np.arange(n))
    else:
        for _ in range(config.n_hypotheses):
            subsets.append(rng.choice(n, size=config.subset_size, replace=False))

    candidates = []
    for sub in subsets:
        try:
            pose = solve_pnp(points[sub], pixels[sub], intrinsics,
                             max_iter=config.max_iter)
        except (DegenerateConfiguration, NonConvergence):
            continue
        score = score_pose(pose, points, pixels, norm_depths, intrinsics, height)
        candidates.append(Hypothesis(pose, tuple(int(i) for i in sub), score))
    if not candidates:
        raise InsufficientCorrespondences(
            "no PnP-solvable subset among %d samples" % len(subsets)
        )
    candidates.sort(key=lambda h: h.score)

    best = candidates[0]
    eps, z = reprojection_residuals(best.pose, points, pixels, intrinsics)
    inliers = np.flatnonzero((eps < config.inlier_px) & (z > _MIN_DEPTH))
    if len(inliers) >= 4:
        mean_depth = float(z[inliers].mean())
        params = RobustLossParams(height, float(np.mean(norm_depths)), mean_depth)
        w = irls_weights(eps[inliers], norm_depths[inliers], params)
        refined, ok, _ = _refine_pose(
            points[inliers], pixels[inliers], intrinsics, best.pose,
            weights=w, max_iter=config.max_iter
        )
        if ok:
            score = score_pose(refined, points, pixels, norm_depths,
                               intrinsics, height)
            if score <= best.score:
                best = Hypothesis(refined, best.support, score)
    candidates[0] = best
    scene.hypotheses = candidates
    return best, candidates


def select_scene_subsets(scenes, q_max: int = 2000, s_max: int = 5):
    """Decide how many top hypotheses each scene contributes to the joint
    solve and populate each scene's reliable subset S_t.

    A scene with q_t pooled correspondences keeps

        s_t = min(floor(q_max * q_t / sum_j q_j), s_max),    s_t >= 1 if q_t > 0

    hypotheses; S_t is the union of those hypotheses' supports.
    """
    counts = [len(sc.pooled()[0]) for sc in scenes]
    total = sum(counts)
    kept = []
    for scene, q in zip(scenes, counts):
        if q == 0 or not scene.hypotheses:
            scene.subset = np.zeros(0, dtype=int)
            kept.append(0)
            continue
        s = min(q_max * q // total, s_max)
        s = max(s, 1)
        union = set()
        for hyp in scene.hypotheses[:s]:
            union.update(hyp.support)
        scene.subset = np.array(sorted(union), dtype=int)
        kept.append(s)
    return kept


@dataclass(frozen=True)
class MultiSceneResult:
    pose: Pose
    converged: bool
    iterations: int
    loss: float


def multi_scene_solve(scenes, intrinsics: Intrinsics, init: Pose,
                      config: OptimizerConfig | None = None) -> MultiSceneResult:
    """Jointly minimize the G-loss over every scene's reliable subset.

    Iterates damped, G-weighted least squares from ``init`` until the step
    or the loss drop becomes negligible or ``max_iter`` passes.  Steps are
    accepted only when they do not increase the loss, so the returned pose
    never scores worse than ``init``; running out of iterations just flags
    ``converged=False``.

    Raises:
        InsufficientCorrespondences: fewer than 4 selected correspondences
            across all scenes.
    """
    config = config or OptimizerConfig()
    blocks = []
    for scene in scenes:
        if scene.subset is None or len(scene.subset) == 0:
            continue
        pts, pix, nd = scene.pooled()
        idx = np.asarray(scene.subset, dtype=int)
        blocks.append((pts[idx], pix[idx], nd[idx], float(np.mean(nd))))
    if sum(len(b[0]) for b in blocks) < 4:
        raise InsufficientCorrespondences("joint solve needs >= 4 correspondences")
    height = config.image_height or float(intrinsics.height)

    def total_loss(pose):
        return sum(
            score_pose(pose, pts, pix, nd, intrinsics, height)
            for pts, pix, nd, _ in blocks
        )

    pose = init
    loss = total_loss(pose)
    lam_factor = 1e-3
    converged = False
    iterations = 0
    for it in range(config.max_iter):
        iterations = it + 1
        jtj = np.zeros((6, 6))
        grad = np.zeros(6)
        for pts, pix, nd, mean_nd in blocks:
            q, px, jac = residual_jacobian(pose, pts, intrinsics)
            z = q[:, 2]
            valid = z > _MIN_DEPTH
            if not np.any(valid):
                continue
            params = RobustLossParams(height, mean_nd, float(z[valid].mean()))
            res = px - pix
            eps = np.linalg.norm(res, axis=1)
            w = irls_weights(eps, nd, params) * valid
            jw = jac * w[:, None, None]
            jtj += np.einsum("nij,nik->jk", jw, jac)
            grad += np.einsum("nij,ni->j", jw, res)
        diag_max = max(float(np.max(np.diag(jtj))), 1e-12)
        stepped = False
        for _ in range(25):
            lhs = jtj + lam_factor * diag_max * np.eye(6)
            try:
                delta = np.linalg.solve(lhs, -grad)
            except np.linalg.LinAlgError:
                lam_factor *= 10.0
                continue
            trial = apply_increment(pose, delta)
            trial_loss = total_loss(trial)
            if trial_loss <= loss:
                drop = loss - trial_loss
                pose, loss = trial, trial_loss
                lam_factor = max(lam_factor / 10.0, 1e-12)
                stepped = True
                # IRLS reweighting shifts the surface a little every
                # iteration, so the tail drops geometrically without ever
                # reaching machine epsilon; these cuts sit where the pose
                # stops moving at any meaningful scale.
                if (np.linalg.norm(delta) < 1e-8
                        or drop <= 1e-12 * max(loss, 1e-12)):
                    converged = True
                break
            lam_factor *= 10.0
        if converged:
            break
        if not stepped:
            converged = bool(np.linalg.norm(grad) < 1e-6)
            break
    # steps are only ever accepted when they do not increase the loss, so
    # the current pose is the best seen even when the loop runs out
    return MultiSceneResult(pose, converged, iterations, loss)
