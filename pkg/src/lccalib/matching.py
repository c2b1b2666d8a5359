"""Cross-modal correspondence matching between virtual and camera views.

Matching runs in two stages per pathway.  Stage one pairs whole masks across
the modality gap using coarse geometry (position, size, aspect), and fits
each pair a 4-DoF similarity transform so the virtual mask's corners can be
carried into camera image coordinates.  Stage two scores every carried
virtual corner against every candidate camera corner — alignment distance,
neighbor-ring shape agreement, texture patch difference — and keeps only
pairs that win both their row and their column.  Accepted corners become
(LiDAR point, camera pixel) correspondences via the render-time traceback.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoMatches

TEXTURAL = "textural"
SPATIAL = "spatial"

WIDTH_PERIMETER_SQ_HALF = "perimeter_sq_half"
WIDTH_PERIMETER = "perimeter"


@dataclass(frozen=True)
class SimilarityTransform:
    """Scaled 2D rotation plus translation, mapping virtual to camera pixels."""

    scale: float
    rotation: np.ndarray  # 2x2
    translation: np.ndarray  # (2,)
    degenerate: bool = False  # True when the rotation fell back to identity

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        R = np.asarray(self.rotation, dtype=float)
        if np.linalg.norm(R.T @ R - np.eye(2)) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation2d must be a proper rotation")

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.scale * (p @ self.rotation.T) + self.translation

    def invert(self) -> "SimilarityTransform":
        inv_r = self.rotation.T
        return SimilarityTransform(
            1.0 / self.scale,
            inv_r,
            -(inv_r @ self.translation) / self.scale,
            self.degenerate,
        )

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(2), np.zeros(2))


@dataclass(frozen=True)
class MaskMatch:
    virtual_id: int
    camera_id: int
    cost: float
    transform: SimilarityTransform


@dataclass(frozen=True)
class MaskMatchSet:
    """Injective mask pairing plus the width parameter L for corner costs."""

    pairs: tuple
    width: float  # L: mean perimeter of all matched masks, pixels

    def __post_init__(self):
        v_ids = [p.virtual_id for p in self.pairs]
        c_ids = [p.camera_id for p in self.pairs]
        if len(set(v_ids)) != len(v_ids) or len(set(c_ids)) != len(c_ids):
            raise ValueError("mask pairing must be injective on both sides")
        if self.pairs and self.width <= 0:
            raise ValueError("width parameter must be positive")


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched (LiDAR point, camera pixel) pairs from one virtual view."""

    points: np.ndarray  # (N, 3) LiDAR frame
    pixels: np.ndarray  # (N, 2) camera image
    pathway: str
    view_index: int
    costs: np.ndarray = None
    depths: np.ndarray = None  # metric depth of each point in its virtual view
    norm_depths: np.ndarray = None  # same, normalized over the view's cloud

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        pix = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if len(pts) != len(pix):
            raise ValueError("points and pixels must align")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "pixels", pix)

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, pathway: str, view_index: int) -> "CorrespondenceSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 2)), pathway, view_index,
                   costs=np.zeros(0), depths=np.zeros(0), norm_depths=np.zeros(0))


@dataclass
class MatchConfig:
    """Stage-2 matching knobs; defaults follow the engine-wide defaults."""

    beta_structural: float = 1.0
    beta_textural: float = 1.0
    shape_weight: float = 1.0  # w inside the neighbor-shape score
    tau: float = 0.5  # corner acceptance threshold
    mask_threshold: float = 1.0  # stage-1 mask cost acceptance threshold
    neighbor_radius_factor: float = 1.5  # x instance diagonal for extra masks
    width_mode: str = WIDTH_PERIMETER_SQ_HALF
    use_structural: bool = True  # neighbor-ring shape term on/off
    use_textural: bool = True  # texture term on/off

    def width_denominator(self, width: float) -> float:
        if self.width_mode == WIDTH_PERIMETER_SQ_HALF:
            return width * width / 2.0
        if self.width_mode == WIDTH_PERIMETER:
            return width
        raise ValueError("unknown width mode %r" % self.width_mode)


# ---------------------------------------------------------------------------
# stage 1: mask matching


def _mask_cost(vm, cm, image_diag: float,
               w_center=1.0, w_area=1.0, w_aspect=1.0) -> float:
    center_d = float(np.linalg.norm(vm.instance.center - cm.instance.center))
    cost = w_center * center_d / image_diag
    cost += w_area * abs(math.log(max(vm.area, 1) / max(cm.area, 1)))
    va = max(vm.instance.height, 1e-6) / max(vm.instance.width, 1e-6)
    ca = max(cm.instance.height, 1e-6) / max(cm.instance.width, 1e-6)
    cost += w_aspect * abs(math.log(va / ca))
    return cost


def greedy_assign(cost: np.ndarray, threshold: float):
    """Repeatedly accept the globally cheapest surviving cell below threshold."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    taken_r = np.zeros(n, dtype=bool)
    taken_c = np.zeros(m, dtype=bool)
    order = np.argsort(cost, axis=None, kind="stable")
    pairs = []
    for flat in order:
        i, j = divmod(int(flat), m)
        if taken_r[i] or taken_c[j] or cost[i, j] >= threshold:
            continue
        pairs.append((i, j))
        taken_r[i] = True
        taken_c[j] = True
    return pairs


def match_masks(virtual_masks, camera_masks,
                config: MatchConfig | None = None) -> MaskMatchSet:
    """Pair virtual-view masks with camera masks on coarse geometry.

    Cost per candidate pair is a weighted sum of center distance (normalized
    by the image diagonal), log area ratio and log aspect ratio; assignment
    is greedy on the globally cheapest cells under the threshold.

    Raises:
        NoMatches: if no pair scores below the threshold.
    """
    config = config or MatchConfig()
    if not virtual_masks or not camera_masks:
        raise NoMatches("empty mask list on one side")
    shape = camera_masks[0].raster.shape
    diag = float(np.hypot(shape[0], shape[1]))
    cost = np.array(
        [[_mask_cost(vm, cm, diag) for cm in camera_masks] for vm in virtual_masks]
    )
    picked = greedy_assign(cost, config.mask_threshold)
    if not picked:
        raise NoMatches("no mask pair below threshold %.3f" % config.mask_threshold)
    pairs = []
    perims = []
    for i, j in sorted(picked):
        vm, cm = virtual_masks[i], camera_masks[j]
        pairs.append(
            MaskMatch(vm.mask_id, cm.mask_id, float(cost[i, j]),
                      estimate_similarity(vm, cm))
        )
        perims.extend([vm.perimeter, cm.perimeter])
    return MaskMatchSet(tuple(pairs), float(np.mean(perims)))


# ---------------------------------------------------------------------------
# stage 1b: per-pair similarity transform


def _principal_axis(mask):
    """Orientation angle and elongation of a mask's pixel distribution."""
    ys, xs = np.nonzero(mask.raster)
    if len(xs) < 2:
        return 0.0, 1.0
    x = xs - xs.mean()
    y = ys - ys.mean()
    cov = np.array([[x @ x, x @ y], [x @ y, y @ y]]) / len(xs)
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, 1]  # eigh sorts ascending
    angle = math.atan2(major[1], major[0])
    elongation = math.sqrt(max(evals[1], 1e-12) / max(evals[0], 1e-12))
    return angle, elongation


def estimate_similarity(virtual_mask, camera_mask,
                        min_elongation: float = 1.5) -> SimilarityTransform:
    """Fit scale/rotation/translation carrying one mask onto the other.

    Scale comes from the bounding-box size ratio and translation from the
    instance centers.  Rotation aligns the principal pixel axes, but only
    when both masks are elongated enough for the axis to be stable;
    otherwise identity is used and the transform is flagged degenerate.
    """
    vi, ci = virtual_mask.instance, camera_mask.instance
    if min(vi.height, vi.width, ci.height, ci.width) <= 0:
        return SimilarityTransform(
            1.0, np.eye(2), ci.center - vi.center, degenerate=True
        )
    s = math.sqrt((ci.height * ci.width) / (vi.height * vi.width))
    av, ev = _principal_axis(virtual_mask)
    ac, ec = _principal_axis(camera_mask)
    if ev >= min_elongation and ec >= min_elongation:
        delta = ac - av
        # principal axes are 180-degree ambiguous; stay in (-pi/2, pi/2]
        while delta <= -math.pi / 2:
            delta += math.pi
        while delta > math.pi / 2:
            delta -= math.pi
        rot = np.array(
            [[math.cos(delta), -math.sin(delta)], [math.sin(delta), math.cos(delta)]]
        )
        degenerate = False
    else:
        rot = np.eye(2)
        degenerate = True
    t = ci.center - s * (rot @ vi.center)
    return SimilarityTransform(s, rot, t, degenerate)


# ---------------------------------------------------------------------------
# stage 2: corner cost and mutual-best selection


def _shape_score(offset_v: np.ndarray, offset_c: np.ndarray, w: float) -> float:
    nv = float(np.linalg.norm(offset_v))
    nc = float(np.linalg.norm(offset_c))
    m = max(nv, nc)
    if m < 1e-12:
        return 0.0
    return w * float(np.linalg.norm(offset_v - offset_c)) / m


def corner_cost(ci, cj, transform: SimilarityTransform, width: float,
                config: MatchConfig | None = None) -> float:
    """Matching cost between a virtual corner and a camera corner.

    Sums an alignment distance term (grows from 0 with center misalignment,
    saturating at 1), a neighbor-ring shape term (each transformed virtual
    neighbor offset against the camera corner's corresponding neighbor,
    taking the better of the two contour orientations), and a mean absolute
    texture difference, weighted by the structural/textural betas.
    """
    config = config or MatchConfig()
    denom = config.width_denominator(width)
    chat = transform.apply(ci.position)
    d2 = float(np.sum((chat - cj.position) ** 2))
    structural = 1.0 - math.exp(-d2 / denom)
    if config.use_structural:
        ehat = transform.apply(ci.neighbors)
        k = len(ehat)
        off_v = ehat - chat
        off_c = cj.neighbors - cj.position
        for idx in range(k):
            fwd = _shape_score(off_v[idx], off_c[idx], config.shape_weight)
            rev = _shape_score(off_v[idx], off_c[k - 1 - idx], config.shape_weight)
            structural += min(fwd, rev)
    cost = config.beta_structural * structural
    if config.use_textural:
        cost += config.beta_textural * float(np.mean(np.abs(ci.texture - cj.texture)))
    return cost


def mutual_best(cost: np.ndarray, threshold: float):
    """Cells that are the strict minimum of their row and column, below cutoff."""
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    pairs = []
    row_min = cost.min(axis=1)
    col_min = cost.min(axis=0)
    for i in range(cost.shape[0]):
        j = int(np.argmin(cost[i]))
        c = cost[i, j]
        if c >= threshold:
            continue
        # strict minimum in both directions: unique in row i and column j
        if (cost[i] == c).sum() > 1 or (cost[:, j] == c).sum() > 1:
            continue
        if c == row_min[i] and c == col_min[j]:
            pairs.append((i, j))
    return pairs


def _corner_entries(masks, matched_ids, transforms_by_id, radius_factor):
    """Corners of matched masks plus those of nearby unmatched masks.

    Unmatched masks within ``radius_factor`` x the diagonal of some matched
    mask contribute corners too, borrowing the transform of the nearest
    matched mask (ties broken by mask id).
    """
    by_id = {m.mask_id: m for m in masks}
    entries = []  # (corner, transform, mask_id)
    for mid in sorted(matched_ids):
        for c in by_id[mid].corners:
            entries.append((c, transforms_by_id[mid], mid))
    matched = [by_id[mid] for mid in sorted(matched_ids)]
    for m in masks:
        if m.mask_id in matched_ids or not m.corners:
            continue
        best = None
        for ref in matched:
            d = float(np.linalg.norm(m.instance.center - ref.instance.center))
            if d <= radius_factor * ref.instance.diagonal:
                if best is None or d < best[0]:
                    best = (d, ref.mask_id)
        if best is not None:
            for c in m.corners:
                entries.append((c, transforms_by_id[best[1]], m.mask_id))
    return entries


def match_corners(virtual_masks, camera_masks, matches: MaskMatchSet,
                  pathway: str, view_index: int,
                  config: MatchConfig | None = None) -> CorrespondenceSet:
    """Stage-2 corner matching over the matched (and neighboring) masks.

    Only virtual corners with a LiDAR traceback enter the cost matrix; the
    accepted mutual-best pairs are emitted as (lidar_point, camera pixel)
    correspondences with duplicates (same point or same pixel) reduced to
    their cheapest instance.
    """
    config = config or MatchConfig()
    if not matches.pairs:
        return CorrespondenceSet.empty(pathway, view_index)

    v_transforms = {p.virtual_id: p.transform for p in matches.pairs}
    c_identity = {p.camera_id: SimilarityTransform.identity() for p in matches.pairs}
    v_entries = _corner_entries(
        virtual_masks, set(v_transforms), v_transforms, config.neighbor_radius_factor
    )
    v_entries = [e for e in v_entries if e[0].lidar_point is not None]
    c_entries = _corner_entries(
        camera_masks, set(c_identity), c_identity, config.neighbor_radius_factor
    )
    if not v_entries or not c_entries:
        return CorrespondenceSet.empty(pathway, view_index)

    cost = np.empty((len(v_entries), len(c_entries)))
    for i, (vc, transform, _) in enumerate(v_entries):
        for j, (cc, _, _) in enumerate(c_entries):
            cost[i, j] = corner_cost(vc, cc, transform, matches.width, config)

    accepted = mutual_best(cost, config.tau)
    chosen = {}
    for i, j in accepted:
        point = v_entries[i][0].lidar_point
        pixel = c_entries[j][0].position
        key_p = tuple(np.round(point, 9))
        key_x = tuple(np.round(pixel, 6))
        c = float(cost[i, j])
        if key_p in chosen and chosen[key_p][2] <= c:
            continue
        dup = [k for k, v in chosen.items() if tuple(np.round(v[1], 6)) == key_x]
        if dup and chosen[dup[0]][2] <= c:
            continue
        for k in dup:
            del chosen[k]
        chosen[key_p] = (point, pixel, c)

    if not chosen:
        return CorrespondenceSet.empty(pathway, view_index)
    points = np.array([v[0] for v in chosen.values()])
    pixels = np.array([v[1] for v in chosen.values()])
    costs = np.array([v[2] for v in chosen.values()])
    return CorrespondenceSet(points, pixels, pathway, view_index, costs=costs)


def with_view_depths(corr: CorrespondenceSet, view_pose, d_min: float,
                     d_max: float) -> CorrespondenceSet:
    """Attach per-correspondence metric and normalized virtual-view depths."""
    if len(corr) == 0:
        return replace(corr, depths=np.zeros(0), norm_depths=np.zeros(0))
    depths = view_pose.apply(corr.points)[:, 2]
    span = max(d_max - d_min, 1e-12)
    norm = np.clip((depths - d_min) / span, 0.0, 1.0)
    return replace(corr, depths=depths, norm_depths=norm)
