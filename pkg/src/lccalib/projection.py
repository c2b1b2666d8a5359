"""Virtual cameras and point cloud rasterization.

A virtual camera re-images the LiDAR cloud from a chosen viewpoint, producing
an intensity or depth raster plus a per-pixel index back into the cloud.  The
index is what later lets a 2D feature found in the raster be traced to the 3D
point that drew it.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstantDepthWarning, DegenerateCloud, EmptyProjection
from .geometry import Intrinsics, Pose
from .pointcloud import PointCloud

INTENSITY = "intensity"
DEPTH = "depth"

_TIE_QUANTUM = 1e-9  # depths closer than this are merged before tie-breaking


@dataclass(frozen=True)
class VirtualCamera:
    """A viewpoint for re-imaging the cloud.

    ``pose`` maps LiDAR-frame points into this camera's optical frame, and
    ``channel`` selects what the raster holds (point intensity or depth).
    """

    pose: Pose
    intrinsics: Intrinsics
    channel: str = INTENSITY

    def __post_init__(self):
        if self.channel not in (INTENSITY, DEPTH):
            raise ValueError("channel must be 'intensity' or 'depth'")


@dataclass(frozen=True)
class ProjectionImage:
    """Rasterized view of a cloud with provenance.

    ``pixels`` holds the channel value (0 where no point landed), ``depth``
    the winning splat depth in meters (0 where empty), and ``source_index``
    the index of the cloud point that owns the pixel (-1 where empty).
    Non-empty pixels are exactly the pixels with positive depth.
    """

    pixels: np.ndarray
    depth: np.ndarray
    source_index: np.ndarray
    camera: VirtualCamera = field(repr=False)

    @property
    def occupancy(self) -> np.ndarray:
        return self.source_index >= 0


def render(cloud: PointCloud, camera: VirtualCamera) -> ProjectionImage:
    """Splat the cloud into the camera with nearest-depth-wins merging.

    Each point lands on its nearest pixel; when several points share a pixel
    the smallest depth wins, and depths equal within 1e-9 m resolve to the
    lowest point index, so the output is a pure function of the cloud order.

    Raises:
        EmptyProjection: if no point falls inside the image with z > 0.
    """
    intr = camera.intrinsics
    q = camera.pose.apply(cloud.points)
    z = q[:, 2]
    front = z > _TIE_QUANTUM
    if not front.any():
        raise EmptyProjection("all points behind the virtual camera")

    idx = np.nonzero(front)[0]
    qf = q[front]
    u = np.rint(intr.fx * qf[:, 0] / qf[:, 2] + intr.cx).astype(np.int64)
    v = np.rint(intr.fy * qf[:, 1] / qf[:, 2] + intr.cy).astype(np.int64)
    inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    if not inside.any():
        raise EmptyProjection("no point falls inside the virtual image")
    idx, u, v = idx[inside], u[inside], v[inside]
    zf = z[idx]

    flat = v * intr.width + u
    zq = np.rint(zf / _TIE_QUANTUM).astype(np.int64)
    order = np.lexsort((idx, zq, flat))
    flat_sorted = flat[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    winners = order[first]

    h, w = intr.height, intr.width
    pixels = np.zeros((h, w), dtype=float)
    depth = np.zeros((h, w), dtype=float)
    source = np.full((h, w), -1, dtype=np.int64)
    rows, cols = flat[winners] // w, flat[winners] % w
    depth[rows, cols] = zf[winners]
    source[rows, cols] = idx[winners]
    if camera.channel == DEPTH:
        pixels[rows, cols] = zf[winners]
    else:
        pixels[rows, cols] = cloud.intensities[idx[winners]]
    for arr in (pixels, depth, source):
        arr.setflags(write=False)
    return ProjectionImage(pixels, depth, source, camera)


def dilate_sparse(image: ProjectionImage, radius: int = 1) -> np.ndarray:
    """Fill empty pixels from the nearest-depth neighbor within a window.

    Returns a plain array for segmentation input; the projection image itself
    (and with it the pixel-to-point provenance) is left untouched.
    """
    if radius <= 0:
        return image.pixels.copy()
    h, w = image.pixels.shape
    best_depth = np.where(image.depth > 0, image.depth, np.inf)
    filled = image.pixels.copy()
    fill_depth = np.full((h, w), np.inf)
    empty = ~image.occupancy
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            shifted_depth = np.full((h, w), np.inf)
            shifted_val = np.zeros((h, w))
            ys = slice(max(dy, 0), h + min(dy, 0))
            xs = slice(max(dx, 0), w + min(dx, 0))
            yd = slice(max(-dy, 0), h + min(-dy, 0))
            xd = slice(max(-dx, 0), w + min(-dx, 0))
            shifted_depth[yd, xd] = best_depth[ys, xs]
            shifted_val[yd, xd] = image.pixels[ys, xs]
            better = empty & (shifted_depth < fill_depth)
            filled[better] = shifted_val[better]
            fill_depth[better] = shifted_depth[better]
    return filled


def trace_source(image: ProjectionImage, pixel, radius: int = 0) -> int:
    """Index of the cloud point behind a pixel, searching a small window.

    With ``radius`` 0 this is a plain lookup.  A positive radius tolerates
    features detected on dilated rasters, whose exact pixel may be a filled
    one: the nearest occupied pixel (Euclidean, then row-major order) within
    the window is used.  Returns -1 when nothing is found.
    """
    h, w = image.source_index.shape
    u = int(round(float(pixel[0])))
    v = int(round(float(pixel[1])))
    best = -1
    best_d2 = None
    for dy in range(-radius, radius + 1):
        y = v + dy
        if y < 0 or y >= h:
            continue
        for dx in range(-radius, radius + 1):
            x = u + dx
            if x < 0 or x >= w:
                continue
            src = image.source_index[y, x]
            if src < 0:
                continue
            d2 = dx * dx + dy * dy
            if best_d2 is None or d2 < best_d2:
                best, best_d2 = int(src), d2
    return best


@dataclass(frozen=True)
class FieldOfView:
    """Angular coverage of a cloud, degrees."""

    horizontal: float
    vertical: float

    def __post_init__(self):
        if not (0.0 <= self.horizontal <= 360.0):
            raise ValueError("horizontal FoV out of range")
        if not (0.0 <= self.vertical <= 180.0):
            raise ValueError("vertical FoV out of range")


def estimate_fov(cloud: PointCloud, gap_resolution_deg: float = 1.0) -> FieldOfView:
    """Angular span of the cloud, robust to azimuth wraparound.

    The horizontal span is 360 deg minus the largest empty azimuth gap, so a
    cloud straddling the +/-180 deg seam is measured correctly; gaps at or
    below ``gap_resolution_deg`` count as covered (a dense full ring reads as
    360).  The vertical span is a plain elevation range.

    Raises:
        DegenerateCloud: if every point shares a single bearing.
    """
    p = cloud.points
    az = np.degrees(np.arctan2(p[:, 1], p[:, 0]))
    el = np.degrees(np.arctan2(p[:, 2], np.hypot(p[:, 0], p[:, 1])))

    az_sorted = np.sort(np.unique(az))
    if az_sorted.size == 1:
        largest_gap = 360.0
    else:
        gaps = np.diff(az_sorted)
        wrap = az_sorted[0] + 360.0 - az_sorted[-1]
        largest_gap = max(float(gaps.max()), float(wrap))
    horizontal = (
        360.0 if largest_gap <= gap_resolution_deg + 1e-9 else 360.0 - largest_gap
    )
    vertical = float(el.max() - el.min())
    if horizontal < 1e-9 and vertical < 1e-9:
        raise DegenerateCloud("all points share one bearing")
    return FieldOfView(horizontal, vertical)


def normalize_depth(depths: np.ndarray, d_min=None, d_max=None) -> np.ndarray:
    """Affine-map depths onto [0, 1] over a range (defaults to min/max).

    A constant field has no usable range: the result is all zeros and a
    ``ConstantDepthWarning`` is issued rather than raising, so callers that
    only use the values as texture keep going.
    """
    d = np.asarray(depths, dtype=float)
    lo = float(np.min(d)) if d_min is None else float(d_min)
    hi = float(np.max(d)) if d_max is None else float(d_max)
    if hi - lo <= 0:
        warnings.warn("constant depth field", ConstantDepthWarning)
        return np.zeros_like(d)
    return np.clip((d - lo) / (hi - lo), 0.0, 1.0)
