"""Instance masks, corner features and their file formats.

A mask is an image region with an ordered boundary.  Corners are the
surviving vertices after boundary simplification; each corner carries a ring
of neighboring simplified vertices (for local-shape comparison) and a small
texture patch sampled from the underlying image.  Masks arriving from a
virtual-view raster can additionally trace every corner back to the 3D point
that drew its pixel.

On disk a mask set is JSON-lines, one object per mask:

    {"id": 3, "polygon": [[x, y], ...], "area": 812, "bbox": [cx, cy, h, w]}

with the polygon authoritative and pixels re-rasterized on load.  Depth maps
travel as 16-bit grayscale PNG plus a one-line text sidecar giving the
millimeters-per-unit scale.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateContour, FormatError

MIN_MASK_AREA = 9  # px; anything smaller is dropped at ingestion


@dataclass(frozen=True)
class Instance:
    """Axis-aligned bounding-box summary of a mask region."""

    center: np.ndarray  # (cx, cy) pixels
    height: float
    width: float

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.height, self.width))


@dataclass
class CornerPoint:
    """A boundary corner with its local shape and appearance context."""

    position: np.ndarray  # (x, y) float pixels
    neighbors: np.ndarray  # (K, 2) simplified-ring vertices around the corner
    texture: np.ndarray  # (b, b) image patch centered on the corner
    lidar_point: np.ndarray | None = None  # (3,) once traced to the cloud


class Mask:
    """An instance region: boundary polyline, pixel raster and bbox summary."""

    def __init__(self, mask_id: int, contour: np.ndarray, raster: np.ndarray,
                 instance: Instance):
        self.mask_id = int(mask_id)
        self.contour = np.asarray(contour, dtype=float).reshape(-1, 2)
        self.raster = np.asarray(raster, dtype=bool)
        self.instance = instance
        self.corners: list[CornerPoint] = []

    @property
    def area(self) -> int:
        return int(self.raster.sum())

    @property
    def perimeter(self) -> float:
        c = self.contour
        return float(np.linalg.norm(np.diff(np.vstack([c, c[:1]]), axis=0), axis=1).sum())

    @classmethod
    def from_raster(cls, mask_id: int, raster: np.ndarray) -> "Mask":
        """Build from a boolean pixel region (boundary traced, bbox fitted)."""
        raster = np.asarray(raster, dtype=bool)
        contours, _ = cv2.findContours(
            raster.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE
        )
        if not contours:
            raise DegenerateContour("empty raster for mask %d" % mask_id)
        largest = max(contours, key=cv2.contourArea)
        contour = largest.reshape(-1, 2).astype(float)
        ys, xs = np.nonzero(raster)
        center = np.array([(xs.min() + xs.max()) / 2.0, (ys.min() + ys.max()) / 2.0])
        inst = Instance(center, float(ys.max() - ys.min() + 1), float(xs.max() - xs.min() + 1))
        return cls(mask_id, contour, raster, inst)

    @classmethod
    def from_polygon(cls, mask_id: int, polygon: np.ndarray, image_shape,
                     instance: Instance | None = None, max_step: float = 1.0) -> "Mask":
        """Build from a float vertex polygon (sub-pixel geometry preserved).

        The boundary is densified to roughly unit steps so that polygon-born
        and raster-born masks expose comparable contours, while the original
        vertices are kept bit-exact.
        """
        polygon = np.asarray(polygon, dtype=float).reshape(-1, 2)
        if polygon.shape[0] < 3:
            raise DegenerateContour("polygon of mask %d has < 3 vertices" % mask_id)
        contour = densify_ring(polygon, max_step)
        raster = np.zeros(image_shape, dtype=np.uint8)
        cv2.fillPoly(raster, [np.rint(polygon).astype(np.int32)], 1)
        if instance is None:
            lo, hi = polygon.min(axis=0), polygon.max(axis=0)
            instance = Instance((lo + hi) / 2.0, float(hi[1] - lo[1]), float(hi[0] - lo[0]))
        return cls(mask_id, contour, raster.astype(bool), instance)


def densify_ring(polygon: np.ndarray, max_step: float = 1.0) -> np.ndarray:
    """Resample a closed polygon so consecutive vertices are <= max_step apart.

    Original vertices are retained exactly; inserted points are collinear
    with their edge, so simplification recovers the input vertices.
    """
    out = []
    n = len(polygon)
    for i in range(n):
        a, b = polygon[i], polygon[(i + 1) % n]
        seg = np.linalg.norm(b - a)
        steps = max(1, int(np.ceil(seg / max_step)))
        for k in range(steps):
            out.append(a + (b - a) * (k / steps))
    return np.array(out)


def _point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-24:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def simplify_polyline(points: np.ndarray, epsilon: float) -> np.ndarray:
    """Douglas-Peucker on an open polyline; endpoints always survive.

    When the deviation maximum is a plateau (chord nearly parallel to an
    edge) the split lands on the plateau's first point, which is where the
    boundary actually turns, rather than an arbitrary interior point.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = _point_segment_distance(points[lo + 1:hi], points[lo], points[hi])
        dmax = float(d.max())
        if dmax > epsilon:
            im = int(np.nonzero(d >= dmax - 1e-6)[0][0])
            mid = lo + 1 + im
            keep[mid] = True
            stack.append((lo, mid))
            stack.append((mid, hi))
    return points[keep]


def _cleanup_ring(ring: np.ndarray, epsilon: float) -> np.ndarray:
    """Drop ring vertices that sit within epsilon of their neighbors' chord.

    The split points the recursive pass commits to are not always true
    corners (when a chord runs nearly parallel to an edge the max-deviation
    point is arbitrary), so a final removal pass enforces that every kept
    vertex actually deviates from the polygon spanned by the others.
    """
    verts = [np.asarray(v, dtype=float) for v in ring]
    while len(verts) > 3:
        n = len(verts)
        best_i, best_d = -1, None
        for i in range(n):
            d = _point_segment_distance(
                verts[i][None, :], verts[i - 1], verts[(i + 1) % n]
            )[0]
            if best_d is None or d < best_d:
                best_i, best_d = i, d
        if best_d is None or best_d > epsilon:
            break
        verts.pop(best_i)
    return np.array(verts)


def simplify_ring(points: np.ndarray, epsilon: float) -> np.ndarray:
    """Douglas-Peucker for a closed ring.

    The ring is rotated to start at the vertex farthest from the centroid
    (always a true extreme point, so no artificial anchor survives), split at
    the vertex farthest from that anchor, and each arc simplified separately;
    a cleanup pass then removes any residual near-collinear vertices.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 3:
        return points.copy()
    start = int(np.argmax(np.linalg.norm(points - points.mean(axis=0), axis=1)))
    ring = np.roll(points, -start, axis=0)
    far = int(np.argmax(np.linalg.norm(ring - ring[0], axis=1)))
    if far == 0:
        return ring[:1].copy()
    first = simplify_polyline(ring[: far + 1], epsilon)
    second = simplify_polyline(np.vstack([ring[far:], ring[:1]]), epsilon)
    return _cleanup_ring(np.vstack([first[:-1], second[:-1]]), epsilon)


def _contour_arcs(contour: np.ndarray):
    """Cumulative arc length at each vertex of a closed polyline, plus the
    total perimeter (closing edge included)."""
    closed = np.vstack([contour, contour[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg[:-1])])
    return cum, float(seg.sum())


def _arc_point(contour: np.ndarray, cum: np.ndarray, perimeter: float,
               s: float) -> np.ndarray:
    """Point of a closed polyline at arc position ``s`` (wrapping)."""
    s = s % perimeter
    idx = int(np.searchsorted(cum, s, side="right")) - 1
    a = contour[idx]
    b = contour[(idx + 1) % len(contour)]
    seg = float(np.linalg.norm(b - a))
    if seg < 1e-12:
        return a.copy()
    t = (s - cum[idx]) / seg
    return a + t * (b - a)


def _arc_neighbors(ring: np.ndarray, cum: np.ndarray, perimeter: float,
                   s: float, k: int, step_fraction: float) -> np.ndarray:
    """K boundary points around arc position ``s``, split symmetrically.

    Sampled at arc offsets [-k/2 .. -1, +1 .. +k/2] times
    ``step_fraction * perimeter``, so reversing the ring orientation
    exactly reverses the list.  Arc sampling (rather than taking adjacent
    vertices) keeps the neighborhood signature at a fixed scale relative to
    the instance, no matter how many vertices the boundary carries.
    """
    if k % 2 != 0:
        raise ValueError("neighbor count must be even")
    step = step_fraction * perimeter
    half = k // 2
    offsets = list(range(-half, 0)) + list(range(1, half + 1))
    return np.array(
        [_arc_point(ring, cum, perimeter, s + j * step) for j in offsets]
    )


def _reflect_index(i: int, n: int) -> int:
    while i < 0 or i >= n:
        if i < 0:
            i = -1 - i
        else:
            i = 2 * n - 1 - i
    return i


def sample_patch(image: np.ndarray, position, size: int) -> np.ndarray:
    """Square patch centered on a (possibly sub-pixel) position.

    The center is rounded to the nearest pixel and out-of-image coordinates
    are mirrored, so patches are defined right up to the border.
    """
    h, w = image.shape
    cx = int(round(float(position[0])))
    cy = int(round(float(position[1])))
    r = size // 2
    rows = [_reflect_index(cy + dy, h) for dy in range(-r, r + 1)]
    cols = [_reflect_index(cx + dx, w) for dx in range(-r, r + 1)]
    return image[np.ix_(rows, cols)].astype(float)


def extract_corners(mask: Mask, image: np.ndarray, epsilon: float = 2.0,
                    n_neighbors: int = 6, patch_size: int = 7,
                    step_fraction: float = 1.0 / 8.0) -> list[CornerPoint]:
    """Detect boundary corners and attach neighbor rings and texture patches.

    Corners are the vertices of the epsilon-simplified boundary; each
    carries ``n_neighbors`` points of that simplified ring sampled at fixed
    arc-length fractions of its perimeter around the corner (see
    ``_arc_neighbors``) and a square image patch.  Sampling the simplified
    ring, not the raw contour, keeps the arc scale geometric: boundary
    speckle inflates a raw contour's length but barely changes the
    simplified one.  The result is also stored on ``mask.corners``.

    Raises:
        DegenerateContour: if fewer than 3 corners survive simplification.
    """
    if len(mask.contour) < 3:
        raise DegenerateContour("mask %d contour too short" % mask.mask_id)
    ring = simplify_ring(mask.contour, epsilon)
    if len(ring) < 3:
        raise DegenerateContour(
            "mask %d keeps %d corners after simplification" % (mask.mask_id, len(ring))
        )
    cum, perimeter = _contour_arcs(ring)
    if perimeter < 1e-9:
        raise DegenerateContour("mask %d boundary has zero length" % mask.mask_id)
    corners = []
    for i in range(len(ring)):
        corners.append(
            CornerPoint(
                position=ring[i].copy(),
                neighbors=_arc_neighbors(ring, cum, perimeter,
                                         float(cum[i]), n_neighbors,
                                         step_fraction),
                texture=sample_patch(image, ring[i], patch_size),
            )
        )
    mask.corners = corners
    return corners


def synthetic_segment(image: np.ndarray, levels: int = 8, min_area: int = 25) -> list[Mask]:
    """Quantize-and-label segmentation for images the engine renders itself.

    The image (values in [0, 1], exact zeros treated as background) is
    quantized to ``levels`` bands and 4-connected components of each band
    become masks; components below ``min_area`` pixels are discarded.  A
    deliberately simple stand-in for a learned instance segmenter, adequate
    for the piecewise-constant imagery of virtual views and synthetic scenes.
    """
    img = np.asarray(image, dtype=float)
    valid = img > 0
    q = np.clip((np.clip(img, 0.0, 1.0) * levels).astype(int), 0, levels - 1)
    masks = []
    next_id = 0
    for band in range(levels):
        binary = valid & (q == band)
        if not binary.any():
            continue
        labels, count = ndimage.label(binary)
        for lab in range(1, count + 1):
            region = labels == lab
            if region.sum() < min_area:
                continue
            masks.append(Mask.from_raster(next_id, region))
            next_id += 1
    return masks


def segment_depth(depth: np.ndarray, min_area: int = 25,
                  jump_abs: float = 0.1, jump_rel: float = 0.03) -> list[Mask]:
    """Split a depth image into smooth regions separated by depth jumps.

    Unlike intensity imagery, a depth image of a slanted surface is a smooth
    ramp, so banding it by absolute value would shred every surface into
    contour strips.  Here two 4-neighbors belong to the same region unless
    their depths differ by more than ``jump_abs + jump_rel * min(depth)``;
    both pixels flanking a jump are treated as boundary, and zero pixels
    (no reading) stay background.  Components below ``min_area`` are dropped.
    """
    d = np.asarray(depth, dtype=float)
    occupied = d > 0
    edge = np.zeros_like(occupied)
    for dy, dx in ((0, 1), (1, 0)):
        a = d[: d.shape[0] - dy, : d.shape[1] - dx]
        b = d[dy:, dx:]
        both = (a > 0) & (b > 0)
        jump = both & (np.abs(a - b) > jump_abs + jump_rel * np.minimum(a, b))
        edge[: d.shape[0] - dy, : d.shape[1] - dx] |= jump
        edge[dy:, dx:] |= jump
    labels, count = ndimage.label(occupied & ~edge)
    masks = []
    next_id = 0
    for lab in range(1, count + 1):
        region = labels == lab
        if region.sum() < min_area:
            continue
        masks.append(Mask.from_raster(next_id, region))
        next_id += 1
    return masks


def union_area(masks) -> int:
    """Pixel count of the union of all mask rasters."""
    if not masks:
        return 0
    acc = np.zeros_like(masks[0].raster, dtype=bool)
    for m in masks:
        acc |= m.raster
    return int(acc.sum())


def save_masks(path, masks) -> None:
    """Write masks as JSON-lines; polygons carry the stored sub-pixel geometry."""
    with open(path, "w") as fh:
        for m in masks:
            record = {
                "id": m.mask_id,
                "polygon": [[round(float(x), 6), round(float(y), 6)] for x, y in m.contour],
                "area": m.area,
                "bbox": [
                    round(float(m.instance.center[0]), 6),
                    round(float(m.instance.center[1]), 6),
                    round(float(m.instance.height), 6),
                    round(float(m.instance.width), 6),
                ],
            }
            fh.write(json.dumps(record) + "\n")


def load_masks(path, image_shape, min_area: int = MIN_MASK_AREA) -> list[Mask]:
    """Read a JSON-lines mask file, re-rasterizing polygons on the image grid.

    Masks whose raster covers fewer than ``min_area`` pixels are dropped.

    Raises:
        FormatError: on any malformed line, naming the line and mask id.
    """
    masks = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError("%s:%d: invalid JSON: %s" % (path, lineno, exc)) from exc
        mask_id = rec.get("id", "<missing>")
        for key in ("id", "polygon", "area", "bbox"):
            if key not in rec:
                raise FormatError(
                    "%s:%d: mask %s missing field %r" % (path, lineno, mask_id, key)
                )
        poly = np.asarray(rec["polygon"], dtype=float)
        if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
            raise FormatError(
                "%s:%d: mask %s polygon must be >= 3 [x, y] pairs" % (path, lineno, mask_id)
            )
        bbox = rec["bbox"]
        if len(bbox) != 4:
            raise FormatError(
                "%s:%d: mask %s bbox must be [cx, cy, h, w]" % (path, lineno, mask_id)
            )
        inst = Instance(np.array(bbox[:2], dtype=float), float(bbox[2]), float(bbox[3]))
        mask = Mask.from_polygon(int(rec["id"]), poly, image_shape, instance=inst)
        if mask.area < min_area:
            continue
        masks.append(mask)
    return masks


def save_depth_png(path, depth_m: np.ndarray, mm_per_unit: float = 1.0) -> None:
    """Write metric depth as 16-bit PNG with a scale sidecar (`<path>.meta`)."""
    units = np.rint(np.asarray(depth_m, dtype=float) * 1000.0 / mm_per_unit)
    arr = np.clip(units, 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(str(path))
    Path(str(path) + ".meta").write_text("mm_per_unit = %s\n" % repr(float(mm_per_unit)))


def load_depth_png(path):
    """Read a 16-bit depth PNG; returns (depth_meters, mm_per_unit)."""
    arr = np.array(Image.open(str(path)))
    if arr.dtype not in (np.uint16, np.int32, np.uint8):
        raise FormatError("%s: expected a 16-bit grayscale PNG, got %s" % (path, arr.dtype))
    meta = Path(str(path) + ".meta")
    mm_per_unit = 1.0
    if meta.exists():
        text = meta.read_text()
        try:
            mm_per_unit = float(text.split("=", 1)[1].strip())
        except (IndexError, ValueError) as exc:
            raise FormatError("%s: malformed scale sidecar: %r" % (meta, text)) from exc
    return arr.astype(float) * mm_per_unit / 1000.0, mm_per_unit


def save_gray_png(path, image: np.ndarray) -> None:
    """Write a [0, 1] grayscale image as 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8)).save(str(path))


def load_gray_png(path) -> np.ndarray:
    """Read an image as [0, 1] grayscale (color inputs are converted)."""
    img = Image.open(str(path)).convert("L")
    return np.array(img).astype(float) / 255.0
