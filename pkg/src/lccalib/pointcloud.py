"""Point cloud container and file ingestion.

Two on-disk formats are supported: the packed float32 ``x y z intensity``
binary layout used by KITTI velodyne scans, and a whitespace-delimited text
format (one ``x y z intensity`` row per line, ``#`` comments allowed).

Raw sensor intensities live on wildly different scales (0..1, 0..255,
0..65535 depending on the unit), so loaders rescale by the 99th percentile
and clamp to [0, 1] unless told otherwise.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError


@dataclass(frozen=True)
class PointCloud:
    """N x 3 positions (meters, sensor frame) with per-point intensity."""

    points: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        inten = np.asarray(self.intensities, dtype=float).reshape(-1)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if pts.shape[0] == 0:
            raise ValueError("point cloud is empty")
        if inten.shape[0] != pts.shape[0]:
            raise ValueError("intensity count does not match point count")
        if not np.isfinite(pts).all() or not np.isfinite(inten).all():
            raise ValueError("point cloud contains NaN or inf")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "intensities", inten)

    def __len__(self):
        return self.points.shape[0]

    def subset(self, index) -> "PointCloud":
        return PointCloud(self.points[index], self.intensities[index])


def remove_isolated_points(cloud: PointCloud, k: int = 8, factor: float = 3.0) -> PointCloud:
    """Drop points whose neighborhood is sparser than the cloud's bulk.

    Classic statistical outlier removal: for each point take the mean
    distance to its ``k`` nearest neighbors, then discard points whose mean
    exceeds ``factor`` times the median of those means.  The median-based
    cut copes with scan-pattern spacing that varies across surfaces (a far
    surface is sampled more coarsely than a near one, so a hard sigma cut
    would eat its corner points first).

    Returns the input unchanged when the cloud is too small to vote.
    """
    if k <= 0 or len(cloud) <= k:
        return cloud
    tree = cKDTree(cloud.points)
    # query returns each point itself at distance 0 in column 0
    dists, _ = tree.query(cloud.points, k=k + 1)
    mean_dist = dists[:, 1:].mean(axis=1)
    cut = factor * np.median(mean_dist)
    if cut <= 0:
        return cloud
    return cloud.subset(mean_dist <= cut)


def normalize_intensity(values: np.ndarray) -> np.ndarray:
    """Rescale raw intensities by their 99th percentile and clamp to [0, 1]."""
    v = np.asarray(values, dtype=float)
    scale = np.percentile(v, 99)
    if scale <= 0:
        return np.clip(v, 0.0, 1.0)
    return np.clip(v / scale, 0.0, 1.0)


def load_kitti_bin(path, normalize: bool = True) -> PointCloud:
    """Read a packed float32 x/y/z/intensity scan (KITTI velodyne layout)."""
    raw = np.fromfile(str(path), dtype=np.float32)
    if raw.size == 0:
        raise FormatError("%s: empty scan file" % path)
    if raw.size % 4 != 0:
        raise FormatError(
            "%s: %d floats is not a multiple of 4 (x y z intensity)" % (path, raw.size)
        )
    data = raw.reshape(-1, 4).astype(float)
    inten = normalize_intensity(data[:, 3]) if normalize else data[:, 3]
    return PointCloud(data[:, :3], inten)


def save_kitti_bin(path, cloud: PointCloud) -> None:
    data = np.hstack([cloud.points, cloud.intensities[:, None]]).astype(np.float32)
    data.tofile(str(path))


def load_xyz_text(path, normalize: bool = True) -> PointCloud:
    """Read a text cloud: one ``x y z intensity`` row per line."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        fields = stripped.split()
        if len(fields) != 4:
            raise FormatError(
                "%s:%d: expected 4 fields (x y z intensity), got %d"
                % (path, lineno, len(fields))
            )
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise FormatError("%s:%d: %s" % (path, lineno, exc)) from exc
    if not rows:
        raise FormatError("%s: no data rows" % path)
    data = np.array(rows)
    inten = normalize_intensity(data[:, 3]) if normalize else data[:, 3]
    return PointCloud(data[:, :3], inten)


def save_xyz_text(path, cloud: PointCloud) -> None:
    data = np.hstack([cloud.points, cloud.intensities[:, None]])
    header = "x y z intensity"
    np.savetxt(str(path), data, fmt="%.9g", header=header)


def load_cloud(path, normalize: bool = True) -> PointCloud:
    """Dispatch on extension: ``.bin`` is packed float32, anything else text."""
    if str(path).endswith(".bin"):
        return load_kitti_bin(path, normalize=normalize)
    return load_xyz_text(path, normalize=normalize)
