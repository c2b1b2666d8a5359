"""KITTI odometry ingestion: calib.txt parsing and sequence frame listing.

Only the pieces the calibration pipeline needs: pinhole intrinsics of a
projection matrix, the LiDAR-to-camera reference transform, and a
downsampled (cloud, image) frame list from a sequence directory.
"""

import os

import numpy as np

from .errors import FormatError
from .geometry import Intrinsics, Pose


def parse_calib_text(text: str) -> dict:
    """``KEY: v0 v1 ...`` lines to arrays; malformed lines raise."""
    out = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln:
            continue
        if ":" not in ln:
            raise FormatError("calib line without key: %r" % ln)
        key, _, rest = ln.partition(":")
        try:
            vals = np.array([float(v) for v in rest.split()])
        except ValueError:
            raise FormatError("non-numeric calib values on %r" % key)
        out[key.strip()] = vals
    return out


def load_calib(path) -> dict:
    with open(path) as fh:
        return parse_calib_text(fh.read())


def projection_to_intrinsics(P: np.ndarray, width: int, height: int) -> Intrinsics:
    """Pinhole intrinsics of a 3x4 projection matrix."""
    P = np.asarray(P, dtype=float).reshape(3, 4)
    return Intrinsics(fx=float(P[0, 0]), fy=float(P[1, 1]),
                      cx=float(P[0, 2]), cy=float(P[1, 2]),
                      width=width, height=height)


def lidar_to_camera_pose(calib: dict, camera: str = "P2") -> Pose:
    """Reference LiDAR-to-camera transform for the given projection entry.

    ``Tr`` maps LiDAR points into the reference camera frame; the target
    camera's projection matrix carries its offset from that frame in the
    fourth column (P = K [I | b]), so the full transform appends b.

    Raises:
        FormatError: when Tr or the projection entry is missing.
    """
    if "Tr" not in calib:
        raise FormatError("calib has no Tr entry")
    if camera not in calib:
        raise FormatError("calib has no %s entry" % camera)
    tr = np.asarray(calib["Tr"], dtype=float).reshape(3, 4)
    P = np.asarray(calib[camera], dtype=float).reshape(3, 4)
    K = P[:, :3]
    b = np.linalg.solve(K, P[:, 3])
    return Pose(tr[:, :3], tr[:, 3] + b)


def downsampled_frames(sequence_dir, every: int = 10,
                       cloud_dir: str = "velodyne",
                       image_dir: str = "image_2"):
    """Every n-th (cloud, image) pair of a sequence, matched by basename.

    Stems present on only one side are skipped; ordering is by stem so the
    selection is deterministic.

    Raises:
        FormatError: missing directories or an empty intersection.
    """
    if every < 1:
        raise ValueError("every must be >= 1")
    cdir = os.path.join(sequence_dir, cloud_dir)
    idir = os.path.join(sequence_dir, image_dir)
    for d in (cdir, idir):
        if not os.path.isdir(d):
            raise FormatError("sequence directory missing: %s" % d)
    clouds = {os.path.splitext(f)[0]: os.path.join(cdir, f)
              for f in os.listdir(cdir) if f.endswith(".bin")}
    images = {os.path.splitext(f)[0]: os.path.join(idir, f)
              for f in os.listdir(idir)
              if os.path.splitext(f)[1].lower() in (".png", ".jpg", ".jpeg")}
    stems = sorted(set(clouds) & set(images))
    if not stems:
        raise FormatError("no matching cloud/image stems under %s"
                          % sequence_dir)
    return [(clouds[s], images[s]) for s in stems[::every]]
