"""Calibration run reporting: text report, per-scene stats, diagnostic figures.

The text report is the primary artifact.  Every float that a downstream
consumer might parse back (the extrinsic itself) is printed with 17
significant digits so the round trip is bit-exact; summary statistics are
fixed-precision.  Given the same outcome the rendered text is byte-identical.
"""

import csv
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import FormatError
from .geometry import Pose, error_metrics, project_points

_G17 = "%.17g"


def scene_residuals(outcome, intrinsics):
    """Reprojection residual magnitudes (px) per solved scene, final pose."""
    out = {}
    for sc in outcome.scenes:
        if not sc.ok or sc.bundle is None:
            continue
        pts, pix, _ = sc.bundle.pooled()
        if len(pts) == 0:
            out[sc.scene_index] = np.zeros(0)
            continue
        px, _, valid = project_points(outcome.pose.apply(pts), intrinsics)
        r = np.linalg.norm(px - pix, axis=1)
        r[~valid] = np.inf
        out[sc.scene_index] = r
    return out


def _stats_line(r: np.ndarray) -> str:
    if len(r) == 0:
        return "no correspondences"
    return ("residual px mean=%.3f median=%.3f p90=%.3f max=%.3f"
            % (r.mean(), np.median(r), np.quantile(r, 0.9), r.max()))


def render_report(outcome, intrinsics, ground_truth: Pose | None = None) -> str:
    """Render a calibration outcome as the canonical text report."""
    residuals = scene_residuals(outcome, intrinsics)
    lines = ["calibration report", "=" * 60, ""]
    lines.append("extrinsic rotation R (row-major):")
    for row in outcome.pose.R:
        lines.append("  " + " ".join(_G17 % v for v in row))
    lines.append("extrinsic translation t (m):")
    lines.append("  " + " ".join(_G17 % v for v in outcome.pose.t))
    lines.append("")
    if outcome.multi is None:
        lines.append("joint stage: skipped (single scene)")
    else:
        m = outcome.multi
        lines.append("joint stage: %s after %d iterations, loss %.6g"
                     % ("converged" if m.converged else "stopped",
                        m.iterations, m.loss))
    lines.append("initial scene: %d" % outcome.init_scene)
    lines.append("")
    lines.append("scenes:")
    for sc in outcome.scenes:
        if sc.ok:
            r = residuals.get(sc.scene_index, np.zeros(0))
            lines.append("  scene %d: ok n=%d %s"
                         % (sc.scene_index, sc.n_correspondences,
                            _stats_line(r)))
        else:
            lines.append("  scene %d: skipped (%s)"
                         % (sc.scene_index, sc.reason))
    if ground_truth is not None:
        e_r, e_t = error_metrics(outcome.pose, ground_truth)
        lines.append("")
        lines.append("ground truth comparison:")
        lines.append("  e_r = " + _G17 % e_r + " deg")
        lines.append("  e_t = " + _G17 % e_t + " m")
    lines.append("")
    return "\n".join(lines)


_ROW_RE = re.compile(r"^\s*(-?[\d.eE+-]+) (-?[\d.eE+-]+) (-?[\d.eE+-]+)\s*$")
_SCENE_RE = re.compile(r"^\s*scene (\d+): (ok|skipped)(?: n=(\d+))?")


def parse_report(text: str) -> dict:
    """Parse a rendered report back into its numeric content.

    Returns a dict with keys R (3x3), t (3,), scenes (list of
    (index, status, n) tuples), and e_r/e_t (None when the report carries
    no ground-truth section).

    Raises:
        FormatError: if the text is not a report this module produced.
    """
    lines = text.splitlines()
    idx = {ln.split(":")[0].strip(): i for i, ln in enumerate(lines)
           if ":" in ln}
    if "extrinsic rotation R (row-major)" not in idx:
        raise FormatError("not a calibration report: missing rotation block")
    start = idx["extrinsic rotation R (row-major)"] + 1
    rows = []
    for i in range(start, start + 3):
        m = _ROW_RE.match(lines[i])
        if not m:
            raise FormatError("malformed rotation row: %r" % lines[i])
        rows.append([float(g) for g in m.groups()])
    t_at = idx.get("extrinsic translation t (m)")
    if t_at is None:
        raise FormatError("missing translation block")
    m = _ROW_RE.match(lines[t_at + 1])
    if not m:
        raise FormatError("malformed translation row: %r" % lines[t_at + 1])
    scenes = []
    for ln in lines:
        sm = _SCENE_RE.match(ln)
        if sm:
            scenes.append((int(sm.group(1)), sm.group(2),
                           int(sm.group(3)) if sm.group(3) else 0))
    e_r = e_t = None
    for ln in lines:
        if ln.strip().startswith("e_r ="):
            e_r = float(ln.split("=")[1].split()[0])
        elif ln.strip().startswith("e_t ="):
            e_t = float(ln.split("=")[1].split()[0])
    return {
        "R": np.array(rows),
        "t": np.array([float(g) for g in m.groups()]),
        "scenes": scenes,
        "e_r": e_r,
        "e_t": e_t,
    }


def write_scene_stats(outcome, intrinsics, path) -> None:
    """Per-scene statistics as CSV alongside the text report."""
    residuals = scene_residuals(outcome, intrinsics)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "status", "n_correspondences",
                    "mean_px", "median_px", "p90_px", "max_px"])
        for sc in outcome.scenes:
            if sc.ok:
                r = residuals.get(sc.scene_index, np.zeros(0))
                if len(r):
                    stats = ["%.9g" % v for v in
                             (r.mean(), np.median(r), np.quantile(r, 0.9),
                              r.max())]
                else:
                    stats = ["", "", "", ""]
                w.writerow([sc.scene_index, "ok", sc.n_correspondences]
                           + stats)
            else:
                w.writerow([sc.scene_index, "skipped", 0, "", "", "", ""])


def residual_figure(outcome, intrinsics, path) -> None:
    """Histogram of reprojection residuals over all solved scenes."""
    residuals = scene_residuals(outcome, intrinsics)
    pooled = [r[np.isfinite(r)] for r in residuals.values() if len(r)]
    fig, ax = plt.subplots(figsize=(6, 4))
    if pooled:
        allr = np.concatenate(pooled)
        ax.hist(allr, bins=min(40, max(5, len(allr) // 3)), color="#4878b0")
        ax.axvline(float(np.median(allr)), color="k", linestyle="--",
                   label="median %.2f px" % np.median(allr))
        ax.legend()
    ax.set_xlabel("reprojection residual (px)")
    ax.set_ylabel("correspondences")
    ax.set_title("final-pose residuals")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def overlay_figure(image: np.ndarray, cloud, pose: Pose, intrinsics,
                   path) -> None:
    """Cloud projected onto the camera image, colored by range.

    A visual sanity check of the estimated extrinsic: with a good pose the
    point colors track the scene structure instead of smearing across it.
    """
    px, depth, valid = project_points(pose.apply(cloud.points), intrinsics)
    inside = (valid & (px[:, 0] >= 0) & (px[:, 0] <= intrinsics.width - 1)
              & (px[:, 1] >= 0) & (px[:, 1] <= intrinsics.height - 1))
    fig, ax = plt.subplots(figsize=(8, 6))
    ax.imshow(image, cmap="gray", vmin=0.0, vmax=1.0)
    if inside.any():
        order = np.argsort(-depth[inside])  # far points first, near on top
        sel = np.flatnonzero(inside)[order]
        ax.scatter(px[sel, 0], px[sel, 1], c=depth[sel], s=2,
                   cmap="turbo", alpha=0.8)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
