"""Command-line driver: calibrate from a config, generate synthetic scenes,
run experiment sweeps, and evaluate reports against ground truth.

Exit codes: 0 on success, 2 when some (but not all) scenes were skipped,
1 on total failure or bad input.
"""

import argparse
import csv
import os
import sys
from concurrent import futures
from dataclasses import replace

import numpy as np

from . import experiments, kitti
from .config import load_config, missing_files
from .errors import AllScenesFailed, CalibrationError, FormatError
from .geometry import Pose, error_metrics, matrix_to_euler_deg
from .masks import (load_depth_png, load_gray_png, load_masks, save_depth_png,
                    save_gray_png, save_masks)
from .pipeline import (PipelineSettings, SceneInputs, SceneOutcome,
                       calibrate_prepared, prepare_scene)
from .pointcloud import load_cloud, save_kitti_bin
from .report import (overlay_figure, parse_report, render_report,
                     residual_figure, write_scene_stats)
from .synthetic import (CANONICAL_EXTRINSIC, DEFAULT_INTRINSICS, NoiseSpec,
                        generate, save_scene_spec, standard_scene)


def _load_scene(sp) -> SceneInputs:
    """Read one scene's files into SceneInputs.

    Raises:
        FormatError: for missing or malformed files.
    """
    missing = missing_files(sp)
    if missing:
        raise FormatError("missing input file(s): %s" % ", ".join(missing))
    cloud = load_cloud(sp.cloud)
    image = load_gray_png(sp.image)
    masks = load_masks(sp.masks, image.shape)
    depth = depth_masks = None
    if sp.depth is not None:
        depth, _ = load_depth_png(sp.depth)
        if sp.depth_masks is not None:
            depth_masks = load_masks(sp.depth_masks, image.shape)
    return SceneInputs(cloud, image, masks, depth, depth_masks)


def _prepare_all(cfg, settings: PipelineSettings, jobs: int):
    """Load and prepare every scene, isolating per-scene failures.

    Returns (prepared scenes in index order, inputs by index, failure
    outcomes).  With jobs > 1 scenes prepare concurrently; results merge in
    scene order so the run stays deterministic.
    """
    def build(idx):
        inputs = _load_scene(cfg.scenes[idx])
        return inputs, prepare_scene(inputs, cfg.intrinsics, settings, idx)

    preps, inputs_by_index, failures = [], {}, []
    indices = range(len(cfg.scenes))
    if jobs > 1:
        with futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futs = {i: pool.submit(build, i) for i in indices}
        results = {i: f for i, f in futs.items()}
    else:
        results = None

    for i in indices:
        try:
            if results is not None:
                inputs, prep = results[i].result()
            else:
                inputs, prep = build(i)
        except CalibrationError as exc:
            failures.append(SceneOutcome(
                i, "skipped", "%s: %s" % (type(exc).__name__, exc)))
            continue
        inputs_by_index[i] = inputs
        preps.append(prep)
    return preps, inputs_by_index, failures


def _dump_correspondences(outcome, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "view", "pathway", "x", "y", "z", "u", "v",
                    "cost"])
        for sc in outcome.scenes:
            if not sc.ok or sc.bundle is None:
                continue
            for cs in sc.bundle.corr_sets:
                costs = cs.costs if cs.costs is not None else np.zeros(len(cs))
                for k in range(len(cs)):
                    w.writerow([sc.scene_index, cs.view_index, cs.pathway]
                               + ["%.9g" % v for v in cs.points[k]]
                               + ["%.9g" % v for v in cs.pixels[k]]
                               + ["%.9g" % costs[k]])


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    settings = cfg.settings
    if args.single_scene:
        settings = replace(settings, single_scene=True)
    if args.seed is not None:
        settings = replace(settings, seed=args.seed)

    preps, inputs_by_index, failures = _prepare_all(cfg, settings, args.jobs)
    try:
        outcome = calibrate_prepared(preps, cfg.intrinsics, settings,
                                     failures=failures)
    except AllScenesFailed as exc:
        print("calibration failed: %s" % exc, file=sys.stderr)
        return 1

    os.makedirs(cfg.output_dir, exist_ok=True)
    report = render_report(outcome, cfg.intrinsics, cfg.ground_truth)
    with open(os.path.join(cfg.output_dir, "report.txt"), "w") as fh:
        fh.write(report)
    write_scene_stats(outcome, cfg.intrinsics,
                      os.path.join(cfg.output_dir, "scene_stats.csv"))
    residual_figure(outcome, cfg.intrinsics,
                    os.path.join(cfg.output_dir, "residuals.png"))
    if args.dump_correspondences:
        _dump_correspondences(outcome,
                              os.path.join(cfg.output_dir,
                                           "correspondences.csv"))
    if args.overlay:
        for i, inputs in sorted(inputs_by_index.items()):
            overlay_figure(inputs.image, inputs.cloud, outcome.pose,
                           cfg.intrinsics,
                           os.path.join(cfg.output_dir,
                                        "overlay_scene_%03d.png" % i))
    print(report, end="")
    skipped = [s for s in outcome.scenes if not s.ok]
    return 2 if skipped else 0


def _pose_yaml_lines(pose: Pose, key: str) -> list:
    lines = ["%s:" % key, "  R:"]
    for row in pose.R:
        lines.append("  - [%s]" % ", ".join(repr(float(v)) for v in row))
    lines.append("  t: [%s]" % ", ".join(repr(float(v)) for v in pose.t))
    return lines


def cmd_synth(args) -> int:
    noise = NoiseSpec(pixel_sigma=args.pixel_sigma,
                      point_sigma=args.point_sigma,
                      outlier_rate=args.outlier_rate,
                      dropout_rate=args.dropout_rate)
    os.makedirs(args.out, exist_ok=True)
    scene_lines = ["scenes:"]
    for i in range(args.scenes):
        sdir = os.path.join(args.out, "scene_%03d" % i)
        os.makedirs(sdir, exist_ok=True)
        spec = standard_scene(args.seed + i, n_planes=args.planes,
                              noise=noise)
        data = generate(spec)
        save_kitti_bin(os.path.join(sdir, "cloud.bin"), data.cloud)
        save_gray_png(os.path.join(sdir, "image.png"), data.image)
        save_masks(os.path.join(sdir, "masks.jsonl"), data.masks)
        save_depth_png(os.path.join(sdir, "depth.png"), data.depth_image)
        save_masks(os.path.join(sdir, "depth_masks.jsonl"), data.depth_masks)
        save_scene_spec(os.path.join(sdir, "scene_spec.yaml"), spec)
        rel = "scene_%03d" % i
        scene_lines += ["- cloud: %s/cloud.bin" % rel,
                        "  image: %s/image.png" % rel,
                        "  masks: %s/masks.jsonl" % rel,
                        "  depth: %s/depth.png" % rel,
                        "  depth_masks: %s/depth_masks.jsonl" % rel]
    intr = DEFAULT_INTRINSICS
    lines = ["# synthetic calibration scenes with embedded ground truth",
             "intrinsics: {fx: %r, fy: %r, cx: %r, cy: %r, width: %d, height: %d}"
             % (intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height),
             "output_dir: calib_out",
             "seed: %d" % args.seed]
    lines += scene_lines
    lines += _pose_yaml_lines(CANONICAL_EXTRINSIC, "ground_truth")
    with open(os.path.join(args.out, "config.yaml"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("wrote %d scene(s) under %s" % (args.scenes, args.out))
    return 0


def _sweep_figure(rows, path) -> None:
    import matplotlib.pyplot as plt

    params, medians = [], []
    for p in dict.fromkeys(r.parameter for r in rows):
        params.append(str(p))
        medians.append(float(np.median(
            [r.e_r for r in rows if r.parameter == p])))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(params)), medians, marker="o")
    ax.set_xticks(range(len(params)))
    ax.set_xticklabels(params, rotation=30, ha="right")
    ax.set_ylabel("median rotation error (deg)")
    ax.set_xlabel("parameter")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_experiment(args) -> int:
    sweeps = {
        "noise": lambda: experiments.noise_sweep(trials=args.trials),
        "density": lambda: experiments.density_sweep(trials=args.trials),
        "scenes": lambda: experiments.scene_count_sweep(trials=args.trials),
        "ablation": lambda: experiments.ablation_sweep(trials=args.trials),
    }
    rows = sweeps[args.kind]()
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "%s.csv" % args.kind)
    experiments.write_rows_csv(csv_path, rows)
    _sweep_figure(rows, os.path.join(args.out, "%s.png" % args.kind))
    print("wrote %s (%d rows)" % (csv_path, len(rows)))
    return 0


def _truth_pose(args) -> Pose:
    if args.truth.endswith((".yaml", ".yml")):
        cfg = load_config(args.truth)
        if cfg.ground_truth is None:
            raise FormatError("%s carries no ground_truth section"
                              % args.truth)
        return cfg.ground_truth
    calib = kitti.load_calib(args.truth)
    return kitti.lidar_to_camera_pose(calib, args.camera)


def cmd_eval(args) -> int:
    with open(args.report) as fh:
        parsed = parse_report(fh.read())
    truth = _truth_pose(args)
    est = Pose(parsed["R"], parsed["t"])
    e_r, e_t = error_metrics(est, truth)
    eul = matrix_to_euler_deg(est.R)
    print("estimate euler deg: yaw=%.4f pitch=%.4f roll=%.4f"
          % (eul.yaw, eul.pitch, eul.roll))
    print("e_r = %.6g deg" % e_r)
    print("e_t = %.6g m" % e_t)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lccalib",
        description="targetless LiDAR-camera extrinsic calibration")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="run calibration from a config file")
    c.add_argument("config", help="YAML run configuration")
    c.add_argument("--single-scene", action="store_true",
                   help="skip the joint multi-scene stage")
    c.add_argument("--jobs", type=int, default=1,
                   help="concurrent scene preparation")
    c.add_argument("--overlay", action="store_true",
                   help="write per-scene cloud-on-image overlays")
    c.add_argument("--dump-correspondences", action="store_true",
                   help="write matched pairs as CSV")
    c.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("synth", help="generate ground-truthed scenes")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, default=5)
    s.add_argument("--planes", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pixel-sigma", type=float, default=0.0)
    s.add_argument("--point-sigma", type=float, default=0.0)
    s.add_argument("--outlier-rate", type=float, default=0.0)
    s.add_argument("--dropout-rate", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("experiment", help="run a seeded sweep, write CSV")
    e.add_argument("kind", choices=["noise", "density", "scenes", "ablation"])
    e.add_argument("--out", required=True)
    e.add_argument("--trials", type=int, default=20)
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("eval", help="compare a report against ground truth")
    v.add_argument("report", help="report.txt from a calibrate run")
    v.add_argument("--truth", required=True,
                   help="config YAML with ground_truth, or KITTI calib.txt")
    v.add_argument("--camera", default="P2",
                   help="projection entry for KITTI truth (default P2)")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except CalibrationError as exc:
        print("error: %s: %s" % (type(exc).__name__, exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
