"""Seeded Monte-Carlo studies over the synthetic oracle.

Every study follows the same recipe: draw trial scenes from deterministic
seeds, run the pipeline under some swept setting, and score the recovered
pose against the generator's known extrinsic.  Results come back as
``SweepRow`` records (one per swept value, medians over the trial repeats)
ready for CSV emission.

Scene preparation dominates the runtime, so multi-arm studies (ablation,
scene-count) prepare each trial's scenes once and re-run only matching and
solving per arm.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationError
from .geometry import Intrinsics, Pose, error_metrics
from .matching import MatchConfig
from .pipeline import (
    PipelineSettings,
    SceneInputs,
    calibrate_prepared,
    prepare_scene,
)
from .synthetic import (
    CANONICAL_EXTRINSIC,
    NoiseSpec,
    density_split,
    generate,
    standard_scene,
)

# scene seeds stride by a prime so no two trials share a scene
TRIAL_STRIDE = 1009

# the noise regime the robustness studies run under
STANDARD_NOISE = NoiseSpec(pixel_sigma=1.0, outlier_rate=0.2)


@dataclass(frozen=True)
class SweepRow:
    """One swept value with its median errors over the repeats."""

    parameter: str
    e_r: float
    e_t: float


def trial_scene_seeds(trial: int, n_scenes: int) -> list:
    return [TRIAL_STRIDE * trial + i for i in range(n_scenes)]


def make_trial_scenes(trial: int, n_scenes: int,
                      noise: NoiseSpec = NoiseSpec(),
                      extrinsic: Pose = CANONICAL_EXTRINSIC) -> list:
    return [generate(standard_scene(seed, extrinsic=extrinsic, noise=noise))
            for seed in trial_scene_seeds(trial, n_scenes)]


def prepare_trial(datas, settings: PipelineSettings) -> list:
    """The expensive half of a trial, shared across sweep arms."""
    return [prepare_scene(SceneInputs.from_synthetic(d), d.intrinsics,
                          settings, scene_index=i)
            for i, d in enumerate(datas)]


def score_outcome(outcome, extrinsic: Pose = CANONICAL_EXTRINSIC):
    return error_metrics(outcome.pose, extrinsic)


def run_trial(trial: int, n_scenes: int = 5,
              noise: NoiseSpec = STANDARD_NOISE,
              settings: PipelineSettings | None = None,
              extrinsic: Pose = CANONICAL_EXTRINSIC):
    """One full calibration under the given regime; returns (e_r, e_t)."""
    settings = settings or PipelineSettings(seed=trial)
    datas = make_trial_scenes(trial, n_scenes, noise, extrinsic)
    preps = prepare_trial(datas, settings)
    outcome = calibrate_prepared(preps, datas[0].intrinsics, settings)
    return score_outcome(outcome, extrinsic)


def _median_errors(pairs) -> tuple:
    """Component-wise medians; calibration failures count as +inf."""
    ers = [p[0] for p in pairs]
    ets = [p[1] for p in pairs]
    return float(np.median(ers)), float(np.median(ets))


FAILED = (math.inf, math.inf)


# ---------------------------------------------------------------------------
# studies


def noise_sweep(sigmas, trials: int = 20, n_scenes: int = 5,
                outlier_rate: float = 0.0) -> list:
    """Median errors as camera-mask corner jitter grows."""
    rows = []
    for sigma in sigmas:
        noise = NoiseSpec(pixel_sigma=float(sigma), outlier_rate=outlier_rate)
        pairs = []
        for trial in range(trials):
            try:
                pairs.append(run_trial(trial, n_scenes, noise))
            except CalibrationError:
                pairs.append(FAILED)
        e_r, e_t = _median_errors(pairs)
        rows.append(SweepRow("%g" % sigma, e_r, e_t))
    return rows


def ablation_arms() -> dict:
    """Corner-cost consistency terms: both, structural only, neither."""
    return {
        "structural+textural": MatchConfig(),
        "structural": MatchConfig(use_textural=False),
        "neither": MatchConfig(use_structural=False, use_textural=False),
    }


def ablation_sweep(trials: int = 50, n_scenes: int = 5,
                   noise: NoiseSpec = NoiseSpec(pixel_sigma=1.0)) -> list:
    """Re-match the same prepared scenes under each consistency setting."""
    arms = ablation_arms()
    pairs = {name: [] for name in arms}
    for trial in range(trials):
        base = PipelineSettings(seed=trial)
        datas = make_trial_scenes(trial, n_scenes, noise)
        preps = prepare_trial(datas, base)
        for name, match in arms.items():
            settings = replace(base, match=match)
            try:
                outcome = calibrate_prepared(preps, datas[0].intrinsics,
                                             settings)
                pairs[name].append(score_outcome(outcome))
            except CalibrationError:
                pairs[name].append(FAILED)
    rows = []
    for name in arms:
        e_r, e_t = _median_errors(pairs[name])
        rows.append(SweepRow(name, e_r, e_t))
    return rows


def scene_count_sweep(counts=(1, 5), trials: int = 50,
                      noise: NoiseSpec = STANDARD_NOISE) -> list:
    """Joint calibration over the first k of each trial's prepared scenes."""
    counts = sorted(counts)
    pairs = {k: [] for k in counts}
    for trial in range(trials):
        settings = PipelineSettings(seed=trial)
        datas = make_trial_scenes(trial, counts[-1], noise)
        preps = prepare_trial(datas, settings)
        for k in counts:
            try:
                outcome = calibrate_prepared(preps[:k], datas[0].intrinsics,
                                             settings)
                pairs[k].append(score_outcome(outcome))
            except CalibrationError:
                pairs[k].append(FAILED)
    return [SweepRow(str(k), *_median_errors(pairs[k])) for k in counts]


def density_sweep(parts: int = 6, trials: int = 30,
                  noise: NoiseSpec = NoiseSpec(pixel_sigma=1.0)) -> list:
    """Calibration error as the cloud thins to 1/parts of its points.

    Generated clouds are stored pre-shuffled, so the cumulative order-based
    splits behave like uniform random subsampling at increasing density.
    """
    pairs = {level: [] for level in range(1, parts + 1)}
    for trial in range(trials):
        settings = PipelineSettings(seed=trial, single_scene=True)
        data = make_trial_scenes(trial, 1, noise)[0]
        unions = density_split(data.cloud, parts)
        for level, cloud in enumerate(unions, start=1):
            thinned = replace(data, cloud=cloud)
            try:
                preps = prepare_trial([thinned], settings)
                outcome = calibrate_prepared(preps, data.intrinsics, settings)
                pairs[level].append(score_outcome(outcome))
            except CalibrationError:
                pairs[level].append(FAILED)
    return [SweepRow("%d/%d" % (level, parts), *_median_errors(pairs[level]))
            for level in sorted(pairs)]


# ---------------------------------------------------------------------------
# CSV emission


def write_rows_csv(path, rows) -> None:
    """One ``parameter,e_r,e_t`` line per swept value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "e_r", "e_t"])
        for row in rows:
            writer.writerow([row.parameter, "%.9g" % row.e_r, "%.9g" % row.e_t])


def read_rows_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [SweepRow(r["parameter"], float(r["e_r"]), float(r["e_t"]))
                for r in reader]
