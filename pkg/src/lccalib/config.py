"""Run configuration: a YAML file naming the scenes, camera, and knobs.

Paths inside the file are resolved relative to the file's own directory, so
a config can travel with its data.  Unknown keys fail loudly instead of
being silently dropped — a typo in a tuning knob should never pass as a
successful run with defaults.
"""

import os
from dataclasses import dataclass, fields, replace

import numpy as np
import yaml

from .errors import FormatError
from .geometry import Intrinsics, Pose
from .matching import MatchConfig
from .optimize import OptimizerConfig
from .pipeline import PipelineSettings


@dataclass(frozen=True)
class ScenePaths:
    """Input files for one scene; depth-side files are optional."""

    cloud: str
    image: str
    masks: str
    depth: str | None = None
    depth_masks: str | None = None


@dataclass
class PipelineConfig:
    scenes: list
    intrinsics: Intrinsics
    output_dir: str
    settings: PipelineSettings
    ground_truth: Pose | None = None


def _as_pose(node, where: str) -> Pose:
    if not isinstance(node, dict):
        raise FormatError("%s must be a mapping" % where)
    if "euler_deg" in node:
        e = node["euler_deg"]
        if len(e) != 3:
            raise FormatError("%s.euler_deg needs 3 angles" % where)
        t = node.get("t", (0.0, 0.0, 0.0))
        return Pose.from_euler_deg(float(e[0]), float(e[1]), float(e[2]),
                                   [float(v) for v in t])
    if "R" in node:
        R = np.asarray(node["R"], dtype=float).reshape(3, 3)
        t = np.asarray(node.get("t", [0.0, 0.0, 0.0]), dtype=float)
        return Pose(R, t)
    raise FormatError("%s needs either euler_deg or R" % where)


def _apply_overrides(obj, node, where: str):
    """Dataclass copy with the mapping's keys replaced; unknown keys raise."""
    if node is None:
        return obj
    if not isinstance(node, dict):
        raise FormatError("%s must be a mapping" % where)
    known = {f.name for f in fields(obj)}
    bad = set(node) - known
    if bad:
        raise FormatError("%s has unknown keys: %s"
                          % (where, ", ".join(sorted(bad))))
    return replace(obj, **node)


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def missing_files(sp: ScenePaths) -> list:
    """Paths of this scene's inputs that do not exist on disk.

    Kept separate from structural validation so one scene's absent file
    skips that scene instead of failing the whole run.
    """
    return [p for p in (sp.cloud, sp.image, sp.masks, sp.depth, sp.depth_masks)
            if p is not None and not os.path.exists(p)]


def load_config(path) -> PipelineConfig:
    """Read and validate a run configuration.

    Structural problems (missing/unknown keys, bad shapes) raise; whether
    the referenced files exist is the caller's per-scene concern (see
    ``missing_files``).

    Raises:
        FormatError: malformed document.
    """
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise FormatError("config root must be a mapping")
    base_dir = os.path.dirname(os.path.abspath(path))

    if "intrinsics" not in doc:
        raise FormatError("config needs an intrinsics section")
    intr_node = doc["intrinsics"]
    needed = {"fx", "fy", "cx", "cy", "width", "height"}
    if not isinstance(intr_node, dict) or not needed <= set(intr_node):
        raise FormatError("intrinsics needs keys: %s"
                          % ", ".join(sorted(needed)))
    intr = Intrinsics(float(intr_node["fx"]), float(intr_node["fy"]),
                      float(intr_node["cx"]), float(intr_node["cy"]),
                      int(intr_node["width"]), int(intr_node["height"]))

    raw_scenes = doc.get("scenes")
    if not raw_scenes:
        raise FormatError("config lists no scenes")
    scenes = []
    for i, node in enumerate(raw_scenes):
        if not isinstance(node, dict):
            raise FormatError("scene %d must be a mapping" % i)
        for key in ("cloud", "image", "masks"):
            if key not in node:
                raise FormatError("scene %d is missing %r" % (i, key))
        scenes.append(ScenePaths(
            cloud=_resolve(base_dir, node["cloud"]),
            image=_resolve(base_dir, node["image"]),
            masks=_resolve(base_dir, node["masks"]),
            depth=_resolve(base_dir, node["depth"]) if node.get("depth") else None,
            depth_masks=(_resolve(base_dir, node["depth_masks"])
                         if node.get("depth_masks") else None),
        ))

    settings = PipelineSettings(seed=int(doc.get("seed", 0)))
    node = dict(doc.get("settings") or {})
    match_node = node.pop("match", None)
    opt_node = node.pop("optimizer", None)
    guess_node = node.pop("initial_guess", None)
    settings = _apply_overrides(settings, node, "settings")
    settings = replace(
        settings,
        match=_apply_overrides(MatchConfig(), match_node, "settings.match"),
        optimizer=_apply_overrides(OptimizerConfig(), opt_node,
                                   "settings.optimizer"),
    )
    if guess_node is not None:
        settings = replace(settings,
                           initial_guess=_as_pose(guess_node,
                                                  "settings.initial_guess"))
    if "initial_guess" in doc:
        settings = replace(settings,
                           initial_guess=_as_pose(doc["initial_guess"],
                                                  "initial_guess"))

    gt = _as_pose(doc["ground_truth"], "ground_truth") \
        if "ground_truth" in doc else None

    out_dir = _resolve(base_dir, doc.get("output_dir", "calib_out"))
    return PipelineConfig(scenes, intr, out_dir, settings, gt)
