"""Versioned on-disk formats: scenes, candidate sets, reports, configs.

Everything human-facing is JSON (sorted keys, two-space indent, trailing
newline) so fixtures diff cleanly and fixed-seed runs are byte-identical.
Model checkpoints reuse the binary MLP container with a `kind` tag.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import (
    AggregationResult,
    ClusterConfig,
    FilterConfig,
    ScaleRegressor,
    SymmetrySpec,
)
from .annotation import KeypointSet, Observation2D3D
from .candidates import PoseCandidateSet
from .diffusion import (
    DEFAULT_SCHEDULE,
    AnalyticMixture,
    NoiseSchedule,
    ScoreNet,
)
from .energy import EnergyNet
from .geometry import CameraIntrinsics, Pose, Rotation, ScaledPose
from .metrics import EvalInstance, MetricReport
from .nets import CheckpointError, load_mlp_container, save_mlp_container
from .sampler import SamplerConfig

FORMAT_VERSION = 1


class ParseError(ValueError):
    """Document is not well-formed (bad JSON or missing structure)."""


class ValidationError(ValueError):
    """Well-formed document violating format invariants; lists all violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# ---------------------------------------------------------------- primitives

def _dump(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _load(path, kind: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise ValidationError(
            [f"{path}: format version {version!r} not supported (expected {FORMAT_VERSION})"])
    if doc.get("kind") != kind:
        raise ValidationError([f"{path}: kind {doc.get('kind')!r}, expected {kind!r}"])
    return doc


def _header(kind: str) -> dict:
    return {"version": FORMAT_VERSION, "kind": kind}


def rotation_to_doc(r: Rotation) -> list[float]:
    return [float(x) for x in r.q]


def rotation_from_doc(q, where: str, violations: list[str]) -> Rotation:
    q = np.asarray(q, dtype=float)
    if q.shape != (4,):
        violations.append(f"{where}: quaternion must have 4 components")
        return Rotation.identity()
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-6:
        violations.append(f"{where}: quaternion norm {norm} outside unit tolerance 1e-6")
        return Rotation.identity()
    if abs(norm - 1.0) > 1e-9:
        warnings.warn(f"{where}: quaternion norm {norm} renormalized")
    return Rotation(q / norm)


def pose_to_doc(p: Pose) -> dict:
    return {"rotation": rotation_to_doc(p.rotation),
            "translation": [float(x) for x in p.translation]}


def pose_from_doc(doc, where: str, violations: list[str]) -> Pose:
    rot = rotation_from_doc(doc.get("rotation", []), where, violations)
    t = np.asarray(doc.get("translation", []), dtype=float)
    if t.shape != (3,):
        violations.append(f"{where}: translation must have 3 components")
        t = np.zeros(3)
    return Pose(rot, t)


def scaled_pose_to_doc(sp: ScaledPose) -> dict:
    doc = pose_to_doc(sp.pose)
    doc["scale"] = [float(x) for x in sp.scale]
    return doc


def scaled_pose_from_doc(doc, where: str, violations: list[str]) -> ScaledPose:
    pose = pose_from_doc(doc, where, violations)
    s = np.asarray(doc.get("scale", []), dtype=float)
    if s.shape != (3,) or np.any(s <= 0):
        violations.append(f"{where}: scale must be 3 positive extents")
        s = np.ones(3)
    return ScaledPose(pose, s)


def symmetry_to_doc(sym: SymmetrySpec) -> dict:
    doc = {"kind": sym.kind}
    if sym.kind == "continuous":
        doc["axis"] = [float(x) for x in sym.axis]
    elif sym.kind == "discrete":
        doc["group"] = [rotation_to_doc(g) for g in sym.group]
    return doc


def symmetry_from_doc(doc, where: str, violations: list[str]) -> SymmetrySpec:
    kind = doc.get("kind", "none")
    try:
        if kind == "none":
            return SymmetrySpec()
        if kind == "continuous":
            return SymmetrySpec("continuous", axis=doc["axis"])
        if kind == "discrete":
            group = tuple(rotation_from_doc(q, where, violations)
                          for q in doc.get("group", []))
            return SymmetrySpec("discrete", group=group)
        raise ValueError(f"unknown symmetry kind {kind!r}")
    except (KeyError, ValueError) as e:
        violations.append(f"{where}: {e}")
        return SymmetrySpec()


def intrinsics_to_doc(k: CameraIntrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height}


def intrinsics_from_doc(doc, where: str, violations: list[str]) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(doc["fx"], doc["fy"], doc["cx"], doc["cy"],
                                doc["width"], doc["height"])
    except (KeyError, ValueError) as e:
        violations.append(f"{where}: bad intrinsics: {e}")
        return CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 2, 2)


# ---------------------------------------------------------------- scene file

@dataclass
class FrameRecord:
    index: int
    intrinsics: CameraIntrinsics
    camera_pose: Pose  # camera-to-world


@dataclass
class ObjectRecord:
    object_id: str
    category: str
    symmetry: SymmetrySpec = SymmetrySpec()
    poses: dict[int, ScaledPose] = field(default_factory=dict)  # frame -> pose
    cloud_ref: str | None = None
    condition: np.ndarray | None = None
    keypoints: KeypointSet | None = None


@dataclass
class SceneFile:
    frames: list[FrameRecord]
    objects: list[ObjectRecord]
    scene_id: str = "scene"


def save_scene(scene: SceneFile, path) -> None:
    doc = _header("scene")
    doc["scene_id"] = scene.scene_id
    doc["frames"] = [{"index": f.index,
                      "intrinsics": intrinsics_to_doc(f.intrinsics),
                      "camera_pose": pose_to_doc(f.camera_pose)}
                     for f in scene.frames]
    objs = []
    for o in scene.objects:
        entry = {
            "object_id": o.object_id,
            "category": o.category,
            "symmetry": symmetry_to_doc(o.symmetry),
            "poses": {str(k): scaled_pose_to_doc(v) for k, v in sorted(o.poses.items())},
        }
        if o.cloud_ref is not None:
            entry["cloud_ref"] = o.cloud_ref
        if o.condition is not None:
            entry["condition"] = [float(x) for x in o.condition]
        if o.keypoints is not None:
            entry["keypoints"] = {
                "model_points": [[float(x) for x in p] for p in o.keypoints.model_points],
                "pixels": {str(f): [[int(i), float(px[0]), float(px[1])]
                                    for i, px in lst]
                           for f, lst in sorted(o.keypoints.pixels.items())},
            }
        objs.append(entry)
    doc["objects"] = objs
    _dump(doc, path)


def load_scene(path) -> SceneFile:
    doc = _load(path, "scene")
    violations: list[str] = []
    frames = []
    for i, f in enumerate(doc.get("frames", [])):
        where = f"frames[{i}]"
        frames.append(FrameRecord(
            int(f.get("index", i)),
            intrinsics_from_doc(f.get("intrinsics", {}), where, violations),
            pose_from_doc(f.get("camera_pose", {}), where + ".camera_pose", violations)))
    frame_ids = {f.index for f in frames}
    objects = []
    for j, o in enumerate(doc.get("objects", [])):
        where = f"objects[{j}]"
        poses = {}
        for k, sp in o.get("poses", {}).items():
            idx = int(k)
            if idx not in frame_ids:
                violations.append(f"{where}: pose references missing frame {idx}")
            poses[idx] = scaled_pose_from_doc(sp, f"{where}.poses[{k}]", violations)
        kp = None
        if "keypoints" in o:
            kp_doc = o["keypoints"]
            pixels = {}
            for f, lst in kp_doc.get("pixels", {}).items():
                idx = int(f)
                if idx not in frame_ids:
                    violations.append(f"{where}: keypoints reference missing frame {idx}")
                pixels[idx] = [(int(i), np.array([u, v])) for i, u, v in lst]
            kp = KeypointSet(np.asarray(kp_doc.get("model_points", []), dtype=float),
                             pixels)
        cond = o.get("condition")
        objects.append(ObjectRecord(
            str(o.get("object_id", f"object-{j}")),
            str(o.get("category", "uncategorized")),
            symmetry_from_doc(o.get("symmetry", {}), where + ".symmetry", violations),
            poses,
            o.get("cloud_ref"),
            None if cond is None else np.asarray(cond, dtype=float),
            kp))
    if violations:
        raise ValidationError(violations)
    return SceneFile(frames, objects, str(doc.get("scene_id", "scene")))


# ----------------------------------------------------- candidate sets / reports

def save_candidates(cset: PoseCandidateSet, path) -> None:
    doc = _header("candidates")
    doc["condition_id"] = cset.condition_id
    doc["candidates"] = [pose_to_doc(p) for p in cset.candidates]
    doc["energies"] = None if cset.energies is None \
        else [float(e) for e in cset.energies]
    _dump(doc, path)


def load_candidates(path) -> PoseCandidateSet:
    doc = _load(path, "candidates")
    violations: list[str] = []
    poses = [pose_from_doc(p, f"candidates[{i}]", violations)
             for i, p in enumerate(doc.get("candidates", []))]
    if violations:
        raise ValidationError(violations)
    energies = doc.get("energies")
    return PoseCandidateSet(poses, energies, str(doc.get("condition_id", "")))


def save_aggregation(result: AggregationResult, path) -> None:
    doc = _header("aggregation")
    doc["pose"] = pose_to_doc(result.pose)
    doc["cluster_size"] = result.cluster_size
    doc["member_indices"] = list(result.member_indices)
    doc["all_noise_fallback"] = result.all_noise_fallback
    _dump(doc, path)


def load_aggregation(path) -> AggregationResult:
    doc = _load(path, "aggregation")
    violations: list[str] = []
    pose = pose_from_doc(doc.get("pose", {}), "pose", violations)
    if violations:
        raise ValidationError(violations)
    return AggregationResult(pose, int(doc["cluster_size"]),
                             [int(i) for i in doc["member_indices"]],
                             bool(doc["all_noise_fallback"]))


def save_metric_report(report: MetricReport, path) -> None:
    _dump(metric_report_to_doc(report), path)


def metric_report_to_doc(report: MetricReport) -> dict:
    doc = _header("metric_report")
    doc["auc_iou"] = {str(n): v for n, v in sorted(report.auc_iou.items())}
    doc["vus"] = {f"{n}deg_{m}cm": v for (n, m), v in sorted(report.vus.items())}
    doc["per_category"] = {
        cat: {"auc_iou": {str(n): v for n, v in sorted(c["auc_iou"].items())},
              "vus": {f"{n}deg_{m}cm": v for (n, m), v in sorted(c["vus"].items())},
              "instance_count": c["instance_count"]}
        for cat, c in sorted(report.per_category.items())}
    doc["instance_count"] = report.instance_count
    return doc


def save_instances(instances: list[EvalInstance], path) -> None:
    doc = _header("instances")
    doc["instances"] = [{"gt": scaled_pose_to_doc(i.gt),
                         "pred": scaled_pose_to_doc(i.pred),
                         "symmetry": symmetry_to_doc(i.symmetry),
                         "category": i.category}
                        for i in instances]
    _dump(doc, path)


def load_instances(path) -> list[EvalInstance]:
    doc = _load(path, "instances")
    violations: list[str] = []
    out = []
    for i, entry in enumerate(doc.get("instances", [])):
        where = f"instances[{i}]"
        out.append(EvalInstance(
            scaled_pose_from_doc(entry.get("gt", {}), where + ".gt", violations),
            scaled_pose_from_doc(entry.get("pred", {}), where + ".pred", violations),
            symmetry_from_doc(entry.get("symmetry", {}), where + ".symmetry", violations),
            str(entry.get("category", "uncategorized"))))
    if violations:
        raise ValidationError(violations)
    return out


def save_correspondences(observations: list[Observation2D3D], path) -> None:
    doc = _header("correspondences")
    doc["observations"] = [{"world_point": [float(x) for x in o.world_point],
                            "pixel": [float(x) for x in o.pixel],
                            "frame_index": o.frame_index}
                           for o in observations]
    _dump(doc, path)


def load_correspondences(path) -> list[Observation2D3D]:
    doc = _load(path, "correspondences")
    try:
        return [Observation2D3D(np.asarray(o["world_point"], dtype=float),
                                np.asarray(o["pixel"], dtype=float),
                                int(o["frame_index"]))
                for o in doc.get("observations", [])]
    except (KeyError, ValueError) as e:
        raise ValidationError([f"bad observation record: {e}"]) from e


def save_training_data(data: list[tuple[np.ndarray, "Condition"]], path) -> None:
    doc = _header("training_data")
    doc["samples"] = [{"pose": [float(x) for x in np.asarray(p, dtype=float)],
                       "condition": [float(x) for x in c.feature],
                       "object_id": c.object_id}
                      for p, c in data]
    _dump(doc, path)


def load_training_data(path) -> list[tuple[np.ndarray, "Condition"]]:
    from .diffusion import Condition

    doc = _load(path, "training_data")
    try:
        return [(np.asarray(s["pose"], dtype=float),
                 Condition(np.asarray(s["condition"], dtype=float),
                           str(s.get("object_id", ""))))
                for s in doc.get("samples", [])]
    except (KeyError, ValueError) as e:
        raise ValidationError([f"bad training sample: {e}"]) from e


def save_conditions(conds: list["Condition"], path) -> None:
    doc = _header("conditions")
    doc["conditions"] = [{"feature": [float(x) for x in c.feature],
                          "object_id": c.object_id} for c in conds]
    _dump(doc, path)


def load_conditions(path) -> list["Condition"]:
    from .diffusion import Condition

    doc = _load(path, "conditions")
    try:
        return [Condition(np.asarray(c["feature"], dtype=float),
                          str(c.get("object_id", "")))
                for c in doc.get("conditions", [])]
    except (KeyError, ValueError) as e:
        raise ValidationError([f"bad condition record: {e}"]) from e


# ------------------------------------------------------------------- mixtures

def save_mixture(mix: AnalyticMixture, path) -> None:
    doc = _header("mixture")
    doc["means"] = [[float(x) for x in m] for m in mix.means]
    doc["stds"] = [float(s) for s in mix.stds]
    doc["weights"] = [float(w) for w in mix.weights]
    doc["schedule"] = {"sigma_min": mix.schedule.sigma_min,
                       "sigma_max": mix.schedule.sigma_max,
                       "epsilon": mix.schedule.epsilon}
    _dump(doc, path)


def load_mixture(path) -> AnalyticMixture:
    doc = _load(path, "mixture")
    sched_doc = doc.get("schedule", {})
    try:
        schedule = NoiseSchedule(sched_doc.get("sigma_min", 0.01),
                                 sched_doc.get("sigma_max", 50.0),
                                 sched_doc.get("epsilon", 1e-3))
        return AnalyticMixture(np.asarray(doc["means"], dtype=float),
                               np.asarray(doc["stds"], dtype=float),
                               np.asarray(doc["weights"], dtype=float)
                               if "weights" in doc else None,
                               schedule)
    except (KeyError, ValueError) as e:
        raise ValidationError([f"bad mixture document: {e}"]) from e


# ----------------------------------------------------------------- run config

@dataclass(frozen=True)
class RunConfig:
    schedule: NoiseSchedule = DEFAULT_SCHEDULE
    sampler: SamplerConfig = SamplerConfig()
    filter: FilterConfig = FilterConfig()
    cluster: ClusterConfig = ClusterConfig()
    seed: int = 0


def save_run_config(cfg: RunConfig, path) -> None:
    doc = _header("run_config")
    doc["schedule"] = {"sigma_min": cfg.schedule.sigma_min,
                       "sigma_max": cfg.schedule.sigma_max,
                       "epsilon": cfg.schedule.epsilon}
    doc["sampler"] = {"k": cfg.sampler.k, "steps": cfg.sampler.steps,
                      "integrator": cfg.sampler.integrator, "seed": cfg.sampler.seed}
    doc["filter"] = {"delta": cfg.filter.delta}
    doc["cluster"] = {"eps": cfg.cluster.eps, "min_pts": cfg.cluster.min_pts}
    doc["seed"] = cfg.seed
    _dump(doc, path)


def load_run_config(path) -> RunConfig:
    doc = _load(path, "run_config")
    try:
        sd = doc.get("schedule", {})
        schedule = NoiseSchedule(sd.get("sigma_min", 0.01), sd.get("sigma_max", 50.0),
                                 sd.get("epsilon", 1e-3))
        sp = doc.get("sampler", {})
        sampler = SamplerConfig(sp.get("k", 50), sp.get("steps", 200),
                                sp.get("integrator", "euler"), schedule,
                                sp.get("seed", 0))
        return RunConfig(schedule, sampler,
                         FilterConfig(doc.get("filter", {}).get("delta", 0.40)),
                         ClusterConfig(doc.get("cluster", {}).get("eps", 0.45),
                                       doc.get("cluster", {}).get("min_pts", 5)),
                         int(doc.get("seed", 0)))
    except ValueError as e:
        raise ValidationError([f"bad run config: {e}"]) from e


# ---------------------------------------------------------------- checkpoints

def _schedule_meta(s: NoiseSchedule) -> dict:
    return {"sigma_min": s.sigma_min, "sigma_max": s.sigma_max, "epsilon": s.epsilon}


def _schedule_from_meta(meta: dict) -> NoiseSchedule:
    return NoiseSchedule(meta["sigma_min"], meta["sigma_max"], meta["epsilon"])


def save_score_net(net: ScoreNet, path) -> None:
    save_mlp_container(path, net.mlp, {"kind": "score_net",
                                       "schedule": _schedule_meta(net.schedule),
                                       "feature_dim": net.feature_dim,
                                       "seed": net.seed})


def load_score_net(path) -> ScoreNet:
    mlp, meta = load_mlp_container(path)
    if meta.get("kind") != "score_net":
        raise CheckpointError(f"{path}: kind {meta.get('kind')!r}, expected 'score_net'")
    return ScoreNet(mlp, _schedule_from_meta(meta["schedule"]),
                    meta["feature_dim"], meta.get("seed", 0))


def save_energy_net(net: EnergyNet, path) -> None:
    save_mlp_container(path, net.mlp, {"kind": "energy_net",
                                       "schedule": _schedule_meta(net.schedule),
                                       "feature_dim": net.feature_dim,
                                       "seed": net.seed})


def load_energy_net(path) -> EnergyNet:
    mlp, meta = load_mlp_container(path)
    if meta.get("kind") != "energy_net":
        raise CheckpointError(f"{path}: kind {meta.get('kind')!r}, expected 'energy_net'")
    return EnergyNet(mlp, _schedule_from_meta(meta["schedule"]),
                     meta["feature_dim"], meta.get("seed", 0))


def save_scale_regressor(reg: ScaleRegressor, path) -> None:
    save_mlp_container(path, reg.mlp, {"kind": "scale_regressor",
                                       "feature_dim": reg.feature_dim,
                                       "seed": reg.seed})


def load_scale_regressor(path) -> ScaleRegressor:
    mlp, meta = load_mlp_container(path)
    if meta.get("kind") != "scale_regressor":
        raise CheckpointError(
            f"{path}: kind {meta.get('kind')!r}, expected 'scale_regressor'")
    return ScaleRegressor(mlp, meta["feature_dim"], meta.get("seed", 0))
