"""Command-line surface for the pose pipeline.

Exit codes: 0 success, 1 validation/data error, 2 usage error. All outputs
are written through the deterministic serializers in `fileio`, so fixed
seeds and inputs reproduce files byte-for-byte.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import fileio
from .aggregation import ClusterConfig, FilterConfig, aggregate_detailed, rank_and_filter
from .annotation import (
    DegenerateConfigurationError,
    UnderConstrainedError,
    bundle_adjust,
    fit_object_pose,
)
from .annotation import CameraTrack
from .diffusion import Condition, NoiseSchedule, TrainConfig, train_score
from .energy import AnalyticLogDensity, distill_energy
from .geometry import GeometryError
from .metrics import metric_report
from .nets import CheckpointError
from .sampler import SamplerConfig, sample_candidates, track_sequence


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit, so we control codes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="posepipe", description="Probabilistic 6D pose pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-score", help="train a score network")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=4000)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--hidden", default="256,256,256")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-final", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("distill-energy", help="distill an energy network from a score")
    d.add_argument("--score", help="score checkpoint (teacher)")
    d.add_argument("--mixture", help="analytic mixture as teacher instead of a checkpoint")
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--steps", type=int, default=1500)
    d.add_argument("--batch-size", type=int, default=128)
    d.add_argument("--hidden", default="128,128")
    d.add_argument("--lr", type=float, default=1e-3)
    d.add_argument("--lr-final", type=float, default=2e-4)
    d.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("sample", help="draw pose candidates with the PF-ODE sampler")
    s.add_argument("--score", help="score checkpoint")
    s.add_argument("--mixture", help="analytic mixture file as the score source")
    s.add_argument("--feature", default="", help="comma-separated condition vector")
    s.add_argument("--object-id", default="")
    s.add_argument("--k", type=int, default=50)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--integrator", choices=("euler", "rk4"), default="euler")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    a = sub.add_parser("aggregate", help="rank, cluster, and pool candidates")
    a.add_argument("--candidates", required=True)
    a.add_argument("--mixture", help="analytic energy source for ranking")
    a.add_argument("--energy", help="energy checkpoint for ranking")
    a.add_argument("--feature", default="", help="condition vector for the energy net")
    a.add_argument("--delta", type=float, default=0.40)
    a.add_argument("--eps", type=float, default=0.45)
    a.add_argument("--min-pts", type=int, default=5)
    a.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="compute pose metrics over instances")
    e.add_argument("--instances", required=True)
    e.add_argument("--out", required=True)

    tr = sub.add_parser("track", help="warm-start tracking over a condition sequence")
    tr.add_argument("--score", help="score checkpoint")
    tr.add_argument("--mixture", help="analytic mixture as the score source")
    tr.add_argument("--conditions", required=True)
    tr.add_argument("--init", required=True, help="candidates file; first pose is the start")
    tr.add_argument("--t0", type=float, default=0.3)
    tr.add_argument("--k", type=int, default=50)
    tr.add_argument("--steps", type=int, default=200)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True)

    an = sub.add_parser("annotate-solve", help="bundle adjust cameras or fit object poses")
    an.add_argument("--scene", required=True)
    an.add_argument("--mode", choices=("cameras", "object"), required=True)
    an.add_argument("--correspondences", help="2D-3D observations (cameras mode)")
    an.add_argument("--object-id", help="object with keypoints to solve (object mode)")
    an.add_argument("--out", required=True)

    sv = sub.add_parser("serve", help="run the annotation refinement HTTP service")
    sv.add_argument("--scene", required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--keyframes", type=int, default=5)
    return p


def _parse_hidden(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise fileio.ValidationError([f"bad --hidden value {text!r}"]) from exc


def _parse_feature(text: str, fallback_dim: int = 1) -> np.ndarray:
    if not text.strip():
        return np.zeros(fallback_dim)
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise fileio.ValidationError([f"bad --feature value {text!r}"]) from exc


def _score_source(args):
    """Score field from either a checkpoint or an analytic mixture file."""
    if getattr(args, "mixture", None):
        return fileio.load_mixture(args.mixture)
    if getattr(args, "score", None):
        return fileio.load_score_net(args.score)
    raise fileio.ValidationError(["one of --score / --mixture is required"])


def _cmd_train_score(args) -> int:
    data = fileio.load_training_data(args.data)
    if not data:
        raise fileio.ValidationError(["training data file has no samples"])
    cfg = TrainConfig(batch_size=args.batch_size, steps=args.steps, lr=args.lr,
                      lr_final=args.lr_final, seed=args.seed,
                      hidden=_parse_hidden(args.hidden),
                      feature_dim=len(data[0][1].feature))
    net = train_score(data, cfg)
    fileio.save_score_net(net, args.out)
    print(f"wrote score checkpoint {args.out}")
    return 0


def _cmd_distill_energy(args) -> int:
    data = fileio.load_training_data(args.data)
    if not data:
        raise fileio.ValidationError(["training data file has no samples"])
    teacher = _score_source(args)
    sched = getattr(teacher, "schedule", None) or NoiseSchedule()
    cfg = TrainConfig(batch_size=args.batch_size, steps=args.steps, lr=args.lr,
                      lr_final=args.lr_final, seed=args.seed,
                      hidden=_parse_hidden(args.hidden),
                      feature_dim=len(data[0][1].feature), schedule=sched)
    net = distill_energy(teacher, data, cfg)
    fileio.save_energy_net(net, args.out)
    print(f"wrote energy checkpoint {args.out}")
    return 0


def _cmd_sample(args) -> int:
    field = _score_source(args)
    fallback = getattr(field, "feature_dim", 1)
    cond = Condition(_parse_feature(args.feature, fallback), args.object_id)
    cfg = SamplerConfig(k=args.k, steps=args.steps, integrator=args.integrator,
                        schedule=field.schedule, seed=args.seed)
    cset = sample_candidates(field, cond, cfg)
    fileio.save_candidates(cset, args.out)
    print(f"wrote {len(cset)} candidates to {args.out}")
    return 0


def _cmd_aggregate(args) -> int:
    cset = fileio.load_candidates(args.candidates)
    energy_field = None
    if args.mixture:
        energy_field = AnalyticLogDensity(fileio.load_mixture(args.mixture))
    elif args.energy:
        energy_field = fileio.load_energy_net(args.energy)
    if energy_field is not None:
        fallback = getattr(energy_field, "feature_dim", 1)
        cond = Condition(_parse_feature(args.feature, fallback), cset.condition_id)
        cset = rank_and_filter(cset, energy_field, cond, FilterConfig(args.delta))
    result = aggregate_detailed(cset, ClusterConfig(args.eps, args.min_pts))
    fileio.save_aggregation(result, args.out)
    print(f"aggregated cluster of {result.cluster_size} -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    instances = fileio.load_instances(args.instances)
    if not instances:
        raise fileio.ValidationError(["instance file has no instances"])
    report = metric_report(instances)
    fileio.save_metric_report(report, args.out)
    print(json.dumps(fileio.metric_report_to_doc(report), sort_keys=True, indent=2))
    return 0


def _cmd_track(args) -> int:
    field = _score_source(args)
    conds = fileio.load_conditions(args.conditions)
    if not conds:
        raise fileio.ValidationError(["conditions file has no frames"])
    init_set = fileio.load_candidates(args.init)
    if len(init_set) < 1:
        raise fileio.ValidationError(["init candidates file is empty"])
    cfg = SamplerConfig(k=args.k, steps=args.steps, schedule=field.schedule,
                        seed=args.seed)
    poses = track_sequence(field, conds, init_set.candidates[0], cfg, t0=args.t0)
    from .candidates import PoseCandidateSet
    fileio.save_candidates(PoseCandidateSet(poses, condition_id="track"), args.out)
    print(f"tracked {len(poses)} frames -> {args.out}")
    return 0


def _cmd_annotate_solve(args) -> int:
    scene = fileio.load_scene(args.scene)
    track = CameraTrack([f.camera_pose for f in scene.frames],
                        scene.frames[0].intrinsics)
    if args.mode == "cameras":
        if not args.correspondences:
            raise fileio.ValidationError(["cameras mode needs --correspondences"])
        obs = fileio.load_correspondences(args.correspondences)
        refined, stats = bundle_adjust(track, obs)
        for frame, pose in zip(scene.frames, refined.poses):
            frame.camera_pose = pose
        fileio.save_scene(scene, args.out)
        print(f"bundle adjusted {len(scene.frames)} frames, "
              f"final cost {stats.final_cost:.6g} -> {args.out}")
        return 0
    # object mode
    matches = [o for o in scene.objects if o.object_id == args.object_id]
    if not matches:
        raise fileio.ValidationError([f"object {args.object_id!r} not in scene"])
    obj = matches[0]
    if obj.keypoints is None:
        raise fileio.ValidationError([f"object {args.object_id!r} has no keypoints"])
    pose, rms, _ = fit_object_pose(obj.keypoints, track)
    doc = {"version": fileio.FORMAT_VERSION, "kind": "object_pose_fit",
           "object_id": obj.object_id, "pose": fileio.pose_to_doc(pose),
           "rms_pixel_residual": rms}
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"fit object pose, rms {rms:.4g} px -> {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(args.scene, keyframe_count=args.keyframes)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "train-score": _cmd_train_score,
    "distill-energy": _cmd_distill_energy,
    "sample": _cmd_sample,
    "aggregate": _cmd_aggregate,
    "evaluate": _cmd_evaluate,
    "track": _cmd_track,
    "annotate-solve": _cmd_annotate_solve,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args)
    except (fileio.ParseError, fileio.ValidationError, CheckpointError,
            UnderConstrainedError, DegenerateConfigurationError, GeometryError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
