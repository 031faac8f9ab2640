import json
import os

import numpy as np
import pytest

from posepipe.cli import main
from posepipe.fileio import (
    load_aggregation,
    load_candidates,
    save_instances,
    save_scene,
)
from posepipe.geometry import Pose, Rotation, ScaledPose, geodesic_distance
from posepipe.metrics import EvalInstance

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")
BIMODAL = os.path.join(FIXTURES, "bimodal_mixture.json")
SCENE = os.path.join(FIXTURES, "synthetic_scene.json")

MODE_A = Rotation.identity()
MODE_B = Rotation.from_axis_angle([0, 0, 1], np.pi)


def test_usage_error_unknown_flag(capsys):
    assert main(["sample", "--no-such-flag"]) == 2
    assert "usage" in capsys.readouterr().err


def test_usage_error_unknown_subcommand():
    assert main(["frobnicate"]) == 2


def test_missing_file_is_validation_error(tmp_path, capsys):
    assert main(["sample", "--mixture", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o.json")]) == 1
    assert "error" in capsys.readouterr().err


class TestEvaluate:
    def test_perfect_predictions_all_100(self, tmp_path, capsys):
        sp = ScaledPose(Pose.identity(), np.array([0.1, 0.1, 0.1]))
        insts = [EvalInstance(sp, sp, category=c) for c in ("mug", "bowl")]
        inst_path = tmp_path / "inst.json"
        save_instances(insts, inst_path)
        out = tmp_path / "report.json"
        assert main(["evaluate", "--instances", str(inst_path),
                     "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert all(v == 100.0 for v in report["auc_iou"].values())
        assert all(v == 100.0 for v in report["vus"].values())
        printed = json.loads(capsys.readouterr().out)
        assert printed == report

    def test_empty_instances_exit_1(self, tmp_path, capsys):
        inst_path = tmp_path / "inst.json"
        save_instances([], inst_path)
        assert main(["evaluate", "--instances", str(inst_path),
                     "--out", str(tmp_path / "r.json")]) == 1
        assert "no instances" in capsys.readouterr().err


class TestSampleAggregate:
    def test_end_to_end_bimodal_within_5_degrees(self, tmp_path):
        cands = tmp_path / "cands.json"
        report = tmp_path / "agg.json"
        assert main(["sample", "--mixture", BIMODAL, "--k", "50",
                     "--steps", "200", "--seed", "3",
                     "--out", str(cands)]) == 0
        assert main(["aggregate", "--candidates", str(cands),
                     "--mixture", BIMODAL, "--out", str(report)]) == 0
        pose = load_aggregation(report).pose
        err = min(geodesic_distance(pose.rotation, MODE_A),
                  geodesic_distance(pose.rotation, MODE_B))
        assert np.degrees(err) < 5.0

    def test_seeded_rerun_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            cands = tmp_path / f"cands_{name}.json"
            agg = tmp_path / f"agg_{name}.json"
            assert main(["sample", "--mixture", BIMODAL, "--k", "20",
                         "--steps", "100", "--seed", "11",
                         "--out", str(cands)]) == 0
            assert main(["aggregate", "--candidates", str(cands),
                         "--mixture", BIMODAL, "--out", str(agg)]) == 0
            outs.append((cands.read_bytes(), agg.read_bytes()))
        assert outs[0] == outs[1]

    def test_different_seeds_differ(self, tmp_path):
        blobs = []
        for seed in ("1", "2"):
            cands = tmp_path / f"c{seed}.json"
            assert main(["sample", "--mixture", BIMODAL, "--k", "5",
                         "--steps", "50", "--seed", seed,
                         "--out", str(cands)]) == 0
            blobs.append(cands.read_bytes())
        assert blobs[0] != blobs[1]


class TestAnnotateSolve:
    def test_object_mode_recovers_scene_pose(self, tmp_path):
        out = tmp_path / "fit.json"
        assert main(["annotate-solve", "--scene", SCENE, "--mode", "object",
                     "--object-id", "mug-0", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["kind"] == "object_pose_fit"
        assert doc["rms_pixel_residual"] < 1e-6

    def test_cameras_mode_round_trips_scene(self, tmp_path):
        from posepipe.fileio import load_scene, save_correspondences
        from posepipe.annotation import Observation2D3D

        scene = load_scene(SCENE)
        rng = np.random.default_rng(0)
        points = rng.uniform(-0.3, 0.3, size=(10, 3))
        obs = []
        for f in scene.frames:
            wc = f.camera_pose.inverse()
            for p in points:
                cam = wc.apply(p)
                px = np.array([f.intrinsics.fx * cam[0] / cam[2] + f.intrinsics.cx,
                               f.intrinsics.fy * cam[1] / cam[2] + f.intrinsics.cy])
                obs.append(Observation2D3D(p, px, f.index))
        obs_path = tmp_path / "obs.json"
        save_correspondences(obs, obs_path)
        out = tmp_path / "refined.json"
        assert main(["annotate-solve", "--scene", SCENE, "--mode", "cameras",
                     "--correspondences", str(obs_path), "--out", str(out)]) == 0
        refined = load_scene(out)
        for a, b in zip(refined.frames, scene.frames):
            assert geodesic_distance(a.camera_pose.rotation,
                                     b.camera_pose.rotation) < 1e-6

    def test_unknown_object_exit_1(self, tmp_path):
        assert main(["annotate-solve", "--scene", SCENE, "--mode", "object",
                     "--object-id", "ghost", "--out", str(tmp_path / "x.json")]) == 1


class TestTrack:
    def test_track_produces_one_pose_per_frame(self, tmp_path):
        from posepipe.candidates import PoseCandidateSet
        from posepipe.diffusion import Condition
        from posepipe.fileio import save_candidates, save_conditions

        conds = tmp_path / "conds.json"
        save_conditions([Condition(np.zeros(1)) for _ in range(3)], conds)
        init = tmp_path / "init.json"
        save_candidates(PoseCandidateSet(
            [Pose(Rotation.identity(), np.array([0.1, 0.0, 0.5]))]), init)
        out = tmp_path / "track.json"
        assert main(["track", "--mixture", BIMODAL, "--conditions", str(conds),
                     "--init", str(init), "--k", "10", "--steps", "50",
                     "--seed", "0", "--out", str(out)]) == 0
        assert len(load_candidates(out)) == 3
