"""Regenerate the shipped synthetic fixtures (deterministic)."""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from posepipe.annotation import KeypointSet
from posepipe.diffusion import AnalyticMixture
from posepipe.fileio import (
    FrameRecord,
    ObjectRecord,
    SceneFile,
    save_mixture,
    save_scene,
)
from posepipe.geometry import CameraIntrinsics, Pose, Rotation, ScaledPose, project_point

OUT = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def bimodal_mixture():
    means = np.array([
        [0.10, 0.00, 0.50, 1, 0, 0, 0, 1, 0],    # identity rotation mode
        [0.10, 0.00, 0.50, -1, 0, 0, 0, -1, 0],  # pi about z mode
    ])
    mix = AnalyticMixture(means, np.array([0.02, 0.02]), np.array([0.7, 0.3]))
    save_mixture(mix, os.path.join(OUT, "bimodal_mixture.json"))


def synthetic_scene():
    intr = CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0,
                            width=640, height=480)
    frames = []
    for i in range(6):
        ang = 0.25 * i
        center = np.array([2.0 * np.sin(ang), 0.1 * i, 2.0 * np.cos(ang)])
        z = -center / np.linalg.norm(center)
        x = np.cross([0.0, 1.0, 0.0], z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = Rotation.from_matrix(np.column_stack([x, y, z]))
        frames.append(FrameRecord(i, intr, Pose(rot, center)))

    rng = np.random.default_rng(42)
    model = rng.uniform(-0.08, 0.08, size=(8, 3))
    model[:, 2] += np.linspace(0, 0.04, 8)
    gt_pose = Pose(Rotation.from_axis_angle([0.2, 1.0, 0.1], 0.5),
                   np.array([0.05, -0.02, 0.0]))
    scaled = ScaledPose(gt_pose, np.array([0.2, 0.16, 0.18]))

    pixels = {}
    for f in frames:
        wc = f.camera_pose.inverse()
        pixels[f.index] = [
            (k, project_point(intr, wc.apply(gt_pose.apply(p))))
            for k, p in enumerate(model)]

    obj = ObjectRecord(
        object_id="mug-0", category="mug",
        poses={f.index: scaled for f in frames},
        condition=np.zeros(4),
        keypoints=KeypointSet(model, pixels))
    save_scene(SceneFile(frames, [obj], scene_id="synthetic-0"),
               os.path.join(OUT, "synthetic_scene.json"))


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    bimodal_mixture()
    synthetic_scene()
    print("fixtures written to", os.path.abspath(OUT))
