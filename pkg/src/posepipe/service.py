"""HTTP facade for the human pose-refinement loop.

Serves keyframes and reprojection overlays, accepts full pose writes
(optimistic revision check) and incremental nudges, and persists every
accepted edit back into the scene file atomically. All geometry runs
server-side; clients only ever see 2D polylines.
"""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .annotation import CameraTrack, fps_keyframes
from .fileio import (
    SceneFile,
    load_scene,
    pose_to_doc,
    save_scene,
    scaled_pose_to_doc,
)
from .geometry import (
    BehindCameraError,
    Pose,
    Rotation,
    ScaledPose,
    project_point,
)

_AXES = {"x": np.array([1.0, 0.0, 0.0]),
         "y": np.array([0.0, 1.0, 0.0]),
         "z": np.array([0.0, 0.0, 1.0])}

# box corner pairs differing in exactly one bit: the 12 wireframe edges
_BOX_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8)
              if bin(a ^ b).count("1") == 1]


@dataclass
class ObjectState:
    pose: ScaledPose
    revision: int = 0


@dataclass
class AnnotationSession:
    scene: SceneFile
    scene_path: str
    keyframes: list[int]
    objects: dict[str, ObjectState]
    audit_log: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _initial_pose(record) -> ScaledPose:
    if not record.poses:
        raise ValueError(f"object {record.object_id!r} has no pose entries")
    return record.poses[min(record.poses)]


def _make_session(scene_path: str, keyframe_count: int) -> AnnotationSession:
    scene = load_scene(scene_path)
    track = CameraTrack([f.camera_pose for f in scene.frames],
                        scene.frames[0].intrinsics)
    k = min(keyframe_count, len(scene.frames))
    return AnnotationSession(
        scene=scene,
        scene_path=scene_path,
        keyframes=fps_keyframes(track, k),
        objects={o.object_id: ObjectState(_initial_pose(o)) for o in scene.objects},
    )


def _persist(session: AnnotationSession) -> None:
    """Write working poses back into the scene file, temp-then-rename."""
    for record in session.scene.objects:
        state = session.objects[record.object_id]
        for frame_idx in record.poses:
            record.poses[frame_idx] = state.pose
    directory = os.path.dirname(os.path.abspath(session.scene_path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        save_scene(session.scene, tmp)
        os.replace(tmp, session.scene_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _overlay(session: AnnotationSession, object_id: str, frame: int) -> dict:
    """Projected box wireframe and model keypoints for one frame."""
    frames = {f.index: f for f in session.scene.frames}
    if frame not in frames:
        raise HTTPException(404, f"unknown frame {frame}")
    rec = next(o for o in session.scene.objects if o.object_id == object_id)
    state = session.objects[object_id]
    cam = frames[frame]
    world_to_cam = cam.camera_pose.inverse()

    def pix(world_point):
        try:
            return [float(x) for x in
                    project_point(cam.intrinsics, world_to_cam.apply(world_point))]
        except BehindCameraError:
            return None

    corners = state.pose.box().corners()
    pts = [pix(c) for c in corners]
    segments = [[pts[a], pts[b]] for a, b in _BOX_EDGES
                if pts[a] is not None and pts[b] is not None]
    keypoints = []
    if rec.keypoints is not None:
        for mp in rec.keypoints.model_points:
            keypoints.append(pix(state.pose.pose.apply(mp)))
    return {"frame": frame, "box_segments": segments, "keypoints": keypoints}


def _parse_scaled_pose(doc: dict) -> ScaledPose:
    try:
        q = np.asarray(doc["rotation"], dtype=float)
        t = np.asarray(doc["translation"], dtype=float)
        s = np.asarray(doc["scale"], dtype=float)
        return ScaledPose(Pose(Rotation(q), t), s)
    except (KeyError, TypeError, ValueError) as e:
        raise HTTPException(422, f"malformed pose body: {e}")


def build_app(scene_path: str, keyframe_count: int = 5) -> FastAPI:
    session = _make_session(scene_path, keyframe_count)
    app = FastAPI(title="posepipe annotation service")
    app.state.session = session

    def get_object(seq_id: str, object_id: str) -> ObjectState:
        if seq_id != session.scene.scene_id:
            raise HTTPException(404, f"unknown sequence {seq_id!r}")
        if object_id not in session.objects:
            raise HTTPException(404, f"unknown object {object_id!r}")
        return session.objects[object_id]

    @app.get("/sequences")
    def sequences():
        return {"sequences": [session.scene.scene_id]}

    @app.get("/sequences/{seq_id}/keyframes")
    def keyframes(seq_id: str):
        if seq_id != session.scene.scene_id:
            raise HTTPException(404, f"unknown sequence {seq_id!r}")
        return {"keyframes": [
            {"index": k, "image_ref": f"/static/{seq_id}/frame_{k:04d}.png"}
            for k in session.keyframes]}

    @app.get("/sequences/{seq_id}/objects/{object_id}/pose")
    def get_pose(seq_id: str, object_id: str):
        state = get_object(seq_id, object_id)
        return {"pose": scaled_pose_to_doc(state.pose), "revision": state.revision}

    @app.post("/sequences/{seq_id}/objects/{object_id}/pose")
    def set_pose(seq_id: str, object_id: str, body: dict = Body(...)):
        state = get_object(seq_id, object_id)
        if "pose" not in body or "expected_revision" not in body:
            raise HTTPException(422, "body needs 'pose' and 'expected_revision'")
        new_pose = _parse_scaled_pose(body["pose"])
        with session.lock:
            if body["expected_revision"] != state.revision:
                return JSONResponse(status_code=409, content={
                    "error": "stale revision",
                    "pose": scaled_pose_to_doc(state.pose),
                    "revision": state.revision})
            state.pose = new_pose
            state.revision += 1
            session.audit_log.append({
                "object_id": object_id, "revision": state.revision,
                "kind": "set", "pose": scaled_pose_to_doc(new_pose)})
            _persist(session)
        return {"pose": scaled_pose_to_doc(state.pose), "revision": state.revision}

    @app.post("/sequences/{seq_id}/objects/{object_id}/nudge")
    def nudge(seq_id: str, object_id: str, body: dict = Body(...)):
        state = get_object(seq_id, object_id)
        axis_name = body.get("axis")
        if axis_name not in _AXES:
            raise HTTPException(422, f"axis must be one of {sorted(_AXES)}")
        has_rot = "delta_deg" in body
        has_trans = "delta_cm" in body
        if has_rot == has_trans:
            raise HTTPException(422, "exactly one of delta_deg / delta_cm required")
        with session.lock:
            expected = body.get("expected_revision")
            if expected is not None and expected != state.revision:
                return JSONResponse(status_code=409, content={
                    "error": "stale revision",
                    "pose": scaled_pose_to_doc(state.pose),
                    "revision": state.revision})
            pose = state.pose.pose
            if has_rot:
                delta = float(body["delta_deg"])
                # object-frame rotation increment: exact inverse on sign flip
                rot = pose.rotation.compose(
                    Rotation.from_axis_angle(_AXES[axis_name], np.radians(delta)))
                pose = Pose(rot, pose.translation)
            else:
                delta = float(body["delta_cm"])
                pose = Pose(pose.rotation,
                            pose.translation + _AXES[axis_name] * (delta / 100.0))
            state.pose = ScaledPose(pose, state.pose.scale)
            state.revision += 1
            session.audit_log.append({
                "object_id": object_id, "revision": state.revision,
                "kind": "nudge", "axis": axis_name,
                ("delta_deg" if has_rot else "delta_cm"): delta})
            _persist(session)
            overlays = [_overlay(session, object_id, k) for k in session.keyframes]
        return {"pose": scaled_pose_to_doc(state.pose),
                "revision": state.revision, "overlays": overlays}

    @app.get("/sequences/{seq_id}/objects/{object_id}/overlay")
    def overlay(seq_id: str, object_id: str, frame: int):
        get_object(seq_id, object_id)
        return _overlay(session, object_id, frame)

    @app.get("/sequences/{seq_id}/objects/{object_id}/audit")
    def audit(seq_id: str, object_id: str):
        get_object(seq_id, object_id)
        return {"entries": [e for e in session.audit_log
                            if e["object_id"] == object_id]}

    return app


def replay_audit(initial: ScaledPose, entries: list[dict]) -> ScaledPose:
    """Apply an audit log to an initial pose; reproduces the working pose."""
    pose = initial
    for e in entries:
        if e["kind"] == "set":
            doc = e["pose"]
            pose = ScaledPose(Pose(Rotation(np.asarray(doc["rotation"])),
                                   np.asarray(doc["translation"])),
                              np.asarray(doc["scale"]))
        else:
            axis = _AXES[e["axis"]]
            if "delta_deg" in e:
                rot = pose.pose.rotation.compose(
                    Rotation.from_axis_angle(axis, np.radians(e["delta_deg"])))
                pose = ScaledPose(Pose(rot, pose.pose.translation), pose.scale)
            else:
                pose = ScaledPose(
                    Pose(pose.pose.rotation,
                         pose.pose.translation + axis * (e["delta_cm"] / 100.0)),
                    pose.scale)
    return pose
