"""Marker-free annotation solvers: camera bundle adjustment, object pose
fitting from 2D-3D keypoints, and farthest-point keyframe selection.

Both solvers minimize squared pixel reprojection error with
Levenberg-Marquardt; rotations are updated through a local 3-parameter
tangent step composed onto the quaternion each iteration. World points are
held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, GeometryError, Pose, Rotation, geodesic_distance


class UnderConstrainedError(ValueError):
    """Too few observations to determine the requested parameters."""


class DegenerateConfigurationError(ValueError):
    """Model points are coplanar/collinear; pose is not uniquely determined."""


@dataclass(frozen=True)
class Observation2D3D:
    world_point: np.ndarray  # meters, world frame
    pixel: np.ndarray        # pixels
    frame_index: int

    def __post_init__(self):
        wp = np.asarray(self.world_point, dtype=float)
        px = np.asarray(self.pixel, dtype=float)
        if wp.shape != (3,) or px.shape != (2,) or not (
                np.all(np.isfinite(wp)) and np.all(np.isfinite(px))):
            raise ValueError("observation needs finite 3D world point and 2D pixel")
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")
        object.__setattr__(self, "world_point", wp)
        object.__setattr__(self, "pixel", px)


@dataclass
class CameraTrack:
    poses: list[Pose]  # camera-to-world per frame
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        if not self.poses:
            raise ValueError("camera track needs at least one frame")


@dataclass
class KeypointSet:
    """Object-space model points plus per-keyframe pixel annotations."""

    model_points: np.ndarray                       # (K, 3), object frame
    pixels: dict[int, list[tuple[int, np.ndarray]]]  # frame -> [(point idx, pixel)]

    def __post_init__(self):
        self.model_points = np.asarray(self.model_points, dtype=float)
        if self.model_points.ndim != 2 or self.model_points.shape[1] != 3:
            raise ValueError("model_points must be (K, 3)")


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    initial_damping: float = 1e-3
    damping_factor: float = 10.0
    cost_tolerance: float = 1e-12  # relative decrease


@dataclass
class SolveStats:
    final_cost: float
    converged: bool
    cost_history: list[float]


def rotation_exp(omega: np.ndarray) -> Rotation:
    """SO(3) exponential of a 3-vector tangent step."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    if angle < 1e-16:
        return Rotation.identity()
    return Rotation.from_axis_angle(omega / angle, angle)


def _project_jacobian(intr: CameraIntrinsics, p_cam: np.ndarray) -> np.ndarray:
    x, y, z = p_cam
    return np.array([[intr.fx / z, 0.0, -intr.fx * x / (z * z)],
                     [0.0, intr.fy / z, -intr.fy * y / (z * z)]])


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def _levenberg_marquardt(residual_fn, jacobian_fn, state, retract, opts: SolverOptions):
    """Generic damped Gauss-Newton loop; returns (state, SolveStats)."""
    lam = opts.initial_damping
    r = residual_fn(state)
    cost = float(r @ r)
    history = [cost]
    converged = False
    for _ in range(opts.max_iterations):
        jac = jacobian_fn(state)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        accepted = False
        for _ in range(20):
            try:
                delta = np.linalg.solve(jtj + lam * np.eye(jtj.shape[0]), -jtr)
            except np.linalg.LinAlgError:
                lam *= opts.damping_factor
                continue
            candidate = retract(state, delta)
            r_new = residual_fn(candidate)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                state, r = candidate, r_new
                rel_drop = (cost - cost_new) / max(cost, 1e-300)
                cost = cost_new
                history.append(cost)
                lam = max(lam / opts.damping_factor, 1e-12)
                accepted = True
                if rel_drop < opts.cost_tolerance or cost < 1e-300:
                    converged = True
                break
            lam *= opts.damping_factor
        if not accepted or converged:
            converged = converged or not accepted and cost <= history[0]
            break
    return state, SolveStats(cost, converged or cost < opts.cost_tolerance, history)


def bundle_adjust(track: CameraTrack, observations: list[Observation2D3D],
                  opts: SolverOptions = SolverOptions()) -> tuple[CameraTrack, SolveStats]:
    """Refine every camera pose by minimizing squared reprojection error.

    World points are fixed; each frame needs >= 3 observations. Returns the
    refined track and solver statistics (cost history is non-increasing
    over accepted steps).
    """
    n_frames = len(track.poses)
    per_frame: list[list[Observation2D3D]] = [[] for _ in range(n_frames)]
    for obs in observations:
        if obs.frame_index >= n_frames:
            raise ValueError(f"observation references missing frame {obs.frame_index}")
        per_frame[obs.frame_index].append(obs)
    for i, obs_list in enumerate(per_frame):
        if len(obs_list) < 3:
            raise UnderConstrainedError(
                f"frame {i} has {len(obs_list)} observations, need >= 3")

    intr = track.intrinsics
    # state: world-to-camera poses, the frame the residual is written in
    state0 = [p.inverse() for p in track.poses]

    def residual_fn(state):
        res = []
        for i, obs_list in enumerate(per_frame):
            wc = state[i]
            for obs in obs_list:
                p_cam = wc.apply(obs.world_point)
                if p_cam[2] <= 0:
                    res.extend([1e6, 1e6])  # behind camera: huge penalty
                    continue
                res.append(intr.fx * p_cam[0] / p_cam[2] + intr.cx - obs.pixel[0])
                res.append(intr.fy * p_cam[1] / p_cam[2] + intr.cy - obs.pixel[1])
        return np.array(res)

    def jacobian_fn(state):
        rows = 2 * len(observations)
        jac = np.zeros((rows, 6 * n_frames))
        row = 0
        for i, obs_list in enumerate(per_frame):
            wc = state[i]
            rot = wc.rotation.matrix()
            for obs in obs_list:
                p_cam = wc.apply(obs.world_point)
                dproj = _project_jacobian(intr, p_cam)
                # right-perturbation: R <- R exp(w), t <- t + dt
                dp_dw = -rot @ _skew(obs.world_point)
                jac[row:row + 2, 6 * i:6 * i + 3] = dproj @ dp_dw
                jac[row:row + 2, 6 * i + 3:6 * i + 6] = dproj
                row += 2
        return jac

    def retract(state, delta):
        out = []
        for i, wc in enumerate(state):
            w = delta[6 * i:6 * i + 3]
            dt = delta[6 * i + 3:6 * i + 6]
            out.append(Pose(wc.rotation.compose(rotation_exp(w)), wc.translation + dt))
        return out

    final_state, stats = _levenberg_marquardt(residual_fn, jacobian_fn, state0, retract, opts)
    refined = CameraTrack([p.inverse() for p in final_state], intr)
    return refined, stats


def _check_not_coplanar(points: np.ndarray) -> None:
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] < 1e-9 * max(sv[0], 1e-12):
        raise DegenerateConfigurationError("model points are coplanar or collinear")


def _dlt_pose(model_points: np.ndarray, pixels: np.ndarray,
              intr: CameraIntrinsics) -> Pose:
    """Direct linear transform for the object-to-camera pose (>= 6 points)."""
    xn = (pixels[:, 0] - intr.cx) / intr.fx
    yn = (pixels[:, 1] - intr.cy) / intr.fy
    n = len(model_points)
    a = np.zeros((2 * n, 12))
    for i, (p, u, v) in enumerate(zip(model_points, xn, yn)):
        ph = np.append(p, 1.0)
        a[2 * i, 0:4] = ph
        a[2 * i, 8:12] = -u * ph
        a[2 * i + 1, 4:8] = ph
        a[2 * i + 1, 8:12] = -v * ph
    _, _, vt = np.linalg.svd(a)
    m = vt[-1].reshape(3, 4)
    # fix sign so points land in front of the camera
    depths = model_points @ m[2, :3] + m[2, 3]
    if np.sum(depths > 0) < n / 2:
        m = -m
    scale = np.mean(np.linalg.svd(m[:, :3], compute_uv=False))
    m = m / scale
    u, _, vt3 = np.linalg.svd(m[:, :3])
    rot_m = u @ vt3
    if np.linalg.det(rot_m) < 0:
        rot_m = -rot_m
    return Pose(Rotation.from_matrix(rot_m), m[:, 3])


def fit_object_pose(kp: KeypointSet, track: CameraTrack,
                    opts: SolverOptions = SolverOptions()) -> tuple[Pose, float, SolveStats]:
    """Object pose from annotated keyframes: DLT init + joint LM refinement.

    Initialization uses the reference frame (lowest annotated index); the
    refinement couples every annotated keyframe through the known camera
    track. Returns the object-to-camera pose of the reference frame and the
    final RMS pixel residual.
    """
    if not kp.pixels:
        raise UnderConstrainedError("no annotated keyframes")
    ref_frame = min(kp.pixels)
    ref_obs = kp.pixels[ref_frame]
    if len(ref_obs) < 6:
        raise UnderConstrainedError(
            f"reference frame {ref_frame} has {len(ref_obs)} correspondences, need >= 6")
    ref_ids = [i for i, _ in ref_obs]
    _check_not_coplanar(kp.model_points[ref_ids])

    intr = track.intrinsics
    # initialization in the reference frame, then refinement over the
    # object-to-world pose using every annotated keyframe
    obj_to_cam_ref = _dlt_pose(kp.model_points[ref_ids],
                               np.array([px for _, px in ref_obs]), intr)
    obj_to_world0 = track.poses[ref_frame].compose(obj_to_cam_ref)

    world_to_cam = {f: track.poses[f].inverse() for f in kp.pixels}
    flat_obs = [(f, kp.model_points[i], np.asarray(px, dtype=float))
                for f, lst in sorted(kp.pixels.items()) for i, px in lst]

    def residual_fn(state: Pose):
        res = []
        for f, point, px in flat_obs:
            p_cam = world_to_cam[f].apply(state.apply(point))
            if p_cam[2] <= 0:
                res.extend([1e6, 1e6])
                continue
            res.append(intr.fx * p_cam[0] / p_cam[2] + intr.cx - px[0])
            res.append(intr.fy * p_cam[1] / p_cam[2] + intr.cy - px[1])
        return np.array(res)

    def jacobian_fn(state: Pose):
        jac = np.zeros((2 * len(flat_obs), 6))
        rot_o = state.rotation.matrix()
        for row, (f, point, _) in enumerate(flat_obs):
            wc = world_to_cam[f]
            rot_wc = wc.rotation.matrix()
            p_cam = wc.apply(state.apply(point))
            dproj = _project_jacobian(intr, p_cam)
            dp_dw = rot_wc @ rot_o @ (-_skew(point))  # T_o: R <- R exp(w)
            dp_dt = rot_wc
            jac[2 * row:2 * row + 2, 0:3] = dproj @ dp_dw
            jac[2 * row:2 * row + 2, 3:6] = dproj @ dp_dt
        return jac

    def retract(state: Pose, delta):
        return Pose(state.rotation.compose(rotation_exp(delta[:3])),
                    state.translation + delta[3:])

    obj_to_world, stats = _levenberg_marquardt(residual_fn, jacobian_fn,
                                               obj_to_world0, retract, opts)
    rms = float(np.sqrt(stats.final_cost / len(flat_obs)))
    obj_to_cam = track.poses[ref_frame].inverse().compose(obj_to_world)
    return obj_to_cam, rms, stats


@dataclass(frozen=True)
class FpsWeights:
    w_t: float = 1.0   # per meter
    w_r: float = 0.5   # per radian


def fps_keyframes(track: CameraTrack, k: int,
                  weights: FpsWeights = FpsWeights()) -> list[int]:
    """Greedy farthest-point sampling of frame indices, seeded at frame 0.

    Distance is w_t * translation + w_r * rotation geodesic; ties pick the
    lower index.
    """
    n = len(track.poses)
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}], got {k}")

    def dist(i, j):
        a, b = track.poses[i], track.poses[j]
        return weights.w_t * float(np.linalg.norm(a.translation - b.translation)) \
            + weights.w_r * geodesic_distance(a.rotation, b.rotation)

    selected = [0]
    min_dist = [dist(0, j) for j in range(n)]
    while len(selected) < k:
        best = int(np.argmax(min_dist))  # argmax returns the lowest tied index
        selected.append(best)
        for j in range(n):
            min_dist[j] = min(min_dist[j], dist(best, j))
    return selected
