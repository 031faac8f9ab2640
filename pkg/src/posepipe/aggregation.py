"""Candidate aggregation: energy ranking, rotation DBSCAN, mean pooling, scale.

Clustering runs on rotation geodesic distance only (the density radius is
stated in radians); the largest cluster is mean-pooled into the final pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .candidates import PoseCandidateSet
from .diffusion import Condition, encode_pose
from .geometry import GeometryError, PointCloud, Pose, Rotation, geodesic_distance, \
    quaternion_mean, sixd_to_rotation

MIN_EXTENT = 1e-4  # substituted for degenerate (planar) axes, meters
NOISE = -1


class UntrainedRegressorError(RuntimeError):
    """Scale regression requested before a regressor was trained/loaded."""


@dataclass(frozen=True)
class FilterConfig:
    """Keep the top `delta` fraction of candidates by energy."""

    delta: float = 0.40

    def __post_init__(self):
        if not (0 < self.delta <= 1):
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 0.45   # radians
    min_pts: int = 5

    def __post_init__(self):
        if self.eps <= 0 or self.min_pts < 1:
            raise ValueError(f"invalid cluster config {self}")


@dataclass(frozen=True)
class SymmetrySpec:
    """Object symmetry: none, a continuous axis, or a finite rotation group."""

    kind: str = "none"  # none | continuous | discrete
    axis: np.ndarray | None = None          # unit 3-vector, object frame
    group: tuple[Rotation, ...] | None = None

    def __post_init__(self):
        if self.kind == "none":
            if self.axis is not None or self.group is not None:
                raise ValueError("kind 'none' takes no axis or group")
        elif self.kind == "continuous":
            a = np.asarray(self.axis, dtype=float)
            n = np.linalg.norm(a)
            if a.shape != (3,) or n < 1e-12:
                raise ValueError("continuous symmetry needs a nonzero 3-vector axis")
            a = a / n
            a.setflags(write=False)
            object.__setattr__(self, "axis", a)
        elif self.kind == "discrete":
            g = tuple(self.group or ())
            if not g:
                raise ValueError("discrete symmetry needs a nonempty group")
            if min(geodesic_distance(r, Rotation.identity()) for r in g) > 1e-6:
                raise ValueError("discrete group must contain the identity")
            for a in g:
                for b in g:
                    ab = a.compose(b)
                    if min(geodesic_distance(ab, c) for c in g) > 1e-6:
                        raise ValueError("discrete group is not closed under composition")
            object.__setattr__(self, "group", g)
        else:
            raise ValueError(f"unknown symmetry kind {self.kind!r}")

    @staticmethod
    def cyclic(axis, n: int) -> "SymmetrySpec":
        """n-fold discrete symmetry about an axis."""
        group = tuple(Rotation.from_axis_angle(axis, 2 * np.pi * i / n) for i in range(n))
        return SymmetrySpec("discrete", group=group)


def rank_and_filter(cset: PoseCandidateSet, energy_field, cond: Condition,
                    cfg: FilterConfig = FilterConfig()) -> PoseCandidateSet:
    """Sort candidates by descending energy and keep the top floor(delta*K).

    At least one candidate is always retained; equal energies keep their
    original relative order (lower index first).
    """
    if len(cset) < 1:
        raise ValueError("cannot rank an empty candidate set")
    t_eval = energy_field.schedule.epsilon
    energies = [float(energy_field.energy(encode_pose(p), t_eval, cond))
                for p in cset.candidates]
    order = sorted(range(len(cset)), key=lambda i: (-energies[i], i))
    m = max(1, math.floor(cfg.delta * len(cset)))
    kept = order[:m]
    return PoseCandidateSet([cset.candidates[i] for i in kept],
                            [energies[i] for i in kept],
                            cset.condition_id)


def dbscan_rotations(poses: list[Pose], cfg: ClusterConfig = ClusterConfig()) -> list[int]:
    """DBSCAN over rotation geodesic distance; returns one label per pose.

    Noise points get label -1. Core iff >= min_pts neighbors within eps
    (self included). Border points join the first core cluster that reaches
    them in scan order, so labels are deterministic in input order.
    """
    if not poses:
        raise ValueError("dbscan_rotations on empty list")
    n = len(poses)
    quats = np.array([p.rotation.q for p in poses])
    dots = np.clip(np.abs(quats @ quats.T), -1.0, 1.0)
    dist = 2.0 * np.arccos(dots)
    neighbors = [np.flatnonzero(dist[i] <= cfg.eps) for i in range(n)]
    core = [len(nb) >= cfg.min_pts for nb in neighbors]

    labels = [None] * n
    cluster = 0
    for i in range(n):
        if labels[i] is not None or not core[i]:
            continue
        labels[i] = cluster
        frontier = list(neighbors[i])
        while frontier:
            j = frontier.pop(0)
            if labels[j] == NOISE:
                labels[j] = cluster  # noise-marked border point rescued
            if labels[j] is not None:
                continue
            labels[j] = cluster
            if core[j]:
                frontier.extend(neighbors[j])
        cluster += 1
    return [NOISE if lab is None else lab for lab in labels]


@dataclass
class AggregationResult:
    pose: Pose
    cluster_size: int
    member_indices: list[int]
    all_noise_fallback: bool = False


def _pool(poses: list[Pose]) -> Pose:
    """Average candidates in the continuous 9-vector encoding, then decode.

    Pooling happens where the candidates live (translation + 6D rotation
    encoding), so averaging across distinct modes produces the in-between
    'mean mode' rather than snapping to the majority mode. If the averaged
    encoding is rotation-degenerate, fall back to the chordal quaternion
    mean.
    """
    mean_vec = np.mean([encode_pose(p) for p in poses], axis=0)
    try:
        rot = sixd_to_rotation(mean_vec[3:])
    except GeometryError:
        rot = quaternion_mean([p.rotation for p in poses])
    return Pose(rot, mean_vec[:3])


def mean_pool(cset: PoseCandidateSet) -> Pose:
    """Plain mean pooling of all candidates (the no-clustering baseline)."""
    if len(cset) < 1:
        raise ValueError("mean_pool of empty candidate set")
    return _pool(cset.candidates)


def aggregate_detailed(cset: PoseCandidateSet,
                       cfg: ClusterConfig = ClusterConfig()) -> AggregationResult:
    """Cluster rotations, pick the largest cluster, mean-pool its members.

    Cluster-size ties prefer higher mean energy, then the cluster holding
    the lower smallest index. If every candidate is noise the whole set is
    mean-pooled and the result flagged.
    """
    if len(cset) < 1:
        raise ValueError("aggregate of empty candidate set")
    labels = dbscan_rotations(cset.candidates, cfg)
    clusters: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        if lab != NOISE:
            clusters.setdefault(lab, []).append(i)
    if not clusters:
        return AggregationResult(mean_pool(cset), len(cset), list(range(len(cset))),
                                 all_noise_fallback=True)

    def score(item):
        _, members = item
        mean_energy = float(np.mean([cset.energies[i] for i in members])) \
            if cset.energies is not None else 0.0
        return (-len(members), -mean_energy, min(members))

    _, members = min(clusters.items(), key=score)
    return AggregationResult(_pool([cset.candidates[i] for i in members]),
                             len(members), members)


def aggregate(cset: PoseCandidateSet, cfg: ClusterConfig = ClusterConfig()) -> Pose:
    return aggregate_detailed(cset, cfg).pose


@dataclass
class ScaleEstimate:
    extents: np.ndarray
    degenerate_axes: tuple[bool, bool, bool] = (False, False, False)

    @property
    def flagged(self) -> bool:
        return any(self.degenerate_axes)


def estimate_scale_geometric(cloud: PointCloud, pose: Pose) -> ScaleEstimate:
    """Per-axis extent of the cloud in object space (max - min coordinate).

    Degenerate axes (planar clouds) get a minimum extent substituted and
    are flagged.
    """
    local = (pose.inverse().rotation.matrix() @ (cloud.points - pose.translation).T).T
    extents = local.max(axis=0) - local.min(axis=0)
    degenerate = tuple(bool(e < MIN_EXTENT) for e in extents)
    extents = np.maximum(extents, MIN_EXTENT)
    return ScaleEstimate(extents, degenerate)


@dataclass
class ScaleRegressor:
    """Tiny net mapping (condition, pose vector) to log-extents."""

    mlp: object
    feature_dim: int
    seed: int = 0

    def predict(self, cond: Condition, pose: Pose) -> np.ndarray:
        if cond.feature.shape[0] != self.feature_dim:
            raise ValueError("condition length mismatch")
        x = np.concatenate([cond.feature, encode_pose(pose)])
        return np.exp(self.mlp.forward(x))


def estimate_scale_learned(regressor: ScaleRegressor | None, cond: Condition,
                           pose: Pose) -> np.ndarray:
    """Predict positive extents with the trained regressor."""
    if regressor is None:
        raise UntrainedRegressorError("no scale regressor trained or loaded")
    return regressor.predict(cond, pose)


def train_scale_regressor(data: list[tuple[Condition, Pose, np.ndarray]],
                          hidden: tuple[int, ...] = (64, 64), steps: int = 1500,
                          lr: float = 1e-2, seed: int = 0) -> ScaleRegressor:
    """Fit the regressor by Adam on squared error in log-extent space."""
    import torch

    from .nets import MLP

    if not data:
        raise ValueError("train_scale_regressor needs data")
    feats = np.array([c.feature for c, _, _ in data])
    poses = np.array([encode_pose(p) for _, p, _ in data])
    targets = np.log(np.array([np.asarray(e, dtype=float) for _, _, e in data]))
    x = np.hstack([feats, poses])
    sizes = [x.shape[1], *hidden, 3]
    init = MLP.init(sizes, np.random.default_rng(seed))
    params = [torch.nn.Parameter(torch.from_numpy(a.copy()))
              for w, b in zip(init.weights, init.biases) for a in (w, b)]

    def net(inp):
        h = inp
        for i in range(0, len(params) - 2, 2):
            h = torch.tanh(h @ params[i].T + params[i + 1])
        return h @ params[-2].T + params[-1]

    xt = torch.from_numpy(x)
    yt = torch.from_numpy(targets)
    opt = torch.optim.Adam(params, lr=lr)
    for _ in range(steps):
        loss = torch.mean((net(xt) - yt) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
    weights = [params[i].detach().numpy().copy() for i in range(0, len(params), 2)]
    biases = [params[i].detach().numpy().copy() for i in range(1, len(params), 2)]
    return ScaleRegressor(MLP(weights, biases), feats.shape[1], seed)
