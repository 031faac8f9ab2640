"""Noise schedule, score fields, and denoising score-matching training.

The diffusion state is a 9-vector: translation (3) plus the first two
columns of the rotation matrix (6), so Gaussian perturbation stays
well-posed and decoding is a Gram-Schmidt step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .geometry import GeometryError, Pose, rotation_to_sixd, sixd_to_rotation
from .nets import MLP

POSE_DIM = 9


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric noise schedule sigma(t) = sigma_min * (sigma_max/sigma_min)^t."""

    sigma_min: float = 0.01
    sigma_max: float = 50.0
    epsilon: float = 1e-3  # final integration time

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError(f"need 0 < sigma_min < sigma_max, got {self}")
        if not (0 < self.epsilon < 1):
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")

    def sigma(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError(f"t must be in [0, 1], got {t}")
        return float(self.sigma_min * (self.sigma_max / self.sigma_min) ** t) \
            if t.ndim == 0 else self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def sigma_dot(self, t):
        """d sigma / dt = sigma(t) * ln(sigma_max / sigma_min)."""
        return self.sigma(t) * np.log(self.sigma_max / self.sigma_min)


DEFAULT_SCHEDULE = NoiseSchedule()


@dataclass(frozen=True)
class Condition:
    """Precomputed fixed-length conditioning vector for one observation."""

    feature: np.ndarray
    object_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.feature, dtype=float)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ValueError("feature must be a finite 1-D vector")
        f = f.copy()
        f.setflags(write=False)
        object.__setattr__(self, "feature", f)


def encode_pose(pose: Pose) -> np.ndarray:
    return np.concatenate([pose.translation, rotation_to_sixd(pose.rotation)])


def decode_pose(v: np.ndarray) -> Pose:
    v = np.asarray(v, dtype=float)
    if v.shape != (POSE_DIM,):
        raise GeometryError(f"pose vector must have {POSE_DIM} components")
    return Pose(sixd_to_rotation(v[3:]), v[:3])


@runtime_checkable
class ScoreField(Protocol):
    def score(self, p: np.ndarray, t: float, cond: Condition) -> np.ndarray: ...


@dataclass(frozen=True)
class AnalyticMixture:
    """Gaussian mixture in pose-vector space with exact perturbed score.

    Serves as the verification oracle: the score of the sigma(t)-convolved
    density is available in closed form.
    """

    means: np.ndarray           # (M, POSE_DIM)
    stds: np.ndarray            # (M,) per-component isotropic std, >= 0
    weights: np.ndarray = None  # (M,), defaults to uniform
    schedule: NoiseSchedule = DEFAULT_SCHEDULE

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        stds = np.atleast_1d(np.asarray(self.stds, dtype=float))
        w = self.weights
        w = np.full(len(means), 1.0 / len(means)) if w is None \
            else np.asarray(w, dtype=float) / np.sum(w)
        if means.shape[1] != POSE_DIM or len(stds) != len(means) or len(w) != len(means):
            raise ValueError("inconsistent mixture shapes")
        if np.any(stds < 0):
            raise ValueError("component stds must be >= 0")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "weights", w)

    def log_density(self, p: np.ndarray, t: float) -> float:
        p = np.asarray(p, dtype=float)
        var = self.stds**2 + self.schedule.sigma(t) ** 2
        d2 = np.sum((self.means - p) ** 2, axis=1)
        logs = np.log(self.weights) - 0.5 * d2 / var - 0.5 * POSE_DIM * np.log(2 * np.pi * var)
        m = np.max(logs)
        return float(m + np.log(np.sum(np.exp(logs - m))))

    def score(self, p: np.ndarray, t: float, cond: Condition | None = None) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        var = self.stds**2 + self.schedule.sigma(t) ** 2
        diff = self.means - p
        logs = np.log(self.weights) - 0.5 * np.sum(diff**2, axis=1) / var \
            - 0.5 * POSE_DIM * np.log(2 * np.pi * var)
        r = np.exp(logs - np.max(logs))
        r /= np.sum(r)
        return (r / var) @ diff


@dataclass(frozen=True)
class ConditionedGaussianField:
    """Analytic single-mode score whose mean is read from the condition.

    The first POSE_DIM entries of the condition feature are interpreted as
    the target pose vector; used by synthetic tracking scenarios where the
    target moves per frame.
    """

    std: float = 0.05
    schedule: NoiseSchedule = DEFAULT_SCHEDULE

    def score(self, p: np.ndarray, t: float, cond: Condition) -> np.ndarray:
        mu = cond.feature[:POSE_DIM]
        var = self.std**2 + self.schedule.sigma(t) ** 2
        return (mu - np.asarray(p, dtype=float)) / var


def analytic_score(mixture: AnalyticMixture, p: np.ndarray, t: float) -> np.ndarray:
    """Exact gradient of log of the sigma(t)-convolved mixture density."""
    return mixture.score(p, t)


def _time_features(t: float) -> np.ndarray:
    return np.array([t, np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)])


TIME_FEATURES = 3


@dataclass
class ScoreNet:
    """Trained score field: an MLP over [pose, condition, time features].

    The pose block is pre-scaled by 1/sqrt(1 + sigma^2) and the raw output
    is divided by sigma(t), so the network regresses unit-scale targets at
    every noise level.
    """

    mlp: MLP
    schedule: NoiseSchedule
    feature_dim: int
    seed: int = 0

    def _input(self, p, t, cond: Condition) -> np.ndarray:
        sig = self.schedule.sigma(t)
        c_in = 1.0 / np.sqrt(1.0 + sig * sig)
        feat = cond.feature
        if feat.shape[0] != self.feature_dim:
            raise ValueError(
                f"condition length {feat.shape[0]} != model feature_dim {self.feature_dim}")
        return np.concatenate([np.asarray(p, dtype=float) * c_in, feat, _time_features(t)])

    def score(self, p: np.ndarray, t: float, cond: Condition) -> np.ndarray:
        return self.mlp.forward(self._input(p, t, cond)) / self.schedule.sigma(t)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    steps: int = 4000
    lr: float = 1e-3
    lr_final: float = 1e-4
    seed: int = 0
    schedule: NoiseSchedule = DEFAULT_SCHEDULE
    hidden: tuple[int, ...] = (256, 256, 256)
    feature_dim: int = 32

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 1 or self.lr <= 0 or self.lr_final <= 0:
            raise ValueError(f"invalid training config {self}")


def perturb(p0: np.ndarray, t: float, schedule: NoiseSchedule,
            rng: np.random.Generator) -> np.ndarray:
    """Gaussian perturbation p0 + sigma(t) * z, z standard normal."""
    if not (0 < t <= 1):
        raise ValueError(f"t must be in (0, 1], got {t}")
    p0 = np.asarray(p0, dtype=float)
    return p0 + schedule.sigma(t) * rng.standard_normal(p0.shape)


def dsm_loss(field: ScoreField, batch: list[tuple[np.ndarray, Condition]],
             schedule: NoiseSchedule, rng: np.random.Generator) -> float:
    """Monte-Carlo denoising score-matching loss with weight sigma(t)^2.

    One (t, z) draw per batch element, t ~ U(epsilon, 1); per element
    sigma^2 * || field(p_t) - (p0 - p_t) / sigma^2 ||^2.
    """
    if not batch:
        raise ValueError("dsm_loss on empty batch")
    total = 0.0
    for p0, cond in batch:
        p0 = np.asarray(p0, dtype=float)
        t = float(rng.uniform(schedule.epsilon, 1.0))
        sig = schedule.sigma(t)
        z = rng.standard_normal(p0.shape)
        pt = p0 + sig * z
        target = -z / sig
        diff = field.score(pt, t, cond) - target
        total += sig * sig * float(diff @ diff)
    return total / len(batch)


def _canonical_order(pose_mat: np.ndarray, feat_mat: np.ndarray) -> np.ndarray:
    """Deterministic data order independent of input permutation."""
    keys = np.hstack([pose_mat, feat_mat])
    return np.lexsort(keys.T[::-1])


def train_score(data: list[tuple[np.ndarray, Condition]], cfg: TrainConfig) -> ScoreNet:
    """Train a ScoreNet by denoising score matching with Adam.

    Deterministic for a fixed seed: initialization, data order (canonical
    sort then seed-derived sampling), and noise draws all come from the
    seed, so the same seed gives bit-identical weights regardless of the
    order the data was passed in.
    """
    import torch

    if not data:
        raise ValueError("train_score needs a nonempty dataset")
    pose_mat = np.array([np.asarray(p, dtype=float) for p, _ in data])
    feat_mat = np.array([c.feature for _, c in data])
    if feat_mat.shape[1] != cfg.feature_dim:
        raise ValueError(
            f"condition length {feat_mat.shape[1]} != cfg.feature_dim {cfg.feature_dim}")
    order = _canonical_order(pose_mat, feat_mat)
    pose_mat, feat_mat = pose_mat[order], feat_mat[order]

    in_dim = POSE_DIM + cfg.feature_dim + TIME_FEATURES
    sizes = [in_dim, *cfg.hidden, POSE_DIM]
    init = MLP.init(sizes, np.random.default_rng(cfg.seed))
    params = [torch.nn.Parameter(torch.from_numpy(a.copy()))
              for w, b in zip(init.weights, init.biases) for a in (w, b)]

    def net(x):
        h = x
        for i in range(0, len(params) - 2, 2):
            h = torch.tanh(h @ params[i].T + params[i + 1])
        return h @ params[-2].T + params[-1]

    gen = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.Adam(params, lr=cfg.lr)
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(cfg.steps - 1, 1))
    poses_t = torch.from_numpy(pose_mat)
    feats_t = torch.from_numpy(feat_mat)
    n = len(data)
    log_ratio = np.log(cfg.schedule.sigma_max / cfg.schedule.sigma_min)

    for step in range(cfg.steps):
        idx = torch.randint(n, (cfg.batch_size,), generator=gen)
        p0 = poses_t[idx]
        feat = feats_t[idx]
        t = cfg.schedule.epsilon + (1.0 - cfg.schedule.epsilon) * \
            torch.rand(cfg.batch_size, 1, generator=gen, dtype=torch.float64)
        sig = cfg.schedule.sigma_min * torch.exp(t * log_ratio)
        z = torch.randn(cfg.batch_size, POSE_DIM, generator=gen, dtype=torch.float64)
        pt = p0 + sig * z
        c_in = 1.0 / torch.sqrt(1.0 + sig * sig)
        inp = torch.cat([pt * c_in, feat, t,
                         torch.sin(2 * np.pi * t), torch.cos(2 * np.pi * t)], dim=1)
        # sigma^2-weighted DSM loss: || sigma * score + z ||^2, net output = sigma * score
        loss = torch.mean(torch.sum((net(inp) + z) ** 2, dim=1))
        if not torch.isfinite(loss):
            raise TrainingDivergedError(step, float(loss))
        opt.zero_grad()
        loss.backward()
        opt.step()
        for group in opt.param_groups:
            group["lr"] *= decay

    weights = [params[i].detach().numpy().copy() for i in range(0, len(params), 2)]
    biases = [params[i].detach().numpy().copy() for i in range(1, len(params), 2)]
    return ScoreNet(MLP(weights, biases), cfg.schedule, cfg.feature_dim, cfg.seed)
