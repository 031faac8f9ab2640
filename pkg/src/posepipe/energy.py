"""Scalar energy fields for candidate ranking.

Either the exact log-density of an analytic mixture, or a scalar net
distilled from a trained score field so that its input-gradient matches
the score. Rankings are evaluated at t = epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import (
    POSE_DIM,
    TIME_FEATURES,
    AnalyticMixture,
    Condition,
    NoiseSchedule,
    ScoreField,
    TrainConfig,
    TrainingDivergedError,
    _time_features,
)
from .nets import MLP


@dataclass(frozen=True)
class AnalyticLogDensity:
    """Exact energy oracle: log of the sigma(t)-convolved mixture density."""

    mixture: AnalyticMixture

    @property
    def schedule(self) -> NoiseSchedule:
        return self.mixture.schedule

    def energy(self, p: np.ndarray, t: float, cond: Condition | None = None) -> float:
        return self.mixture.log_density(p, t)

    def grad(self, p: np.ndarray, t: float, cond: Condition | None = None) -> np.ndarray:
        return self.mixture.score(p, t)


@dataclass
class EnergyNet:
    """Distilled scalar net; input-gradient available in one reverse pass."""

    mlp: MLP
    schedule: NoiseSchedule
    feature_dim: int
    seed: int = 0

    def _input(self, p, t, cond: Condition) -> np.ndarray:
        sig = self.schedule.sigma(t)
        c_in = 1.0 / np.sqrt(1.0 + sig * sig)
        if cond.feature.shape[0] != self.feature_dim:
            raise ValueError("condition length mismatch")
        return np.concatenate([np.asarray(p, dtype=float) * c_in, cond.feature,
                               _time_features(t)])

    def energy(self, p: np.ndarray, t: float, cond: Condition) -> float:
        return float(self.mlp.forward(self._input(p, t, cond))[0])

    def grad(self, p: np.ndarray, t: float, cond: Condition) -> np.ndarray:
        """Exact d energy / d p via the net's analytic input gradient."""
        sig = self.schedule.sigma(t)
        c_in = 1.0 / np.sqrt(1.0 + sig * sig)
        g = self.mlp.input_gradient(self._input(p, t, cond))
        return g[:POSE_DIM] * c_in


def energy(field, p: np.ndarray, t: float, cond: Condition | None = None) -> float:
    """Scalar plausibility of a pose vector; higher is more plausible."""
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite pose vector")
    sched = field.schedule
    if not (sched.epsilon <= t <= 1.0):
        raise ValueError(f"t must be in [epsilon, 1], got {t}")
    return float(field.energy(p, t, cond))


def distill_energy(score_field: ScoreField, data: list[tuple[np.ndarray, Condition]],
                   cfg: TrainConfig) -> EnergyNet:
    """Train a scalar net whose input-gradient matches the frozen score field.

    Samples follow the same perturbation law as score training; the loss is
    unweighted squared error between the net's pose gradient and the score
    (the distillation target stays bounded at small noise, so no variance
    cancellation is needed). Deterministic for a fixed seed.
    """
    import torch

    if not data:
        raise ValueError("distill_energy needs a nonempty dataset")
    pose_mat = np.array([np.asarray(p, dtype=float) for p, _ in data])
    feat_mat = np.array([c.feature for _, c in data])
    if feat_mat.shape[1] != cfg.feature_dim:
        raise ValueError("condition length != cfg.feature_dim")

    in_dim = POSE_DIM + cfg.feature_dim + TIME_FEATURES
    sizes = [in_dim, *cfg.hidden, 1]
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
    n = len(data)
    sched = cfg.schedule
    log_ratio = np.log(sched.sigma_max / sched.sigma_min)

    for step in range(cfg.steps):
        idx = torch.randint(n, (cfg.batch_size,), generator=gen)
        idx_np = idx.numpy()
        t_np = sched.epsilon + (1.0 - sched.epsilon) * \
            torch.rand(cfg.batch_size, 1, generator=gen, dtype=torch.float64).numpy()
        sig_np = sched.sigma_min * np.exp(t_np * log_ratio)
        z = torch.randn(cfg.batch_size, POSE_DIM, generator=gen, dtype=torch.float64).numpy()
        pt_np = pose_mat[idx_np] + sig_np * z
        # frozen teacher, evaluated outside the graph
        target = np.array([score_field.score(pt_np[i], float(t_np[i, 0]),
                                             Condition(feat_mat[idx_np[i]]))
                           for i in range(cfg.batch_size)])

        pt = torch.from_numpy(pt_np).requires_grad_(True)
        t = torch.from_numpy(t_np)
        sig = torch.from_numpy(sig_np)
        c_in = 1.0 / torch.sqrt(1.0 + sig * sig)
        inp = torch.cat([pt * c_in, torch.from_numpy(feat_mat[idx_np]), t,
                         torch.sin(2 * np.pi * t), torch.cos(2 * np.pi * t)], dim=1)
        psi = net(inp)
        grad = torch.autograd.grad(psi.sum(), pt, create_graph=True)[0]
        loss = torch.mean(torch.sum((grad - torch.from_numpy(target)) ** 2, dim=1))
        if not torch.isfinite(loss):
            raise TrainingDivergedError(step, float(loss))
        opt.zero_grad()
        loss.backward()
        opt.step()
        for group in opt.param_groups:
            group["lr"] *= decay

    weights = [params[i].detach().numpy().copy() for i in range(0, len(params), 2)]
    biases = [params[i].detach().numpy().copy() for i in range(1, len(params), 2)]
    return EnergyNet(MLP(weights, biases), sched, cfg.feature_dim, cfg.seed)
