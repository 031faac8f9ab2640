"""Probability-flow ODE candidate sampling and warm-started tracking.

Candidates are drawn by integrating dp/dt = -sigma(t) sigma_dot(t) * score
from t=1 down to t=epsilon, starting from p(1) ~ N(0, sigma_max^2 I).
Per-candidate rng streams are pre-split from the seed, so parallel and
serial execution produce identical sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .aggregation import ClusterConfig, FilterConfig, aggregate, rank_and_filter
from .candidates import PoseCandidateSet
from .diffusion import POSE_DIM, Condition, NoiseSchedule, DEFAULT_SCHEDULE, ScoreField, \
    decode_pose, encode_pose, perturb
from .geometry import GeometryError, Pose


class SamplerDivergedError(RuntimeError):
    def __init__(self, step: int, t: float):
        super().__init__(f"PF-ODE state became non-finite at step {step} (t={t:.6f})")
        self.step = step
        self.t = t


class CandidateDegenerateError(RuntimeError):
    """A candidate failed 6D rotation decoding after the retry budget."""


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 50
    steps: int = 200
    integrator: str = "euler"  # euler | rk4
    schedule: NoiseSchedule = DEFAULT_SCHEDULE
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.steps < 1:
            raise ValueError(f"k and steps must be >= 1, got {self}")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")


def pf_ode_solve(score_field: ScoreField, cond: Condition, p1: np.ndarray,
                 cfg: SamplerConfig, t_start: float = 1.0,
                 t_end: float | None = None) -> np.ndarray:
    """Integrate the probability-flow ODE from t_start down to t_end (epsilon)."""
    p = np.asarray(p1, dtype=float).copy()
    if p.shape != (POSE_DIM,) or not np.all(np.isfinite(p)):
        raise ValueError(f"initial state must be a finite {POSE_DIM}-vector")
    sched = cfg.schedule
    t_end = sched.epsilon if t_end is None else t_end
    if not (sched.epsilon <= t_end < t_start <= 1.0):
        raise ValueError(f"need epsilon <= t_end < t_start <= 1, got [{t_end}, {t_start}]")
    h = (t_start - t_end) / cfg.steps

    def drift(state, t):
        return -sched.sigma(t) * sched.sigma_dot(t) * score_field.score(state, t, cond)

    t = float(t_start)
    for step in range(cfg.steps):
        if cfg.integrator == "euler":
            p = p - h * drift(p, t)
        else:  # rk4
            k1 = drift(p, t)
            k2 = drift(p - 0.5 * h * k1, t - 0.5 * h)
            k3 = drift(p - 0.5 * h * k2, t - 0.5 * h)
            k4 = drift(p - h * k3, t - h)
            p = p - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = t_start - (step + 1) * h
        if not np.all(np.isfinite(p)):
            raise SamplerDivergedError(step, t)
    return p


def _candidate_rngs(cfg: SamplerConfig) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(cfg.k)]


def _solve_and_decode(score_field, cond, cfg, rng, draw_initial) -> Pose:
    for _ in range(4):  # initial attempt + 3 retries with an advanced stream
        p1 = draw_initial(rng)
        p_eps = pf_ode_solve(score_field, cond, p1, cfg,
                             t_start=draw_initial.t_start)
        try:
            return decode_pose(p_eps)
        except GeometryError:
            continue
    raise CandidateDegenerateError("candidate rotation decode failed after 3 retries")


def sample_candidates(score_field: ScoreField, cond: Condition,
                      cfg: SamplerConfig) -> PoseCandidateSet:
    """K independent PF-ODE solves from i.i.d. N(0, sigma_max^2 I) starts."""

    def draw(rng):
        return cfg.schedule.sigma_max * rng.standard_normal(POSE_DIM)

    draw.t_start = 1.0
    poses = [_solve_and_decode(score_field, cond, cfg, rng, draw)
             for rng in _candidate_rngs(cfg)]
    return PoseCandidateSet(poses, condition_id=cond.object_id)


def warm_start_sample(score_field: ScoreField, cond: Condition, prev: Pose,
                      t0: float, cfg: SamplerConfig) -> PoseCandidateSet:
    """Perturb the previous pose to time t0 and integrate t0 -> epsilon."""
    sched = cfg.schedule
    if not (sched.epsilon < t0 < 1.0 or t0 == 1.0):
        raise ValueError(f"t0 must be in (epsilon, 1], got {t0}")
    p_prev = encode_pose(prev)

    def draw(rng):
        return perturb(p_prev, t0, sched, rng)

    draw.t_start = t0
    poses = [_solve_and_decode(score_field, cond, cfg, rng, draw)
             for rng in _candidate_rngs(cfg)]
    return PoseCandidateSet(poses, condition_id=cond.object_id)


def track_sequence(score_field: ScoreField, conds: list[Condition], init: Pose,
                   cfg: SamplerConfig, t0: float = 0.3,
                   energy_field=None,
                   filter_cfg: FilterConfig | None = None,
                   cluster_cfg: ClusterConfig | None = None) -> list[Pose]:
    """Frame-to-frame tracking: warm start each frame at the previous estimate.

    Frame 0 warm starts at `init`; each frame's candidates are energy-filtered
    (when an energy field is given) and aggregated by clustering.
    """
    if not conds:
        raise ValueError("track_sequence needs at least one frame")
    filter_cfg = filter_cfg or FilterConfig()
    cluster_cfg = cluster_cfg or ClusterConfig()
    out: list[Pose] = []
    current = init
    for i, cond in enumerate(conds):
        frame_cfg = replace(cfg, seed=cfg.seed + i)
        cands = warm_start_sample(score_field, cond, current, t0, frame_cfg)
        if energy_field is not None:
            cands = rank_and_filter(cands, energy_field, cond, filter_cfg)
        current = aggregate(cands, cluster_cfg)
        out.append(current)
    return out
