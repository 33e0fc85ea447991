"""Trajectory-sampling CEM planner executed receding-horizon."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import V_MAX


@dataclass
class PlannerConfig:
    horizon: int = 25
    n_candidates: int = 400
    n_elites: int = 40
    n_particles: int = 20
    max_iters: int = 5
    epsilon: float = 1e-3
    assignment: str = "per_rollout"  # or "per_step"
    var_floor: float = 1e-4
    action_low: float = 0.0
    action_high: float = V_MAX

    def validate(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_candidates < 1 or self.n_elites < 1:
            raise ValueError("need at least one candidate and one elite")
        if self.n_elites > self.n_candidates:
            raise ValueError(f"n_elites ({self.n_elites}) > n_candidates ({self.n_candidates})")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.assignment not in ("per_rollout", "per_step"):
            raise ValueError(f"unknown assignment mode {self.assignment!r}")
        if not self.action_low < self.action_high:
            raise ValueError("empty action box")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.action_low + self.action_high)


@dataclass
class CemDistribution:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, cfg: PlannerConfig) -> "CemDistribution":
        width = cfg.action_high - cfg.action_low
        return cls(np.full(cfg.horizon, cfg.midpoint), np.full(cfg.horizon, (width / 4.0) ** 2))

    def copy(self) -> "CemDistribution":
        return CemDistribution(self.mean.copy(), self.var.copy())


@dataclass
class CemResult:
    sequence: np.ndarray
    posterior: CemDistribution
    elite_values: list = field(default_factory=list)  # mean elite value per iteration
    sigma_trace: list = field(default_factory=list)  # max std per iteration
    iterations: int = 0


def _assign_members(n_members, shape, rng):
    return rng.integers(0, n_members, size=shape)


def rollout(model, s0, seqs, n_particles, rng, assignment="per_rollout"):
    """Propagate P particles per candidate sequence through the ensemble.

    seqs has shape (Q, w). Returns states of shape (Q, P, w + 1, state_dim).
    """
    seqs = np.atleast_2d(np.asarray(seqs, float))
    Q, w = seqs.shape
    s0 = np.asarray(s0, float)
    states = np.empty((Q, n_particles, w + 1, s0.shape[-1]))
    states[:, :, 0] = s0
    members = _assign_members(model.n_members, (Q, n_particles), rng).reshape(-1)
    cur = np.broadcast_to(s0, (Q * n_particles, s0.shape[-1])).copy()
    for t in range(w):
        if assignment == "per_step" and t:
            members = _assign_members(model.n_members, Q * n_particles, rng)
        acts = np.repeat(seqs[:, t], n_particles)[:, None]
        cur = model.sample_next(members, cur, acts, rng)
        states[:, :, t + 1] = cur.reshape(Q, n_particles, -1)
    return states


def propagate_particles(model, s0, seq, n_particles, rng, assignment="per_rollout"):
    """P trajectories of w + 1 states for a single action sequence."""
    return rollout(model, s0, np.asarray(seq, float)[None, :], n_particles, rng, assignment)[0]


def score(states, seqs, reward_fn):
    """Mean over particles of the summed reward over states s_t .. s_{t+w-1}."""
    w = seqs.shape[1]
    acts = np.broadcast_to(seqs[:, None, :], states.shape[:2] + (w,))
    r = reward_fn(states[:, :, :w], acts)
    return r.sum(axis=2).mean(axis=1)


def evaluate_sequences(model, reward_fn, s0, seqs, n_particles, rng, assignment="per_rollout"):
    seqs = np.atleast_2d(np.asarray(seqs, float))
    states = rollout(model, s0, seqs, n_particles, rng, assignment)
    return score(states, seqs, reward_fn)


def evaluate_sequence(model, reward_fn, s0, seq, n_particles, rng, assignment="per_rollout") -> float:
    return float(evaluate_sequences(model, reward_fn, s0, np.asarray(seq, float)[None, :], n_particles, rng,
                                    assignment)[0])


def cem_plan(model, reward_fn, s0, cfg: PlannerConfig, prior: CemDistribution, rng,
             evaluator=None) -> CemResult:
    """Cross-entropy search over action sequences.

    evaluator(seqs, rng) -> values overrides the trajectory-sampling
    evaluation; tests use it to plug in exact objectives.
    """
    if evaluator is None:
        def evaluator(seqs, rng):
            return evaluate_sequences(model, reward_fn, s0, seqs, cfg.n_particles, rng, cfg.assignment)

    dist = prior.copy()
    res = CemResult(sequence=dist.mean.copy(), posterior=dist)
    # a collapsed prior has nothing to search over
    n_iters = 0 if np.all(dist.var == 0) else cfg.max_iters
    for _ in range(n_iters):
        std = np.sqrt(dist.var)
        noise = rng.standard_normal((cfg.n_candidates, len(dist.mean)))
        seqs = np.clip(dist.mean + std * noise, cfg.action_low, cfg.action_high)
        values = np.asarray(evaluator(seqs, rng), float)
        # stable sort keeps elite choice independent of evaluation order
        elite_idx = np.argsort(-values, kind="stable")[: cfg.n_elites]
        elites = seqs[elite_idx]
        new = CemDistribution(elites.mean(axis=0), np.maximum(elites.var(axis=0), cfg.var_floor))
        change = float(np.max(np.abs(np.sqrt(new.var) - std)))
        dist = new
        res.iterations += 1
        res.elite_values.append(float(values[elite_idx].mean()))
        res.sigma_trace.append(float(np.sqrt(dist.var).max()))
        if change <= cfg.epsilon:
            break
    res.sequence = np.clip(dist.mean, cfg.action_low, cfg.action_high)
    res.posterior = dist
    return res


class MpcController:
    """Per-agent receding-horizon controller with a warm-started CEM prior."""

    def __init__(self, cfg: PlannerConfig, reward_fn, prior: CemDistribution | None = None):
        cfg.validate()
        self.cfg = cfg
        self.reward_fn = reward_fn
        self.init = prior.copy() if prior is not None else CemDistribution.initial(cfg)
        self.prior = self.init.copy()
        self.n_calls = 0
        self.last: CemResult | None = None

    def reset(self):
        self.prior = self.init.copy()

    def act(self, model, s, rng) -> float:
        res = cem_plan(model, self.reward_fn, s, self.cfg, self.prior, rng)
        self.last = res
        self.n_calls += 1
        # shift the mean one step, pad with the box midpoint, restore the initial spread
        mean = np.append(res.posterior.mean[1:], self.cfg.midpoint)
        self.prior = CemDistribution(mean, self.init.var.copy())
        return float(np.clip(res.sequence[0], self.cfg.action_low, self.cfg.action_high))


def mpc_act(controller: MpcController, model, s, rng) -> float:
    return controller.act(model, s, rng)
