"""Multi-agent UCRL2 with extended value iteration and clique-pooled counters."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..comms import CommGraph
from .cliques import CliqueCover, greedy_clique_cover
from .mdp import TabularMdp, optimal_average_reward


class DomainError(ValueError):
    pass


def confidence_radius(n_plus, S: int, A: int, t: float, delta: float):
    """L1 radius sqrt(14 S log(2 A t / delta) / N+) of the transition confidence set."""
    if not 0.0 < delta < 1.0 + 1e-15:
        raise DomainError(f"delta must be in (0, 1], got {delta}")
    arg = 2.0 * A * t / delta
    if arg <= 0:
        raise DomainError("non-positive log argument")
    log_term = math.log(arg)
    if log_term < 0:
        raise DomainError("negative log term")
    n_plus = np.asarray(n_plus, dtype=float)
    if np.any(n_plus < 1):
        raise DomainError("N+ must be >= 1")
    out = np.sqrt(14.0 * S * log_term / n_plus)
    return float(out) if out.ndim == 0 else out


def optimistic_kernel(p_hat, radius, v):
    """Maximize p . v over {p in simplex : |p - p_hat|_1 <= radius}, row-wise.

    p_hat has shape (..., S) and radius (...). Mass radius/2 moves onto the
    best state, taken from the worst states first.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    if p_hat.shape[-1] == 1:
        return np.ones_like(p_hat)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), p_hat.shape[:-1])
    order = np.argsort(-np.asarray(v), kind="stable")
    q = p_hat[..., order].copy()
    q0_old = q[..., 0].copy()
    q[..., 0] = np.minimum(1.0, q0_old + radius / 2.0)
    excess = q[..., 0] - q0_old
    # tail[k] = mass strictly worse than sorted position k
    rev_cum = np.cumsum(q[..., :0:-1], axis=-1)[..., ::-1]  # positions 1..S-1, inclusive tail
    tail = np.concatenate([rev_cum[..., 1:], np.zeros(q.shape[:-1] + (1,))], axis=-1)
    take = np.clip(excess[..., None] - tail, 0.0, q[..., 1:])
    q[..., 1:] -= take
    out = np.empty_like(q)
    out[..., order] = q
    return out


@dataclass
class EviResult:
    policy: np.ndarray
    rho: float
    values: np.ndarray
    iterations: int
    kernel: np.ndarray  # optimistic kernel of the final sweep, (S, A, S)


def extended_value_iteration(p_hat, radius, rewards, epsilon: float, tau: float = 0.5,
                             max_iter: int = 1_000_000) -> EviResult:
    """Optimistic average-reward VI over the L1 plausible set.

    Stops when span(TV - V) < epsilon; the returned gain is the midpoint of
    min/max of TV - V, so it is within epsilon/2 of the optimistic gain.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    S = p_hat.shape[0]
    V = np.zeros(S)
    for it in range(1, max_iter + 1):
        kern = optimistic_kernel(p_hat, radius, V)
        Q = rewards + kern @ V
        TV = Q.max(axis=1)
        diff = TV - V
        if diff.max() - diff.min() < epsilon:
            return EviResult(Q.argmax(axis=1), 0.5 * float(diff.max() + diff.min()), V - V.min(), it, kern)
        V = V + tau * diff
        V -= V.min()
    raise RuntimeError("extended value iteration did not converge")


def evi(p_hat, n_plus, rewards, t_k: float, delta: float = 0.05, radius=None) -> EviResult:
    """UCRL2 planning step. radius overrides the Hoeffding radius when given."""
    S, A = np.shape(rewards)
    if radius is None:
        radius = confidence_radius(np.maximum(1, n_plus), S, A, max(t_k, 1.0), delta)
    return extended_value_iteration(p_hat, radius, rewards, 1.0 / math.sqrt(max(t_k, 1.0)))


def empirical_kernel(trans_counts, n_plus):
    """Empirical P-hat; unvisited pairs get the uniform distribution."""
    trans_counts = np.asarray(trans_counts, dtype=float)
    S = trans_counts.shape[-1]
    n = trans_counts.sum(axis=-1, keepdims=True)
    uniform = np.full_like(trans_counts, 1.0 / S)
    return np.where(n > 0, trans_counts / np.maximum(n, 1.0), uniform)


@dataclass
class VisitCounters:
    N: np.ndarray  # (I, S, A) visits before the current episode, own plus received
    trans: np.ndarray  # (I, S, A, S)
    u: np.ndarray  # (I, S, A) own visits in the current episode
    u_trans: np.ndarray

    @classmethod
    def zeros(cls, I, S, A):
        return cls(np.zeros((I, S, A), int), np.zeros((I, S, A, S), int), np.zeros((I, S, A), int),
                   np.zeros((I, S, A, S), int))

    def n_plus(self):
        return np.maximum(1, self.N)

    def merge(self, cover: CliqueCover) -> np.ndarray:
        """Close an episode: every agent adds the visits of its whole clique."""
        before = self.N.copy()
        for clique in cover.cliques:
            idx = list(clique)
            self.N[idx] += self.u[idx].sum(axis=0)
            self.trans[idx] += self.u_trans[idx].sum(axis=0)
        self.u[:] = 0
        self.u_trans[:] = 0
        return self.N - before


@dataclass
class RegretTrace:
    rho_star: float
    cum_reward: np.ndarray  # (T, I), cumulative reward after step t
    episode: np.ndarray  # (T,) episode index of step t
    episode_starts: list = field(default_factory=list)
    covers: list = field(default_factory=list)  # cover size per episode

    @property
    def T(self) -> int:
        return self.cum_reward.shape[0]

    @property
    def n_agents(self) -> int:
        return self.cum_reward.shape[1]

    def regret(self) -> np.ndarray:
        """Per-agent regret after each step, (T, I)."""
        t = np.arange(1, self.T + 1)[:, None]
        return t * self.rho_star - self.cum_reward

    def group_regret(self) -> np.ndarray:
        return self.regret().sum(axis=1)


def _as_schedule(graph_schedule, n_agents) -> Callable[[int], CommGraph]:
    if graph_schedule is None:
        empty = CommGraph(n_agents, frozenset())
        return lambda k: empty
    if callable(graph_schedule):
        return graph_schedule
    if isinstance(graph_schedule, CommGraph):
        return lambda k: graph_schedule
    g = CommGraph.from_adjacency(graph_schedule)
    return lambda k: g


def complete_graph(n: int) -> CommGraph:
    return CommGraph(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def empty_graph(n: int) -> CommGraph:
    return CommGraph(n, frozenset())


def ma_ucrl2_run(mdp: TabularMdp, n_agents: int, graph_schedule, T: int, delta: float,
                 rng: np.random.Generator, start_state: int = 0, rho_star: float | None = None,
                 cover_fn=greedy_clique_cover) -> RegretTrace:
    """I agents run UCRL2 on parallel copies of mdp with synchronous episodes.

    An episode ends for everybody as soon as one agent's just-played pair
    reaches u = N+. Counters are then pooled inside each clique of the cover
    of that episode's graph. Rewards are known to the learner.
    """
    S, A = mdp.S, mdp.A
    I = n_agents
    schedule = _as_schedule(graph_schedule, I)
    if rho_star is None:
        rho_star = optimal_average_reward(mdp)
    cum_P = np.cumsum(mdp.P, axis=-1)
    cum_P[..., -1] = 1.0
    counters = VisitCounters.zeros(I, S, A)
    states = np.full(I, start_state, dtype=int)
    agents = np.arange(I)
    cum_reward = np.zeros((T, I))
    episode_of = np.zeros(T, dtype=int)
    total = np.zeros(I)
    trace = RegretTrace(rho_star, cum_reward, episode_of)
    t = 0
    k = 0
    while t < T:
        n_plus = counters.n_plus()
        policies = np.empty((I, S), dtype=int)
        solved = {}
        for i in agents:
            key = counters.trans[i].tobytes()
            if key not in solved:
                t_i = max(1, int(counters.N[i].sum()))
                p_hat = empirical_kernel(counters.trans[i], n_plus[i])
                solved[key] = evi(p_hat, n_plus[i], mdp.r, t_i, delta).policy
            policies[i] = solved[key]
        trace.episode_starts.append(t)
        while t < T:
            acts = policies[agents, states]
            u01 = rng.random(I)
            nxt = (u01[:, None] > cum_P[states, acts]).sum(axis=1)
            rew = rng.random(I) < mdp.r[states, acts]
            total += rew
            cum_reward[t] = total
            episode_of[t] = k
            counters.u[agents, states, acts] += 1
            counters.u_trans[agents, states, acts, nxt] += 1
            trigger = np.any(counters.u[agents, states, acts] >= n_plus[agents, states, acts])
            states = nxt
            t += 1
            if trigger:
                break
        cover = cover_fn(schedule(k))
        trace.covers.append(cover.size)
        counters.merge(cover)
        k += 1
    return trace


def loglog_slope(T_values, regret_values) -> float:
    """Least-squares slope of log(regret) against log(T)."""
    x = np.log(np.asarray(T_values, float))
    y = np.log(np.maximum(np.asarray(regret_values, float), 1e-12))
    return float(np.polyfit(x, y, 1)[0])
