"""Finite MDPs and their average-reward quantities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NotCommunicating(ValueError):
    pass


@dataclass
class TabularMdp:
    P: np.ndarray  # (S, A, S) row-stochastic
    r: np.ndarray  # (S, A) mean rewards in [0, 1]
    name: str = ""

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        S, A, S2 = self.P.shape
        if S != S2 or self.r.shape != (S, A):
            raise ValueError(f"shape mismatch P{self.P.shape} r{self.r.shape}")
        if np.any(self.P < 0) or not np.allclose(self.P.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("transition rows must be probability vectors")
        if np.any(self.r < 0) or np.any(self.r > 1):
            raise ValueError("mean rewards must lie in [0, 1]")

    @property
    def S(self) -> int:
        return self.P.shape[0]

    @property
    def A(self) -> int:
        return self.P.shape[1]


def riverswim(n_states: int = 6, r_left: float = 0.005, r_right: float = 1.0) -> TabularMdp:
    """RiverSwim chain. Action 0 swims left (deterministic), action 1 swims right."""
    if n_states < 2:
        raise ValueError("RiverSwim needs at least two states")
    S = n_states
    P = np.zeros((S, 2, S))
    r = np.zeros((S, 2))
    for s in range(S):
        P[s, 0, max(s - 1, 0)] = 1.0
    P[0, 1, 0], P[0, 1, 1] = 0.4, 0.6
    for s in range(1, S - 1):
        P[s, 1, s - 1], P[s, 1, s], P[s, 1, s + 1] = 0.05, 0.6, 0.35
    P[S - 1, 1, S - 1], P[S - 1, 1, S - 2] = 0.6, 0.4
    r[0, 0] = r_left
    r[S - 1, 1] = r_right
    return TabularMdp(P, r, name=f"riverswim{S}")


def is_communicating(mdp: TabularMdp) -> bool:
    reach = (mdp.P > 0).any(axis=1)
    closure = reach | np.eye(mdp.S, dtype=bool)
    for _ in range(mdp.S):
        closure = closure | ((closure.astype(int) @ closure.astype(int)) > 0)
    return bool(closure.all())


def hitting_times(mdp: TabularMdp, tol: float = 1e-9, max_iter: int = 1_000_000) -> np.ndarray:
    """H[j, s] = min over policies of the expected time to reach j from s."""
    S = mdp.S
    H = np.zeros((S, S))
    diag = np.arange(S)
    for _ in range(max_iter):
        new = 1.0 + np.einsum("sat,jt->jsa", mdp.P, H).min(axis=-1)
        new[diag, diag] = 0.0
        if np.max(np.abs(new - H)) < tol:
            return new
        H = new
    raise NotCommunicating("hitting-time iteration did not converge")


def diameter(mdp: TabularMdp, tol: float = 1e-9, max_iter: int = 1_000_000) -> float:
    if not is_communicating(mdp):
        raise NotCommunicating("some state is unreachable from another")
    return float(hitting_times(mdp, tol, max_iter).max())


def solve_average_reward(mdp: TabularMdp, tol: float = 1e-9, tau: float = 0.5, max_iter: int = 1_000_000):
    """Relative value iteration on the aperiodic transform of the MDP.

    Returns (rho, greedy policy, bias vector). The transform mixes every
    kernel with the identity, which keeps the gain but removes periodicity.
    """
    V = np.zeros(mdp.S)
    for _ in range(max_iter):
        Q = mdp.r + mdp.P @ V
        TV = Q.max(axis=1)
        diff = TV - V
        if diff.max() - diff.min() < tol:
            return 0.5 * (diff.max() + diff.min()), Q.argmax(axis=1), V - V.min()
        V = V + tau * diff
        V -= V.min()
    raise RuntimeError("relative value iteration did not converge")


def optimal_average_reward(mdp: TabularMdp, tol: float = 1e-9) -> float:
    return float(solve_average_reward(mdp, tol)[0])


def finite_horizon_values(mdp: TabularMdp, T: int) -> np.ndarray:
    """Row t-1 holds the optimal t-step expected reward from every state."""
    out = np.empty((T, mdp.S))
    V = np.zeros(mdp.S)
    for t in range(T):
        V = (mdp.r + mdp.P @ V).max(axis=1)
        out[t] = V
    return out


def horizon_gaps(mdp: TabularMdp, T: int = 200):
    """(T rho* + D) - optimal T-step reward for T = 1..T; non-negative when the bound holds."""
    rho = optimal_average_reward(mdp)
    D = diameter(mdp)
    best = finite_horizon_values(mdp, T).max(axis=1)
    steps = np.arange(1, T + 1)
    return steps * rho + D * 1.0 - best
