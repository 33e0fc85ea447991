"""Figure-eight single-lane traffic simulator.

The track is two tangent circles (240 m each for the default 480 m track)
joined into one closed curve. Both loops pass the tangency point heading in
the same direction, so vehicles from the two loops can meet there: that point
is the unsignalized crossing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

V_MAX = 13.89
SENSOR_RANGE = 75.0
COLLISION_PENALTY = -10.0
STATE_DIM = 7
ACTION_DIM = 1

# column order of an observation vector
V, X, Y, V_AHEAD, V_BEHIND, L_AHEAD, L_BEHIND = range(STATE_DIM)


class TooManyVehicles(ValueError):
    pass


class ActionOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class TrackGeometry:
    total_length: float = 480.0

    @property
    def loop_radius(self) -> float:
        return self.total_length / (4.0 * math.pi)

    @property
    def crossing_arclengths(self) -> tuple[float, float]:
        return (0.0, self.total_length / 2.0)

    def to_xy(self, s):
        return arclength_to_xy(self, s)


def arclength_to_xy(geom: TrackGeometry, s):
    """Map arclength(s) to planar coordinates. Accepts scalars or arrays."""
    s = np.mod(np.asarray(s, dtype=float), geom.total_length)
    half = geom.total_length / 2.0
    r = geom.loop_radius
    second = s >= half
    theta = np.where(second, s - half, s) / r
    x = r * np.sin(theta)
    # upper loop counter-clockwise, lower loop clockwise; both pass (0, 0) heading +x
    y = np.where(second, -1.0, 1.0) * r * (1.0 - np.cos(theta))
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


@dataclass
class EnvConfig:
    n_agents: int = 8
    n_hv_range: tuple[int, int] = (8, 20)
    tau: float = 0.1
    horizon: int = 200
    a_max: float = 4.0
    vehicle_length: float = 4.5
    v_max: float = V_MAX
    sensor_range: float = SENSOR_RANGE
    total_length: float = 480.0
    hv_headway: float = 1.5
    seed: int = 0

    def validate(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        lo, hi = self.n_hv_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad n_hv_range {self.n_hv_range}")


@dataclass
class VehicleState:
    v: float
    x: float
    y: float
    v_a: float
    v_e: float
    l_a: float
    l_e: float
    s: float
    kind: str  # "controlled" | "scripted"

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.x, self.y, self.v_a, self.v_e, self.l_a, self.l_e])


@dataclass
class StepOutcome:
    obs: np.ndarray  # (I, 7) next observations of controlled agents
    rewards: np.ndarray  # (I,)
    collision: bool
    collided: np.ndarray  # (I,) bool, agent took part in a collision
    delta_x: np.ndarray  # (I,)
    done: bool
    t: int


def reward_from_state(states, vehicle_length: float = 4.5):
    """Known (calibrated) reward r = v + v_a + v_e + beta evaluated on states.

    Works on arrays of shape (..., 7). A collision is visible to the state only
    through the along-track gaps.
    """
    states = np.asarray(states)
    base = states[..., V] + states[..., V_AHEAD] + states[..., V_BEHIND]
    hit = np.minimum(states[..., L_AHEAD], states[..., L_BEHIND]) < vehicle_length
    return base + np.where(hit, COLLISION_PENALTY, 0.0)


class Figure8Env:
    """I controlled vehicles plus scripted followers on the figure-eight.

    Controlled agents occupy indices 0..I-1 of the internal arrays.
    """

    def __init__(self, cfg: EnvConfig | None = None):
        self.cfg = cfg or EnvConfig()
        self.cfg.validate()
        self.geom = TrackGeometry(self.cfg.total_length)
        self.s = np.zeros(0)
        self.v = np.zeros(0)
        self.t = 0
        self.done = True

    @property
    def n_vehicles(self) -> int:
        return len(self.s)

    @property
    def n_agents(self) -> int:
        return self.cfg.n_agents

    def reset(self, rng: np.random.Generator, n_hv: int | None = None, max_tries: int = 1000):
        cfg = self.cfg
        if n_hv is None:
            lo, hi = cfg.n_hv_range
            n_hv = int(rng.integers(lo, hi + 1))
        n = cfg.n_agents + n_hv
        if n * (cfg.vehicle_length + 1.0) > cfg.total_length:
            raise TooManyVehicles(f"{n} vehicles do not fit on {cfg.total_length} m")
        spacing = cfg.total_length / n
        jitter = min(2.0, max(0.0, (spacing - cfg.vehicle_length - 1.0) / 2.0))
        half = cfg.total_length / 2.0
        base = np.arange(n) * spacing + spacing / 2.0
        # Even spacing puts pairs exactly half a track apart, i.e. on top of each
        # other at the crossing; the fallback layout shifts the lower loop.
        shifted = base + np.where(base >= half, spacing / 2.0, 0.0)
        layouts = [base] if spacing / 2.0 < cfg.vehicle_length + 1.0 else [base, shifted]
        s = None
        for layout in layouts:
            for _ in range(max_tries // len(layouts)):
                cand = np.mod(layout + rng.uniform(-jitter, jitter, size=n), cfg.total_length)
                cand = cand[rng.permutation(n)]
                if _min_planar_distance(self.geom, cand) > cfg.vehicle_length:
                    s = cand
                    break
            if s is not None:
                break
        if s is None:
            raise TooManyVehicles("could not place vehicles without an initial conflict")
        self.s = s
        self.v = np.zeros(n)
        self.t = 0
        self.done = False
        return self.states()

    # --- observation -----------------------------------------------------

    def _neighbors(self):
        """Along-track gap and speed of the vehicle ahead/behind, with sentinels."""
        cfg = self.cfg
        n = self.n_vehicles
        l_a = np.full(n, cfg.sensor_range)
        l_e = np.full(n, cfg.sensor_range)
        v_a = np.full(n, cfg.v_max)
        v_e = np.full(n, cfg.v_max)
        if n < 2:
            return v_a, v_e, l_a, l_e
        order = np.argsort(self.s, kind="stable")
        s_sorted = self.s[order]
        nxt = np.roll(order, -1)
        prv = np.roll(order, 1)
        gap_ahead = np.mod(np.roll(s_sorted, -1) - s_sorted, cfg.total_length)
        gap_behind = np.mod(s_sorted - np.roll(s_sorted, 1), cfg.total_length)
        see_a = gap_ahead <= cfg.sensor_range
        see_e = gap_behind <= cfg.sensor_range
        l_a[order] = np.where(see_a, gap_ahead, cfg.sensor_range)
        l_e[order] = np.where(see_e, gap_behind, cfg.sensor_range)
        v_a[order] = np.where(see_a, self.v[nxt], cfg.v_max)
        v_e[order] = np.where(see_e, self.v[prv], cfg.v_max)
        return v_a, v_e, l_a, l_e

    def observe_all(self) -> np.ndarray:
        """(n_vehicles, 7) observation matrix."""
        x, y = arclength_to_xy(self.geom, self.s)
        v_a, v_e, l_a, l_e = self._neighbors()
        return np.stack([self.v, np.atleast_1d(x), np.atleast_1d(y), v_a, v_e, l_a, l_e], axis=1)

    def observe(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_vehicles:
            raise IndexError(i)
        return self.observe_all()[i]

    def agent_obs(self) -> np.ndarray:
        return self.observe_all()[: self.cfg.n_agents]

    def states(self) -> list[VehicleState]:
        obs = self.observe_all()
        out = []
        for i, row in enumerate(obs):
            kind = "controlled" if i < self.cfg.n_agents else "scripted"
            out.append(VehicleState(*map(float, row), s=float(self.s[i]), kind=kind))
        return out

    def positions(self) -> np.ndarray:
        x, y = arclength_to_xy(self.geom, self.s[: self.cfg.n_agents])
        return np.stack([np.atleast_1d(x), np.atleast_1d(y)], axis=1)

    # --- dynamics --------------------------------------------------------

    def scripted_targets(self, l_a: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        target = 0.5 * (l_a - cfg.vehicle_length) / cfg.hv_headway
        return np.clip(target, 0.0, cfg.v_max)

    def step(self, actions) -> StepOutcome:
        cfg = self.cfg
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        actions = np.asarray(actions, dtype=float).reshape(-1)
        if actions.shape[0] != cfg.n_agents:
            raise ValueError(f"expected {cfg.n_agents} actions, got {actions.shape[0]}")
        if not np.all(np.isfinite(actions)) or np.any(actions < 0.0) or np.any(actions > cfg.v_max):
            raise ActionOutOfRange(f"target velocity outside [0, {cfg.v_max}]: {actions}")

        _, _, l_a, _ = self._neighbors()
        targets = self.scripted_targets(l_a)
        targets[: cfg.n_agents] = actions

        dv_max = cfg.a_max * cfg.tau
        self.v = np.clip(self.v + np.clip(targets - self.v, -dv_max, dv_max), 0.0, cfg.v_max)
        self.s = np.mod(self.s + self.v * cfg.tau, cfg.total_length)
        self.t += 1

        collided_all = _collision_mask(self.geom, self.s, cfg.vehicle_length)
        collision = bool(collided_all.any())
        obs = self.agent_obs()
        collided = collided_all[: cfg.n_agents]
        rewards = obs[:, V] + obs[:, V_AHEAD] + obs[:, V_BEHIND] + np.where(collided, COLLISION_PENALTY, 0.0)
        self.done = collision or self.t >= cfg.horizon
        return StepOutcome(
            obs=obs,
            rewards=rewards,
            collision=collision,
            collided=collided,
            delta_x=self.v[: cfg.n_agents] * cfg.tau,
            done=self.done,
            t=self.t,
        )


def _pairwise_distances(geom: TrackGeometry, s: np.ndarray) -> np.ndarray:
    x, y = arclength_to_xy(geom, s)
    x, y = np.atleast_1d(x), np.atleast_1d(y)
    return np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])


def _collision_mask(geom: TrackGeometry, s: np.ndarray, vehicle_length: float) -> np.ndarray:
    if len(s) < 2:
        return np.zeros(len(s), dtype=bool)
    dist = _pairwise_distances(geom, s)
    np.fill_diagonal(dist, np.inf)
    close = dist < vehicle_length
    return close.any(axis=1)


def _min_planar_distance(geom: TrackGeometry, s: np.ndarray) -> float:
    if len(s) < 2:
        return math.inf
    dist = _pairwise_distances(geom, s)
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())
