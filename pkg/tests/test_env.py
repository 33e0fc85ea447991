import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mapets.env import (COLLISION_PENALTY, L_AHEAD, L_BEHIND, V_AHEAD, V_BEHIND, V_MAX, ActionOutOfRange,
                        EnvConfig, Figure8Env, TooManyVehicles, TrackGeometry, arclength_to_xy, reward_from_state)

GEOM = TrackGeometry()


def make_env(n_agents=1, **kw):
    return Figure8Env(EnvConfig(n_agents=n_agents, n_hv_range=(0, 0), **kw))


def place(env, s, v=None):
    env.s = np.asarray(s, float)
    env.v = np.zeros(len(s)) if v is None else np.asarray(v, float)
    env.t = 0
    env.done = False


def test_crossing_points():
    assert arclength_to_xy(GEOM, 0.0) == (0.0, 0.0)
    x, y = arclength_to_xy(GEOM, 240.0)
    assert math.hypot(x, y) < 1e-9
    assert np.allclose(arclength_to_xy(GEOM, 480.0), arclength_to_xy(GEOM, 0.0), atol=1e-12)
    assert GEOM.crossing_arclengths == (0.0, 240.0)
    assert GEOM.loop_radius == pytest.approx(480 / (4 * math.pi))


@given(st.floats(-2000, 2000, allow_nan=False))
def test_periodic(s):
    a = np.array(arclength_to_xy(GEOM, s))
    b = np.array(arclength_to_xy(GEOM, s + 480.0))
    assert np.allclose(a, b, atol=1e-7)


def test_arclength_integrates_to_track_length():
    s = np.linspace(0, 480, 200_001)
    x, y = arclength_to_xy(GEOM, s)
    assert np.sum(np.hypot(np.diff(x), np.diff(y))) == pytest.approx(480.0, rel=1e-6)


def test_map_is_continuous():
    s = np.linspace(0, 480, 48_001)
    x, y = arclength_to_xy(GEOM, s)
    assert np.max(np.hypot(np.diff(x), np.diff(y))) <= 0.01 + 1e-9


@given(st.floats(-9.0, 9.0))
def test_crossing_conflict(u):
    # equal offsets from the two crossing arclengths; the loops are tangent there
    s = np.array([u % 480.0, 240.0 + u])
    x, y = arclength_to_xy(GEOM, s)
    assert math.hypot(x[0] - x[1], y[0] - y[1]) < 4.5


def test_reset_even_spacing(rng):
    env = make_env(8)
    states = env.reset(rng)
    assert len(states) == 8
    assert all(vs.v == 0.0 for vs in states)
    gaps = np.diff(np.sort(env.s))
    assert gaps.min() >= 60.0 - 4.0 - 1e-9
    for vs in states:
        assert (vs.x, vs.y) == pytest.approx(arclength_to_xy(GEOM, vs.s))


def test_reset_single_vehicle_sentinels(rng):
    env = make_env(1)
    env.reset(rng)
    obs = env.observe(0)
    assert obs[L_AHEAD] == 75.0 and obs[L_BEHIND] == 75.0
    assert obs[V_AHEAD] == V_MAX and obs[V_BEHIND] == V_MAX


def test_too_many_vehicles(rng):
    with pytest.raises(TooManyVehicles):
        make_env(200).reset(rng)


@pytest.mark.parametrize("seed", range(20))
def test_reset_with_scripted_vehicles_has_no_conflict(seed):
    env = Figure8Env(EnvConfig())
    env.reset(np.random.default_rng(seed))
    assert 16 <= env.n_vehicles <= 28
    x, y = arclength_to_xy(GEOM, env.s)
    dist = np.hypot(x[:, None] - x, y[:, None] - y) + np.eye(env.n_vehicles) * 1e9
    assert dist.min() > 4.5


def test_zero_step_is_zero():
    env = make_env(2)
    place(env, [10.0, 200.0])
    out = env.step([0.0, 0.0])
    assert np.array_equal(env.s, [10.0, 200.0])
    assert np.all(out.delta_x == 0.0)


def test_zero_reward_when_all_stopped():
    # every vehicle sees both neighbours, so no free-road sentinel enters
    env = make_env(8)
    place(env, np.arange(8) * 60.0 + 30.0)
    out = env.step(np.zeros(8))
    assert np.all(out.rewards == 0.0)


def test_reward_formula():
    s = np.array([5.0, 0.0, 0.0, 6.0, 4.0, 20.0, 20.0])
    assert reward_from_state(s) == 15.0
    s[L_AHEAD] = 4.0
    assert reward_from_state(s) == 15.0 + COLLISION_PENALTY


def test_two_vehicle_collision():
    env = make_env(2)
    place(env, [10.0, 15.0], v=[1.0, 0.0])
    # rear one moves 0.1*1.0 per step at most until gap < 4.5 => 6 steps
    out = None
    for _ in range(10):
        out = env.step([1.0, 0.0])
        if out.collision:
            break
    assert out.collision and out.done
    assert out.collided.all()
    x, y = arclength_to_xy(GEOM, env.s)
    assert math.hypot(x[1] - x[0], y[1] - y[0]) < 4.5
    assert np.allclose(out.rewards, out.obs[:, 0] + out.obs[:, V_AHEAD] + out.obs[:, V_BEHIND] - 10.0)


def test_crossing_collision_detected():
    env = make_env(2)
    place(env, [479.0, 239.0], v=[10.0, 10.0])
    out = env.step([10.0, 10.0])
    assert out.collision


def test_action_range():
    env = make_env(1)
    place(env, [0.0])
    with pytest.raises(ActionOutOfRange):
        env.step([V_MAX + 0.1])
    with pytest.raises(ActionOutOfRange):
        env.step([-0.1])


def test_observation_gaps():
    env = make_env(2)
    place(env, [100.0, 130.0])
    obs = env.agent_obs()
    assert obs[0, L_AHEAD] == pytest.approx(30.0)
    assert obs[1, L_BEHIND] == pytest.approx(30.0)
    place(env, [100.0, 200.0])
    assert env.agent_obs()[0, L_AHEAD] == 75.0


@given(v0=st.floats(0, V_MAX), target=st.floats(0, V_MAX))
def test_speed_converges(v0, target):
    env = make_env(1)
    place(env, [0.0], v=[v0])
    n = math.ceil(abs(target - v0) / 0.4 - 1e-12)
    for _ in range(n):
        env.step([target])
    assert env.v[0] == pytest.approx(target, abs=1e-12)
    for _ in range(3):
        out = env.step([target])
        assert out.delta_x[0] == pytest.approx(env.v[0] * 0.1)
    assert env.v[0] == pytest.approx(target, abs=1e-12)


@given(st.integers(0, 10_000))
def test_reward_bounds_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    env = Figure8Env(EnvConfig(n_agents=4, horizon=30))
    env.reset(rng)
    out = None
    while not env.done:
        out = env.step(rng.uniform(0, V_MAX, 4))
        hi = 3 * V_MAX
        for r, c in zip(out.rewards, out.collided):
            lo_b, hi_b = (-10.0, hi - 10.0) if c else (0.0, hi)
            assert lo_b - 1e-9 <= r <= hi_b + 1e-9
        assert np.all((out.obs[:, 0] >= 0) & (out.obs[:, 0] <= V_MAX))
    x, y = arclength_to_xy(GEOM, env.s)
    d = np.hypot(x[:, None] - x, y[:, None] - y)
    close = d < 4.5
    np.fill_diagonal(close, False)
    assert np.array_equal(close, close.T)
    assert out.collision == bool(close.any())


def test_determinism():
    def roll(seed):
        rng = np.random.default_rng(seed)
        env = Figure8Env(EnvConfig(n_agents=3))
        env.reset(rng)
        trace = []
        while not env.done:
            out = env.step(rng.uniform(0, V_MAX, 3))
            trace.append(out.obs.tobytes())
        return b"".join(trace)

    assert roll(7) == roll(7)


def test_episode_ends_at_horizon():
    env = make_env(1, horizon=5)
    place(env, [0.0])
    for _ in range(5):
        out = env.step([3.0])
    assert out.done and out.t == 5 and not out.collision
