import itertools

import numpy as np
import pytest

from mapets.regret.mdp import (NotCommunicating, TabularMdp, diameter, finite_horizon_values, horizon_gaps,
                               optimal_average_reward, riverswim, solve_average_reward)


def cycle(n):
    P = np.zeros((n, 1, n))
    for s in range(n):
        P[s, 0, (s + 1) % n] = 1.0
    return TabularMdp(P, np.zeros((n, 1)))


def random_mdp(rng, S, A):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    return TabularMdp(P, rng.random((S, A)))


def enumerate_gain(mdp):
    """Best gain over all deterministic stationary policies via the Cesaro limit."""
    S = mdp.S
    best = -np.inf
    for pol in itertools.product(range(mdp.A), repeat=S):
        Pp = mdp.P[np.arange(S), pol]
        rp = mdp.r[np.arange(S), pol]
        lazy = 0.5 * (Pp + np.eye(S))
        limit = np.linalg.matrix_power(lazy, 2**16)
        best = max(best, (limit @ rp).max())
    return best


def test_validation():
    with pytest.raises(ValueError):
        TabularMdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        TabularMdp(np.full((2, 1, 2), 0.5), np.full((2, 1), 1.5))


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_cycle_diameter(n):
    assert diameter(cycle(n)) == pytest.approx(n - 1, abs=1e-6)


def test_two_state_geometric_diameter():
    P = np.zeros((2, 2, 2))
    P[:, 0] = np.eye(2)  # stay
    P[0, 1] = [0.5, 0.5]
    P[1, 1] = [0.5, 0.5]
    mdp = TabularMdp(P, np.zeros((2, 2)))
    assert diameter(mdp) == pytest.approx(2.0, abs=1e-6)
    # Monte Carlo: steps until the coin succeeds
    rng = np.random.default_rng(0)
    assert rng.geometric(0.5, 100_000).mean() == pytest.approx(2.0, abs=0.02)


def test_absorbing_state_is_not_communicating():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    with pytest.raises(NotCommunicating):
        diameter(TabularMdp(P, np.zeros((2, 1))))


def test_constant_reward_gain():
    mdp = riverswim(4)
    mdp = TabularMdp(mdp.P, np.full((4, 2), 0.37))
    assert optimal_average_reward(mdp) == pytest.approx(0.37, abs=1e-9)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_riverswim_gain_matches_enumeration(n):
    assert optimal_average_reward(riverswim(n)) == pytest.approx(enumerate_gain(riverswim(n)), abs=1e-7)


def test_random_gain_matches_enumeration(rng):
    for _ in range(10):
        mdp = random_mdp(rng, 3, 2)
        assert optimal_average_reward(mdp) == pytest.approx(enumerate_gain(mdp), abs=1e-7)


def test_periodic_chain_converges():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    rho, _, _ = solve_average_reward(TabularMdp(P, np.array([[1.0], [0.0]])))
    assert rho == pytest.approx(0.5, abs=1e-9)


@pytest.mark.parametrize("n", range(2, 7))
def test_finite_horizon_bound(n):
    gaps = horizon_gaps(riverswim(n), 200)
    assert gaps.shape == (200,)
    assert gaps.min() >= -1e-9


def test_finite_horizon_values_small():
    mdp = TabularMdp(np.ones((1, 2, 1)), np.array([[0.2, 0.7]]))
    assert np.allclose(finite_horizon_values(mdp, 3)[:, 0], [0.7, 1.4, 2.1])
