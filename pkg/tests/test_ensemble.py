import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mapets.data import ReplayDataset, Transition
from mapets.ensemble import (EmptyBatch, EnsembleConfig, InsufficientData, ProbabilisticEnsemble, forward,
                             gaussian_nll, nll_and_grads)
from mapets.env import L_AHEAD, L_BEHIND, SENSOR_RANGE, V, V_AHEAD, V_BEHIND, V_MAX


def linear_system(n, rng, noise=0.01):
    s = rng.standard_normal((n, 7))
    a = rng.uniform(-1, 1, (n, 1))
    s_next = s.copy()
    s_next[:, 0] += 0.1 * a[:, 0]
    s_next += noise * rng.standard_normal(s.shape)
    return s, a, s_next


def small(hidden=8, layers=2, B=1, **kw):
    return EnsembleConfig(n_members=B, hidden=hidden, n_layers=layers, **kw)


def test_nll_identity_cases():
    z = np.zeros((3, 7))
    assert gaussian_nll(z, z, z) == 0.0
    e = np.zeros((1, 7))
    e[0, 2] = 1.0
    assert gaussian_nll(e, np.zeros((1, 7)), np.zeros((1, 7))) == 1.0
    with pytest.raises(EmptyBatch):
        gaussian_nll(np.zeros((0, 7)), np.zeros((0, 7)), np.zeros((0, 7)))


@given(st.integers(0, 10_000))
def test_nll_matches_termwise_loop(seed):
    rng = np.random.default_rng(seed)
    mu, lv, y = rng.standard_normal((3, 5, 7))
    ref = 0.0
    for n in range(5):
        for j in range(7):
            ref += (mu[n, j] - y[n, j]) ** 2 / np.exp(lv[n, j]) + lv[n, j]
    assert gaussian_nll(mu, lv, y) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def _fd_check(seed, h=1e-5):
    rng = np.random.default_rng(seed)
    m = ProbabilisticEnsemble(7, 1, small(hidden=6, layers=3), rng=rng)
    # move the soft bounds so both softplus branches carry gradient
    m.params["max_lv"][:] = rng.uniform(-0.5, 1.0, m.params["max_lv"].shape)
    m.params["min_lv"][:] = rng.uniform(-3.0, -1.0, m.params["min_lv"].shape)
    p = {k: v[0].copy() for k, v in m.params.items()}
    xn, yn = rng.standard_normal((4, 8)), rng.standard_normal((4, 7))
    _, g = nll_and_grads(p, xn, yn, 3, 7)
    worst = 0.0
    for k, arr in p.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = nll_and_grads(p, xn, yn, 3, 7)[0]
            flat[j] = old - h
            dn = nll_and_grads(p, xn, yn, 3, 7)[0]
            flat[j] = old
            num.reshape(-1)[j] = (up - dn) / (2 * h)
        denom = max(np.linalg.norm(num), np.linalg.norm(g[k]), 1e-8)
        worst = max(worst, np.linalg.norm(num - g[k]) / denom)
    return worst


@pytest.mark.parametrize("seed", range(5))
def test_gradients_finite_differences(seed):
    assert _fd_check(seed) < 1e-4


def test_stacked_gradients_match_per_member(rng):
    m = ProbabilisticEnsemble(7, 1, small(B=3), rng=rng)
    xn, yn = rng.standard_normal((3, 5, 8)), rng.standard_normal((3, 5, 7))
    loss, g = nll_and_grads(m.params, xn, yn, 2, 7)
    for b in range(3):
        lb, gb = nll_and_grads(m.member_params(b), xn[b], yn[b], 2, 7)
        assert loss[b] == pytest.approx(lb)
        for k in gb:
            assert np.allclose(g[k][b], gb[k])


def test_zero_output_layer_gives_identity_mean(rng):
    m = ProbabilisticEnsemble(cfg=small(B=2), rng=rng)
    m.zero_output_layer()
    s = rng.uniform(0, 10, (4, 7))
    assert np.array_equal(m.predict(1, s, np.ones(4)).mean, s)


def test_variance_inside_soft_bounds(rng):
    m = ProbabilisticEnsemble(cfg=small(B=2), rng=rng)
    s = rng.standard_normal((10**5, 7)) * 1e3
    for b in range(2):
        lo, hi = m.variance_bounds(b)
        _, logvar, _ = forward(m.member_params(b), m.normalize(s, rng.standard_normal(len(s))), 2, 7)
        var = np.exp(logvar)
        assert np.all(np.isfinite(var))
        assert np.all(var >= lo * (1 - 1e-12)) and np.all(var <= hi * (1 + 1e-12))


def test_forced_min_variance_sample_equals_mean(rng):
    m = ProbabilisticEnsemble(cfg=small(), rng=rng)
    m.force_min_variance()
    s = np.array([[5.0, 1.0, 2.0, 5.0, 5.0, 30.0, 30.0]])
    pred = m.predict(0, s, [3.0])
    sample = m.sample_next(0, s, [3.0], rng)
    assert np.all(np.abs(sample - m.clamp_state(pred.mean)) <= 3 * np.sqrt(pred.var) + 1e-12)


def test_monte_carlo_mean(rng):
    m = ProbabilisticEnsemble(7, 1, small(), rng=rng, state_box=(np.full(7, -np.inf), np.full(7, np.inf)))
    s = np.zeros((1, 7))
    pred = m.predict(0, s, [0.5])
    n = 10**5
    draws = m.sample_next(np.zeros(n, int), np.repeat(s, n, 0), np.full(n, 0.5), rng)
    sd = np.sqrt(pred.var[0])
    assert np.all(np.abs(draws.mean(0) - pred.mean[0]) <= 4 * sd / np.sqrt(n))


def test_samples_stay_in_box(rng):
    m = ProbabilisticEnsemble(cfg=small(B=2), rng=rng)
    m.params["max_lv"][:] = 8.0
    m.params["min_lv"][:] = 8.0
    s = rng.uniform(0, 13.89, (1000, 7))
    out = m.sample_next(rng.integers(0, 2, 1000), s, rng.uniform(0, 13.89, 1000), rng)
    for k in (V, V_AHEAD, V_BEHIND):
        assert out[:, k].min() >= 0 and out[:, k].max() <= V_MAX
    for k in (L_AHEAD, L_BEHIND):
        assert out[:, k].min() >= 0 and out[:, k].max() <= SENSOR_RANGE


def test_normalizer_std_floor(rng):
    m = ProbabilisticEnsemble(cfg=small(), rng=rng)
    X = np.ones((10, 8))
    m.fit_normalizer(X, np.zeros((10, 7)))
    assert np.all(m.in_sd == 1.0) and np.all(m.out_sd == 1.0)


def test_insufficient_data(rng):
    m = ProbabilisticEnsemble(cfg=small())
    with pytest.raises(InsufficientData):
        m.train(linear_system(50, rng), rng)
    buf = ReplayDataset()
    with pytest.raises(InsufficientData):
        m.train(buf, rng)


def test_linear_system_fit():
    rng = np.random.default_rng(0)
    m = ProbabilisticEnsemble(7, 1, EnsembleConfig(), rng=rng)
    m.train(linear_system(1000, rng), rng)
    s, a, sn = linear_system(500, rng)
    preds = np.stack([m.predict(b, s, a).mean for b in range(m.n_members)])
    assert np.sqrt(np.mean((preds - sn) ** 2)) < 0.05


def test_training_nll_does_not_increase():
    rng = np.random.default_rng(3)
    m = ProbabilisticEnsemble(7, 1, EnsembleConfig(hidden=64), rng=rng)
    hist = m.train(linear_system(1000, rng), rng)["nll"]
    first, last = hist[0], hist[-1]
    # NLL can be negative; compare on the scale of the first epoch
    assert np.mean((last - first) / np.abs(first)) <= 0.01


def test_repeated_transition_is_learned():
    rng = np.random.default_rng(5)
    s = np.array([5.0, 1.0, 2.0, 6.0, 4.0, 30.0, 40.0])
    ds = np.array([0.3, 0.5, -0.2, 0.1, 0.0, -1.0, 1.0])
    data = (np.tile(s, (256, 1)), np.full((256, 1), 5.0), np.tile(s + ds, (256, 1)))
    m = ProbabilisticEnsemble(7, 1, EnsembleConfig(hidden=32, n_members=2, epochs=200), rng=rng)
    m.train(data, rng)
    for b in range(2):
        assert np.allclose(m.predict(b, s, [5.0]).mean[0] - s, ds, atol=1e-2)


def test_members_are_distinct(rng):
    m = ProbabilisticEnsemble(7, 1, EnsembleConfig(hidden=16), rng=rng)
    m.train(linear_system(300, rng), rng)
    assert len({m.param_hash(b) for b in range(5)}) == 5


def test_bootstrap_unique_fraction(rng):
    m = ProbabilisticEnsemble(7, 1, EnsembleConfig(hidden=4, n_layers=1, epochs=1, batch_size=2000), rng=rng)
    boot = m.train(linear_system(20000, rng), rng)["bootstrap"]
    for b in range(5):
        frac = len(np.unique(boot[b])) / boot.shape[1]
        assert abs(frac - (1 - np.exp(-1))) < 0.02


def test_epistemic_signal():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = ProbabilisticEnsemble(7, 1, EnsembleConfig(hidden=32, epochs=10), rng=rng)
        s, a, sn = linear_system(400, rng)
        m.train((s, a, sn), rng)
        s_ood = 6.0 + rng.standard_normal((200, 7))
        a_ood = rng.uniform(-1, 1, (200, 1))

        def disagreement(x, u):
            means = np.stack([m.predict(b, x, u).mean for b in range(5)])
            return means.var(axis=0).mean()

        wins += disagreement(s_ood, a_ood) > disagreement(s[:200], a[:200])
    # one-sided sign test at the 5% level needs at least 15 of 20
    assert wins >= 15


def test_warm_start_flag(rng):
    data = linear_system(256, rng)
    warm = ProbabilisticEnsemble(7, 1, small(B=2), rng=np.random.default_rng(0))
    cold = ProbabilisticEnsemble(7, 1, small(B=2, warm_start=False), rng=np.random.default_rng(0))
    for m in (warm, cold):
        m.train(data, np.random.default_rng(1))
        m.train(data, np.random.default_rng(2))
    assert warm.param_hash(0) != cold.param_hash(0)


def test_checkpoint_round_trip(tmp_path, rng):
    m = ProbabilisticEnsemble(7, 1, small(B=3), rng=rng)
    m.train(linear_system(200, rng), rng)
    path = m.save(tmp_path / "model.bin")
    assert path.read_bytes()[:8] == b"MPETSENS"
    m2 = ProbabilisticEnsemble.load(path)
    s, a, _ = linear_system(5, rng)
    for b in range(3):
        assert m.param_hash(b) == m2.param_hash(b)
        assert np.array_equal(m.predict(b, s, a).mean, m2.predict(b, s, a).mean)


def test_transition_from_buffer_trains(rng):
    s, a, sn = linear_system(200, rng)
    buf = ReplayDataset()
    buf.extend(Transition(0, t, s[t], a[t], sn[t]) for t in range(200))
    m = ProbabilisticEnsemble(7, 1, small(B=2), rng=rng)
    hist = m.train(buf, rng)
    assert hist["nll"].shape == (5, 2)
