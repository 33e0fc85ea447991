"""Fast invariant checks behind `python -m mapets check`."""
from __future__ import annotations

import itertools
import math

import numpy as np

from .ensemble import EnsembleConfig, ProbabilisticEnsemble, nll_and_grads
from .harness import agility, safety
from .planner import CemDistribution, PlannerConfig, cem_plan
from .regret import (clique_relation_check, exact_clique_cover, greedy_clique_cover, horizon_gaps, riverswim,
                     sequence_ratio_bound)


def check_gradients(n_draws: int = 10, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        m = ProbabilisticEnsemble(3, 1, EnsembleConfig(n_members=1, hidden=5, n_layers=2), rng=rng)
        xn, yn = rng.standard_normal((6, 4)), rng.standard_normal((6, 3))
        p = {k: v[0] for k, v in m.params.items()}
        _, g = nll_and_grads(p, xn, yn, 2, 3)
        for k in p:
            flat = p[k].reshape(-1)
            for j in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                old = flat[j]
                h = 1e-6
                flat[j] = old + h
                up = nll_and_grads(p, xn, yn, 2, 3)[0]
                flat[j] = old - h
                dn = nll_and_grads(p, xn, yn, 2, 3)[0]
                flat[j] = old
                num = (up - dn) / (2 * h)
                ana = g[k].reshape(-1)[j]
                worst = max(worst, abs(num - ana) / max(1e-8, abs(num) + abs(ana)))
    return worst


def check_cem(n_instances: int = 10, seed: int = 0) -> float:
    """Fraction of quadratic instances where CEM reaches 95% of the grid optimum."""
    rng = np.random.default_rng(seed)
    cfg = PlannerConfig(horizon=2, n_candidates=200, n_elites=20, max_iters=10, action_low=-1, action_high=1)
    grid = np.array([-1.0, 0.0, 1.0])
    ok = 0
    for _ in range(n_instances):
        target = rng.choice(grid, size=2)

        def value(seqs, _rng=None):
            return 10.0 - np.sum((np.atleast_2d(seqs) - target) ** 2, axis=1)

        best = max(value(np.array(c)[None])[0] for c in itertools.product(grid, repeat=2))
        res = cem_plan(None, None, None, cfg, CemDistribution.initial(cfg), rng, evaluator=value)
        ok += value(res.sequence[None])[0] >= 0.95 * best
    return ok / n_instances


def run_checks() -> list[tuple[str, bool, str]]:
    out = []
    err = check_gradients()
    out.append(("gradients", err < 1e-4, f"max rel err {err:.2e}"))
    frac = check_cem()
    out.append(("cem", frac >= 0.95, f"{frac:.2f} of instances"))
    gaps = [horizon_gaps(riverswim(n), 200).min() for n in range(2, 7)]
    out.append(("horizon-bound", min(gaps) >= -1e-9, f"min gap {min(gaps):.3f}"))
    rng = np.random.default_rng(0)
    rel_ok = True
    for _ in range(20):
        a = rng.random((8, 8)) < 0.5
        adj = np.triu(a, 1) | np.triu(a, 1).T
        g, e = greedy_clique_cover(adj), exact_clique_cover(adj)
        rel_ok &= g.is_valid(adj) and g.size >= e.size
        clique_relation_check(g, 8)
    out.append(("clique-cover", rel_ok, "greedy valid and >= exact"))
    seq_ok = True
    for _ in range(200):
        xs, tot = [], 0.0
        for _ in range(20):
            x = rng.random() * max(1.0, tot)
            xs.append(x)
            tot += x
        lhs, rhs = sequence_ratio_bound(xs)
        seq_ok &= lhs <= rhs
    out.append(("sequence-bound", seq_ok, "200 random sequences"))
    dx = np.full((200, 3), 13.89 * 0.1)
    t_c = np.full(3, 200)
    ag, sf = agility(dx, t_c), safety(t_c, 200)
    out.append(("metrics", math.isclose(ag, 1.389, rel_tol=1e-12) and sf == 1.0, f"agility {ag}, safety {sf}"))
    return out
