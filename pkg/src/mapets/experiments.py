"""Experiment drivers shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import dataclasses
import time

import numpy as np
from scipy import stats

from .comms import overhead_curve
from .harness import RunConfig, desk_profile, run_seed
from .regret import complete_graph, empty_graph, loglog_slope, ma_ucrl2_run, riverswim

D_GRID = (0, 50, 100, 150, 200)


def final_metrics(cfg: RunConfig, log=print) -> dict:
    """Final-episode agility/safety per seed plus the raw results."""
    out = {"agility": [], "safety": [], "results": []}
    for seed in cfg.seeds:
        t0 = time.time()
        res = run_seed(cfg, seed)
        m = res.final()
        out["agility"].append(m.agility)
        out["safety"].append(m.safety)
        out["results"].append(res)
        if log:
            log(f"  d={cfg.d:g} quantized={cfg.quantized} seed={seed} final agility={m.agility:.3f} "
                f"safety={m.safety:.3f} ({time.time() - t0:.0f}s)")
    return out


def sign_test(diffs) -> float:
    """One-sided sign test p-value for a positive median; ties are dropped."""
    diffs = np.asarray(diffs, float)
    pos, neg = int(np.sum(diffs > 0)), int(np.sum(diffs < 0))
    if pos + neg == 0:
        return 1.0
    return float(stats.binomtest(pos, pos + neg, 0.5, alternative="greater").pvalue)


def comm_benefit(seeds=(0, 1, 2, 3, 4), d_far: float = 100.0, cfg: RunConfig | None = None, log=print) -> dict:
    base = cfg or desk_profile()
    base = dataclasses.replace(base, seeds=tuple(seeds))
    near = final_metrics(dataclasses.replace(base, d=0.0), log)
    far = final_metrics(dataclasses.replace(base, d=d_far), log)
    diffs = np.array(far["safety"]) - np.array(near["safety"])
    return {
        "d0": near,
        "d": far,
        "safety_gain": float(diffs.mean()),
        "agility_gain": float(np.mean(far["agility"]) - np.mean(near["agility"])),
        "sign_p": sign_test(diffs),
    }


def overhead_from_results(results, d_values=D_GRID) -> dict:
    """Replay every recorded episode's end positions at each range."""
    episodes = [(ep.positions, ep.payload_sizes) for res in results for ep in res.episodes]
    return overhead_curve(episodes, d_values)


def quantized_parity(continuous: dict, cfg: RunConfig, log=print) -> dict:
    quant = final_metrics(dataclasses.replace(cfg, quantized=True), log)
    rel = {}
    for key in ("agility", "safety"):
        c, q = float(np.mean(continuous[key])), float(np.mean(quant[key]))
        rel[key] = abs(q - c) / c if c > 0 else float("inf")
    return {"quantized": quant, "relative_gap": rel}


def group_regret(n_states=4, n_agents=4, T=50_000, seeds=range(20), delta=0.05, log=None) -> dict:
    mdp = riverswim(n_states)
    curves = {"complete": [], "empty": []}
    for seed in seeds:
        for name, g in (("complete", complete_graph(n_agents)), ("empty", empty_graph(n_agents))):
            tr = ma_ucrl2_run(mdp, n_agents, g, T, delta, np.random.default_rng(seed))
            curves[name].append(tr.group_regret())
        if log:
            log(f"  seed {seed}: sharing {curves['complete'][-1][-1]:.0f}, "
                f"no sharing {curves['empty'][-1][-1]:.0f}")
    final = {k: np.array([c[-1] for c in v]) for k, v in curves.items()}
    p = float(stats.wilcoxon(final["complete"], final["empty"], alternative="less").pvalue)
    Ts = np.linspace(T // 10, T, 10).astype(int)
    mean_share = np.mean(curves["complete"], axis=0)
    return {
        "final": final,
        "wilcoxon_p": p,
        "slope": loglog_slope(Ts, mean_share[Ts - 1]),
        "curves": curves,
    }
