"""How episodes end under fixed policies: agent involved, scripted-only, or none."""
import argparse

import numpy as np

from mapets.env import V_MAX, EnvConfig, Figure8Env

ap = argparse.ArgumentParser()
ap.add_argument("--episodes", type=int, default=100)
args = ap.parse_args()

policies = {
    "random": lambda rng, obs: rng.uniform(0, V_MAX, len(obs)),
    "const5": lambda rng, obs: np.full(len(obs), 5.0),
    "stopped": lambda rng, obs: np.zeros(len(obs)),
}
for name, pol in policies.items():
    ends = {"agent": 0, "scripted_only": 0, "none": 0}
    lengths = []
    for seed in range(args.episodes):
        rng = np.random.default_rng(seed)
        env = Figure8Env(EnvConfig())
        env.reset(rng)
        obs = env.agent_obs()
        while not env.done:
            out = env.step(pol(rng, obs))
            obs = out.obs
        lengths.append(env.t)
        key = "none" if not out.collision else ("agent" if out.collided.any() else "scripted_only")
        ends[key] += 1
    print(f"{name:8s} safety {np.mean(lengths) / 200:.3f} endings {ends}")
