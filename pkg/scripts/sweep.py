"""Ablation sweep over d, w, B, P or blockage with the desk profile."""
import argparse
import json
from pathlib import Path

from mapets.harness import desk_profile, sweep

ap = argparse.ArgumentParser()
ap.add_argument("axis", choices=["d", "w", "B", "P", "blockage"])
ap.add_argument("values", help="comma separated")
ap.add_argument("--seeds", type=int, default=3)
ap.add_argument("--out", default="results")
args = ap.parse_args()

cfg = desk_profile(seeds=list(range(args.seeds)))
values = [json.loads(v) for v in args.values.split(",")]
sweep(cfg, args.axis, values, Path(args.out) / f"sweep_{args.axis}.csv",
      progress=lambda r: print(f"seed {r.seed} ep {r.episode} agility {r.agility:.3f} safety {r.safety:.3f}"))
