"""Final-episode safety/agility at d=0 vs d=100 (desk profile), plus the
quantized variant at d=100 and the overhead-vs-range table."""
import argparse
import dataclasses
from pathlib import Path


from mapets.experiments import D_GRID, comm_benefit, overhead_from_results, quantized_parity
from mapets.harness import desk_profile, write_csv

ap = argparse.ArgumentParser()
ap.add_argument("--seeds", type=int, default=5)
ap.add_argument("--d", type=float, default=100.0)
ap.add_argument("--out", default="results")
ap.add_argument("--skip-quantized", action="store_true")
args = ap.parse_args()

out = Path(args.out)
cfg = desk_profile()
res = comm_benefit(range(args.seeds), args.d, cfg)
rows = []
for label, block in (("d0", res["d0"]), (f"d{args.d:g}", res["d"])):
    for seed, a, s in zip(range(args.seeds), block["agility"], block["safety"]):
        rows.append((label, seed, a, s))
if not args.skip_quantized:
    par = quantized_parity(res["d"], dataclasses.replace(cfg, d=args.d))
    for seed, a, s in zip(range(args.seeds), par["quantized"]["agility"], par["quantized"]["safety"]):
        rows.append((f"d{args.d:g}-quantized", seed, a, s))
    print("quantized relative gap:", par["relative_gap"])
write_csv(out / "comm_benefit.csv", ("setting", "seed", "final_agility", "final_safety"), rows)

curve = overhead_from_results(res["d0"]["results"] + res["d"]["results"], D_GRID)
write_csv(out / "overhead.csv", ("d", "mean_overhead"), sorted(curve.items()))
print(f"safety gain {res['safety_gain']:+.3f}, agility gain {res['agility_gain']:+.3f}, sign p={res['sign_p']:.3f}")
print("overhead:", {k: round(v, 1) for k, v in curve.items()})
