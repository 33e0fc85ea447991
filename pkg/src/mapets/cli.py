"""Command line entry point: python -m mapets {run,sweep,regret,cover,check}."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .comms import build_graph
from .env import Figure8Env
from .harness import ConfigError, RunConfig, write_csv, write_manifest
from .regret import complete_graph, empty_graph, exact_clique_cover, greedy_clique_cover, ma_ucrl2_run, riverswim
from .regret.cliques import TooLarge

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3

REGRET_HEADER = ("t", "agent_id", "cumulative_reward", "regret", "episode_index")
COVER_HEADER = ("d", "graph_edges", "greedy_cover", "exact_cover")


def _config(args) -> RunConfig:
    cfg = harness.desk_profile() if getattr(args, "desk", False) else RunConfig()
    if args.config:
        cfg = harness.loads_config(Path(args.config).read_text(), base=cfg)
    over = {}
    if args.seed is not None:
        over["run.seeds"] = [args.seed]
    if args.out:
        over["run.out_dir"] = args.out
    if getattr(args, "quantized", False):
        over["run.quantized"] = True
    cfg = harness.apply_overrides(cfg, over)
    return cfg.validate()


def _progress(row):
    print(f"seed {row.seed} episode {row.episode:2d} agility {row.agility:.3f} safety {row.safety:.3f} "
          f"overhead {row.overhead}", flush=True)


def cmd_run(args) -> int:
    cfg = _config(args)
    harness.run_mapets(cfg, progress=None if args.quiet else _progress)
    print(f"wrote {cfg.out_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    try:
        values = [json.loads(v) for v in args.values.split(",") if v.strip()]
    except json.JSONDecodeError as e:
        raise ConfigError(f"bad --values: {e}") from e
    out = Path(cfg.out_dir) / f"sweep_{args.axis}.csv"
    harness.sweep(cfg, args.axis, values, out, progress=None if args.quiet else _progress)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_regret(args) -> int:
    mdp = riverswim(args.states)
    out = Path(args.out or "runs/regret")
    graphs = {"complete": complete_graph(args.agents), "empty": empty_graph(args.agents)}
    modes = list(graphs) if args.graph == "both" else [args.graph]
    seeds = range(args.seed or 0, (args.seed or 0) + args.seeds)
    summary = []
    for mode in modes:
        for seed in seeds:
            rng = harness.stream(seed, "env")
            tr = ma_ucrl2_run(mdp, args.agents, graphs[mode], args.T, args.delta, rng)
            reg = tr.regret()
            ts = np.arange(args.every - 1, args.T, args.every)
            rows = [(t + 1, i, tr.cum_reward[t, i], reg[t, i], tr.episode[t]) for t in ts for i in range(args.agents)]
            write_csv(out / f"{mode}_seed{seed}.csv", REGRET_HEADER, rows)
            summary.append((mode, seed, float(tr.group_regret()[-1]), len(tr.episode_starts)))
            print(f"{mode} seed {seed}: group regret {summary[-1][2]:.1f}, {summary[-1][3]} episodes", flush=True)
    write_csv(out / "summary.csv", ("graph", "seed", "group_regret", "episodes"), summary)
    return EXIT_OK


def cmd_cover(args) -> int:
    cfg = _config(args)
    env = Figure8Env(cfg.env)
    d_values = [float(v) for v in args.d_values.split(",")]
    rows = []
    for k in range(args.layouts):
        env.reset(harness.stream(cfg.seeds[0], "env", 0, k))
        pos = env.positions()
        for d in d_values:
            g = build_graph(pos, d, k)
            greedy = greedy_clique_cover(g).size
            try:
                exact = exact_clique_cover(g).size
            except TooLarge:
                exact = ""
            rows.append((d, len(g.edges), greedy, exact))
    out = Path(cfg.out_dir) / "cover.csv"
    write_csv(out, COVER_HEADER, rows)
    write_manifest(out.parent / "manifest.json", cfg, {"d_values": d_values})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    ok = True
    for name, passed, info in run_checks():
        print(f"{'PASS' if passed else 'FAIL'} {name}: {info}")
        ok &= passed
    return EXIT_OK if ok else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mapets")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = json config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--quantized", action="store_true")
    common.add_argument("--desk", action="store_true", help="start from the scaled-down profile")
    common.add_argument("--quiet", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", parents=[common])
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("sweep", parents=[common])
    p.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma separated, e.g. 0,50,100")
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("regret", parents=[common])
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--agents", type=int, default=4)
    p.add_argument("--T", type=int, default=50_000)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--graph", choices=["complete", "empty", "both"], default="both")
    p.add_argument("--every", type=int, default=100, help="keep every n-th step in the CSV")
    p.set_defaults(fn=cmd_regret)
    p = sub.add_parser("cover", parents=[common])
    p.add_argument("--d-values", default="0,50,100,150,200")
    p.add_argument("--layouts", type=int, default=10)
    p.set_defaults(fn=cmd_cover)
    p = sub.add_parser("check", parents=[common])
    p.set_defaults(fn=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AssertionError as e:
        print(f"invariant failed: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
