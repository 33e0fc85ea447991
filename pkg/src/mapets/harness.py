"""MA-PETS experiment loop, metrics, configs and CSV artifacts."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .comms import build_graph, exchange
from .data import ReplayDataset, Transition
from .ensemble import EnsembleConfig, ProbabilisticEnsemble
from .env import ACTION_DIM, STATE_DIM, EnvConfig, Figure8Env, reward_from_state
from .planner import MpcController, PlannerConfig
from .regret.quantize import QuantizerSpec, snap


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    d: float = 100.0
    blockage_prob: float = 0.0
    episodes: int = 15
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    buffer_capacity: int = 2048
    share: bool = True  # False skips the exchange step entirely
    quantized: bool = False
    state_bins: tuple = (14, 16, 32, 14, 14, 30, 30)
    action_bins: int = 14

    def validate(self):
        try:
            self.env.validate()
            self.planner.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.ensemble.n_members < 1 or self.ensemble.hidden < 1 or self.ensemble.batch_size < 1:
            raise ConfigError("ensemble sizes must be positive")
        if self.d < 0 or not math.isfinite(self.d):
            raise ConfigError("d must be a finite non-negative range")
        if not 0.0 <= self.blockage_prob <= 1.0:
            raise ConfigError("blockage_prob must be in [0, 1]")
        if self.episodes < 1:
            raise ConfigError("need at least one episode")
        if len(self.seeds) == 0:
            raise ConfigError("seeds list is empty")
        if len(self.state_bins) != STATE_DIM or self.action_bins < 1:
            raise ConfigError("bad quantizer bins")
        return self

    def to_text(self) -> str:
        return dumps_config(self)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return loads_config(text)

    def digest(self) -> str:
        """Hash of everything except the output location."""
        text = dataclasses.replace(self, out_dir="").to_text()
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_SECTIONS = ("env", "planner", "ensemble")


def _flatten(cfg: RunConfig):
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for g in dataclasses.fields(val):
                yield f"{f.name}.{g.name}", getattr(val, g.name)
        else:
            yield f"run.{f.name}", val


def dumps_config(cfg: RunConfig) -> str:
    """One `section.key = <json>` line per field."""
    lines = []
    for key, val in _flatten(cfg):
        if isinstance(val, tuple):
            val = list(val)
        lines.append(f"{key} = {json.dumps(val)}")
    return "\n".join(lines) + "\n"


def _coerce(old, new, key):
    if isinstance(old, bool):
        if not isinstance(new, bool):
            raise ConfigError(f"{key}: expected a boolean")
        return new
    if isinstance(old, tuple):
        if not isinstance(new, list):
            raise ConfigError(f"{key}: expected a list")
        return tuple(new)
    if isinstance(old, float):
        if isinstance(new, bool) or not isinstance(new, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(new)
    if isinstance(old, int):
        if isinstance(new, bool) or not isinstance(new, int):
            raise ConfigError(f"{key}: expected an integer")
        return new
    if isinstance(old, str) and not isinstance(new, str):
        raise ConfigError(f"{key}: expected a string")
    return new


def apply_overrides(cfg: RunConfig, items: dict) -> RunConfig:
    """Return a copy of cfg with dotted keys replaced. Unknown keys are errors."""
    sections = {s: dataclasses.replace(getattr(cfg, s)) for s in _SECTIONS}
    top = {}
    for key, val in items.items():
        sec, _, name = key.partition(".")
        if sec in _SECTIONS:
            target = sections[sec]
            if name not in {f.name for f in dataclasses.fields(target)}:
                raise ConfigError(f"unknown key {key!r}")
            setattr(target, name, _coerce(getattr(target, name), val, key))
        elif sec == "run" and name in {f.name for f in dataclasses.fields(cfg)} and name not in _SECTIONS:
            top[name] = _coerce(getattr(cfg, name), val, key)
        else:
            raise ConfigError(f"unknown key {key!r}")
    return dataclasses.replace(cfg, **sections, **top)


def loads_config(text: str, base: RunConfig | None = None) -> RunConfig:
    items = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        key = key.strip()
        if key in items:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        try:
            items[key] = json.loads(val.strip())
        except json.JSONDecodeError as e:
            raise ConfigError(f"line {n}: {e}") from e
    return apply_overrides(base or RunConfig(), items)


def load_config(path) -> RunConfig:
    return loads_config(Path(path).read_text())


def desk_profile(**run_kw) -> RunConfig:
    """Scaled-down settings that finish a K=15, I=8 run in minutes on one core."""
    cfg = RunConfig(
        planner=PlannerConfig(horizon=10, n_candidates=50, n_elites=5, n_particles=4, max_iters=3),
        ensemble=EnsembleConfig(n_members=3, hidden=64, epochs=5),
    )
    return apply_overrides(cfg, {f"run.{k}": v for k, v in run_kw.items()}) if run_kw else cfg


# --- seeding -------------------------------------------------------------

ROLES = {"env": 0, "explore": 1, "planner": 2, "ensemble": 3, "exchange": 4, "init": 5}


def stream(master: int, role: str, agent: int = 0, episode: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (master seed, role, agent, episode)."""
    ss = np.random.SeedSequence(master, spawn_key=(ROLES[role], agent, episode))
    return np.random.Generator(np.random.Philox(ss))


# --- metrics -------------------------------------------------------------


def collision_times(collided, n_steps: int) -> np.ndarray:
    """Per-agent t_c: step of the agent's first collision, else the steps played."""
    collided = np.asarray(collided, bool).reshape(n_steps, -1)
    hit = collided.any(axis=0)
    first = collided.argmax(axis=0) + 1
    return np.where(hit, first, n_steps)


def _mean(xs) -> float:
    # centred on the first value so a constant series averages to itself exactly
    xs = np.asarray(xs, float)
    return float(xs[0] + math.fsum(xs - xs[0]) / len(xs))


def agility(delta_x, t_c) -> float:
    """Mean over agents of the average per-step travel distance up to t_c."""
    delta_x = np.asarray(delta_x, float)
    t_c = np.asarray(t_c, int)
    if np.any(t_c < 1):
        raise ValueError("t_c must be >= 1")
    return _mean([_mean(delta_x[: t_c[i], i]) for i in range(delta_x.shape[1])])


def safety(t_c, horizon: int) -> float:
    return _mean(np.asarray(t_c, float) / horizon)


@dataclass
class MetricRow:
    seed: int
    episode: int
    agility: float
    safety: float
    overhead: int
    mean_reward: float
    blocked_links: int = 0

    def check(self, v_max_step: float):
        if not 0.0 <= self.safety <= 1.0:
            raise AssertionError(f"safety {self.safety} outside [0, 1]")
        if not 0.0 <= self.agility <= v_max_step + 1e-12:
            raise AssertionError(f"agility {self.agility} outside [0, {v_max_step}]")


# --- agents --------------------------------------------------------------


def default_quantizer(cfg: RunConfig) -> tuple[QuantizerSpec, QuantizerSpec]:
    e = cfg.env
    R = e.total_length / (4.0 * math.pi)
    state = QuantizerSpec(
        lows=(0.0, -R, -2 * R, 0.0, 0.0, 0.0, 0.0),
        highs=(e.v_max, R, 2 * R, e.v_max, e.v_max, e.sensor_range, e.sensor_range),
        bins=tuple(cfg.state_bins),
    )
    action = QuantizerSpec((cfg.planner.action_low,), (cfg.planner.action_high,), (cfg.action_bins,))
    return state, action


class PetsAgent:
    """One learner: replay buffer, probabilistic ensemble and MPC controller."""

    def __init__(self, agent_id: int, cfg: RunConfig, master_seed: int):
        self.id = agent_id
        self.cfg = cfg
        self.seed = master_seed
        self.buffer = ReplayDataset(cfg.buffer_capacity)
        self.model = ProbabilisticEnsemble(STATE_DIM, ACTION_DIM, dataclasses.replace(cfg.ensemble),
                                           rng=stream(master_seed, "init", agent_id))
        L = cfg.env.vehicle_length
        self.controller = MpcController(cfg.planner, lambda s, a: reward_from_state(s, L))
        self.planner_rng = None
        self.explore_rng = None
        self.planning = False

    def begin_episode(self, k: int):
        self.controller.reset()
        self.planner_rng = stream(self.seed, "planner", self.id, k)
        self.explore_rng = stream(self.seed, "explore", self.id, k)
        # keep exploring until the buffer can fill one training batch
        self.planning = k > 0 and len(self.buffer) >= self.model.cfg.batch_size
        if self.planning:
            self.model.train(self.buffer, stream(self.seed, "ensemble", self.id, k))

    def act(self, obs) -> float:
        if not self.planning:
            return float(self.explore_rng.uniform(self.cfg.planner.action_low, self.cfg.planner.action_high))
        return self.controller.act(self.model, obs, self.planner_rng)


@dataclass
class EpisodeLog:
    steps: list  # (t, agent, v, x, y, action, reward, collision)
    metric: MetricRow
    positions: np.ndarray
    payload_sizes: list


@dataclass
class RunResult:
    seed: int
    metrics: list
    trace_rows: list
    exchange_rows: list
    agents: list
    episodes: list

    def final(self) -> MetricRow:
        return self.metrics[-1]


def run_seed(cfg: RunConfig, seed: int, progress=None) -> RunResult:
    """All K episodes of MA-PETS for one master seed."""
    cfg.validate()
    env = Figure8Env(dataclasses.replace(cfg.env))
    I = cfg.env.n_agents
    agents = [PetsAgent(i, cfg, seed) for i in range(I)]
    qs, qa = default_quantizer(cfg) if cfg.quantized else (None, None)
    H = cfg.env.horizon
    metrics, trace_rows, exchange_rows, episodes = [], [], [], []

    for k in range(cfg.episodes):
        env.reset(stream(seed, "env", 0, k))
        for ag in agents:
            ag.begin_episode(k)
        obs = env.agent_obs()
        if qs is not None:
            obs = snap(qs, obs)
        payloads = [[] for _ in range(I)]
        dx, hits, rewards = [], [], []
        steps = []
        done = False
        while not done:
            acts = np.array([ag.act(obs[i]) for i, ag in enumerate(agents)])
            if qa is not None:
                acts = snap(qa, acts[:, None])[:, 0]
            out = env.step(acts)
            nxt = out.obs if qs is None else snap(qs, out.obs)
            gstep = k * H + out.t - 1
            for i in range(I):
                payloads[i].append(Transition(i, gstep, obs[i].copy(), float(acts[i]), nxt[i].copy()))
            true_obs = out.obs
            for i in range(I):
                steps.append((out.t, i, true_obs[i, 0], true_obs[i, 1], true_obs[i, 2], float(acts[i]),
                              float(out.rewards[i]), int(out.collided[i])))
            dx.append(out.delta_x)
            hits.append(out.collided)
            rewards.append(out.rewards)
            obs = nxt
            done = out.done

        n = len(dx)
        t_c = collision_times(np.array(hits), n)
        for i, ag in enumerate(agents):
            ag.buffer.extend(payloads[i])
        overhead = blocked = 0
        if cfg.share:
            graph = build_graph(env.positions(), cfg.d, k)
            _, report = exchange([ag.buffer for ag in agents], graph, payloads, cfg.blockage_prob,
                                 stream(seed, "exchange", 0, k))
            overhead, blocked = report.overhead, report.blocked_links
        row = MetricRow(seed, k, agility(np.array(dx), t_c), safety(t_c, H), overhead,
                        float(np.sum(rewards) / I), blocked)
        row.check(cfg.env.v_max * cfg.env.tau)
        metrics.append(row)
        trace_rows.extend((k,) + s for s in steps)
        exchange_rows.append((k, cfg.d, overhead, blocked))
        episodes.append(EpisodeLog(steps, row, env.positions(), [len(p) for p in payloads]))
        if progress is not None:
            progress(row)
    return RunResult(seed, metrics, trace_rows, exchange_rows, agents, episodes)


def run_mapets(cfg: RunConfig, write: bool = True, progress=None) -> list[RunResult]:
    cfg.validate()
    results = [run_seed(cfg, s, progress) for s in cfg.seeds]
    if write:
        write_run(cfg, results, Path(cfg.out_dir))
    return results


# --- artifacts -----------------------------------------------------------

TRACE_HEADER = ("episode", "step", "agent_id", "v", "x", "y", "action", "reward", "collision")
METRIC_HEADER = ("seed", "episode", "agility", "safety", "overhead", "mean_reward")
EXCHANGE_HEADER = ("episode", "d", "overhead", "blocked_links")
SWEEP_HEADER = ("axis_value", "seed", "episode", "agility", "safety", "overhead")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue())
    return path


def write_manifest(path, cfg: RunConfig, extra: dict | None = None):
    info = {
        "config_hash": cfg.digest(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    info.update(extra or {})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    (path.parent / "config.txt").write_text(cfg.to_text())
    return path


def write_run(cfg: RunConfig, results: list[RunResult], out: Path):
    for res in results:
        sub = out / f"seed{res.seed}"
        write_csv(sub / "trace.csv", TRACE_HEADER, res.trace_rows)
        write_csv(sub / "metrics.csv", METRIC_HEADER,
                  [(m.seed, m.episode, m.agility, m.safety, m.overhead, m.mean_reward) for m in res.metrics])
        write_csv(sub / "exchange.csv", EXCHANGE_HEADER, res.exchange_rows)
    write_manifest(out / "manifest.json", cfg, {"seeds": list(cfg.seeds)})


SWEEP_AXES = {
    "d": "run.d",
    "w": "planner.horizon",
    "B": "ensemble.n_members",
    "P": "planner.n_particles",
    "blockage": "run.blockage_prob",
}


def sweep(cfg: RunConfig, axis: str, values, out_path=None, progress=None) -> list[tuple]:
    """Run every value over all seeds; returns long-format rows."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for v in values:
        sub = apply_overrides(cfg, {SWEEP_AXES[axis]: v})
        sub.validate()
        for res in run_mapets(sub, write=False, progress=progress):
            rows.extend((v, m.seed, m.episode, m.agility, m.safety, m.overhead) for m in res.metrics)
    if out_path is not None:
        write_csv(out_path, SWEEP_HEADER, rows)
        write_manifest(Path(out_path).parent / "manifest.json", cfg, {"axis": axis, "values": values})
    return rows
