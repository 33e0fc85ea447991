"""Multi-agent PETS for connected vehicles, plus a tabular regret lab."""
from .comms import CommGraph, ExchangeReport, build_graph, exchange, graph_overhead, overhead_curve
from .data import ReplayDataset, Transition
from .ensemble import EnsembleConfig, GaussianPrediction, ProbabilisticEnsemble, gaussian_nll
from .env import EnvConfig, Figure8Env, TrackGeometry, arclength_to_xy, reward_from_state
from .planner import CemDistribution, MpcController, PlannerConfig, cem_plan, mpc_act
from .harness import ConfigError, MetricRow, RunConfig, agility, run_mapets, safety, sweep

__version__ = "0.1.0"
