from .bounds import PreconditionViolated, sequence_ratio_bound
from .cliques import CliqueCover, TooLarge, clique_relation_check, exact_clique_cover, greedy_clique_cover
from .mdp import (NotCommunicating, TabularMdp, diameter, finite_horizon_values, horizon_gaps,
                  optimal_average_reward, riverswim, solve_average_reward)
from .quantize import QuantizerSpec, dequantize, snap, uniform_quantize
from .ucrl import (DomainError, RegretTrace, VisitCounters, complete_graph, confidence_radius, empty_graph, evi,
                   extended_value_iteration, loglog_slope, ma_ucrl2_run, optimistic_kernel)
