"""Range-limited end-of-episode experience exchange."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ReplayDataset


@dataclass
class CommGraph:
    n_nodes: int
    edges: frozenset  # of (i, j) with i < j
    k: int = 0
    d: float = 0.0

    def neighbors(self, i: int) -> list[int]:
        return sorted({b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i})

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    @classmethod
    def from_adjacency(cls, adj, k=0, d=0.0) -> "CommGraph":
        adj = np.asarray(adj, dtype=bool)
        n = adj.shape[0]
        edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n) if adj[i, j] or adj[j, i])
        return cls(n, edges, k, d)


@dataclass
class ExchangeReport:
    received: np.ndarray  # new transitions accepted per agent
    overhead: int  # transitions delivered over all directed links
    blocked_links: int
    delivered: list = field(default_factory=list)  # (src, dst, n) per delivery


def build_graph(positions, d: float, k: int = 0) -> CommGraph:
    if d < 0:
        raise ValueError("communication range must be non-negative")
    pos = np.asarray(positions, float)
    n = len(pos)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    iu, ju = np.triu_indices(n, 1)
    # d = 0 means no radio at all, even for vehicles that overlap
    keep = (dist[iu, ju] <= d) & (d > 0)
    return CommGraph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())), k, d)


def exchange(buffers: list[ReplayDataset], graph: CommGraph, payloads: list, blockage_prob: float = 0.0,
             rng: np.random.Generator | None = None):
    """Deliver each agent's latest-episode payload to its graph neighbours.

    All payloads are snapshot before any delivery. Each directed delivery is
    dropped independently with probability blockage_prob. Buffers are
    updated in place and also returned.
    """
    if not 0.0 <= blockage_prob <= 1.0:
        raise ValueError("blockage_prob must be in [0, 1]")
    if blockage_prob > 0.0 and rng is None:
        raise ValueError("rng required when blockage_prob > 0")
    snapshot = [tuple(p) for p in payloads]
    received = np.zeros(len(buffers), dtype=int)
    overhead = 0
    blocked = 0
    delivered = []
    for i, j in sorted(graph.edges):
        for src, dst in ((j, i), (i, j)):
            if blockage_prob > 0.0 and rng.random() < blockage_prob:
                blocked += 1
                continue
            payload = snapshot[src]
            overhead += len(payload)
            received[dst] += buffers[dst].extend(payload)
            delivered.append((src, dst, len(payload)))
    return buffers, ExchangeReport(received, overhead, blocked, delivered)


def graph_overhead(positions, payload_sizes, d: float) -> int:
    """Transitions that a blockage-free exchange at range d would move."""
    g = build_graph(positions, d)
    sizes = np.asarray(payload_sizes)
    return int(sum(sizes[i] + sizes[j] for i, j in g.edges))


def overhead_curve(run_traces, d_values) -> dict:
    """Mean per-episode overhead for each range, replayed on fixed trajectories.

    run_traces is an iterable of episodes, each a (positions, payload_sizes)
    pair captured at the episode's final step.
    """
    episodes = list(run_traces)
    if not episodes:
        raise ValueError("no episodes")
    return {d: float(np.mean([graph_overhead(pos, sizes, d) for pos, sizes in episodes])) for d in d_values}
