"""Clique covers of communication graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class TooLarge(ValueError):
    pass


def _adjacency(graph) -> np.ndarray:
    if hasattr(graph, "adjacency"):
        return graph.adjacency()
    adj = np.asarray(graph, dtype=bool)
    return adj | adj.T


@dataclass
class CliqueCover:
    cliques: list  # list of sorted tuples of node ids

    @property
    def size(self) -> int:
        return len(self.cliques)

    def sizes(self) -> list[int]:
        return [len(c) for c in self.cliques]

    def is_valid(self, graph) -> bool:
        adj = _adjacency(graph)
        n = adj.shape[0]
        seen = [v for c in self.cliques for v in c]
        if sorted(seen) != list(range(n)):
            return False
        return all(adj[a, b] for c in self.cliques for a in c for b in c if a != b)


def greedy_clique_cover(graph) -> CliqueCover:
    """Grow cliques from the highest-degree uncovered node; ties go to the lowest id."""
    adj = _adjacency(graph)
    n = adj.shape[0]
    uncovered = set(range(n))
    cliques = []
    while uncovered:
        deg = {v: sum(adj[v, u] for u in uncovered if u != v) for v in uncovered}
        seed = min(uncovered, key=lambda v: (-deg[v], v))
        clique = [seed]
        cand = sorted((u for u in uncovered if u != seed and adj[seed, u]), key=lambda v: (-deg[v], v))
        for u in cand:
            if all(adj[u, c] for c in clique):
                clique.append(u)
        uncovered.difference_update(clique)
        cliques.append(tuple(sorted(clique)))
    return CliqueCover(cliques)


def exact_clique_cover(graph, max_nodes: int = 12) -> CliqueCover:
    """Minimum clique cover by backtracking colouring of the complement graph."""
    adj = _adjacency(graph)
    n = adj.shape[0]
    if n > max_nodes:
        raise TooLarge(f"exact cover limited to {max_nodes} nodes, got {n}")
    if n == 0:
        return CliqueCover([])
    comp = ~adj
    np.fill_diagonal(comp, False)
    upper = greedy_clique_cover(adj)
    best = [upper.cliques]
    order = sorted(range(n), key=lambda v: -comp[v].sum())

    def solve(k: int):
        colour = [-1] * n

        def place(pos: int, used: int) -> bool:
            if pos == n:
                return True
            v = order[pos]
            for c in range(min(used + 1, k)):
                if all(colour[u] != c for u in range(n) if comp[v, u]):
                    colour[v] = c
                    if place(pos + 1, max(used, c + 1)):
                        return True
                    colour[v] = -1
            return False

        if place(0, 0):
            return [tuple(sorted(v for v in range(n) if colour[v] == c)) for c in range(max(colour) + 1)]
        return None

    for k in range(1, upper.size):
        found = solve(k)
        if found is not None:
            return CliqueCover(found)
    return CliqueCover(best[0])


def clique_relation_check(cover: CliqueCover, n_agents: int):
    """(sum_C sqrt|C|, sqrt(cover size * I)); the first never exceeds the second."""
    if sum(cover.sizes()) != n_agents:
        raise ValueError("cover does not partition the agents")
    lhs = math.fsum(math.sqrt(s) for s in cover.sizes())
    rhs = math.sqrt(cover.size * n_agents)
    if lhs > rhs * (1 + 1e-12):
        raise AssertionError(f"clique relation violated: {lhs} > {rhs}")
    return lhs, rhs
