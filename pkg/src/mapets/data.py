from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    agent_id: int
    global_step: int
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray

    @property
    def key(self) -> tuple[int, int]:
        return (self.agent_id, self.global_step)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.s)) and np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.s_next)))


class ReplayDataset:
    """FIFO buffer of transitions keyed by (agent_id, global_step)."""

    def __init__(self, capacity: int = 2048):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: OrderedDict[tuple[int, int], Transition] = OrderedDict()

    def __len__(self):
        return len(self._items)

    @property
    def size(self) -> int:
        return len(self._items)

    def __contains__(self, key) -> bool:
        return key in self._items

    def __iter__(self):
        return iter(self._items.values())

    def keys(self):
        return list(self._items.keys())

    def add(self, tr: Transition) -> bool:
        """Insert unless the key is already present. Returns True if inserted."""
        if not tr.is_finite():
            raise ValueError(f"non-finite transition {tr.key}")
        if tr.key in self._items:
            return False
        self._items[tr.key] = tr
        while len(self._items) > self.capacity:
            self._items.popitem(last=False)
        return True

    def extend(self, transitions) -> int:
        return sum(self.add(tr) for tr in transitions)

    def arrays(self):
        """Stacked (s, a, s_next) arrays in insertion order."""
        if not self._items:
            raise ValueError("empty dataset")
        items = list(self._items.values())
        s = np.stack([t.s for t in items])
        a = np.stack([np.atleast_1d(t.a) for t in items])
        s_next = np.stack([t.s_next for t in items])
        return s, a, s_next

    def copy(self) -> "ReplayDataset":
        out = ReplayDataset(self.capacity)
        out._items = OrderedDict(self._items)
        return out
