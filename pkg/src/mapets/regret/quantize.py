"""Uniform grid quantization of continuous boxes into flat indices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantizerSpec:
    lows: tuple
    highs: tuple
    bins: tuple

    def __post_init__(self):
        if not len(self.lows) == len(self.highs) == len(self.bins):
            raise ValueError("lows, highs and bins must have equal length")
        if any(b < 1 for b in self.bins):
            raise ValueError("every dimension needs at least one bin")
        if any(h <= l for l, h in zip(self.lows, self.highs)):
            raise ValueError("each range must have high > low")

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.bins))


def bin_indices(spec: QuantizerSpec, points) -> np.ndarray:
    """Per-dimension bin of each point; out-of-range values are clamped, the upper edge is inclusive."""
    pts = np.asarray(points, dtype=float)
    lo, hi, n = np.asarray(spec.lows), np.asarray(spec.highs), np.asarray(spec.bins)
    frac = (np.clip(pts, lo, hi) - lo) / (hi - lo)
    return np.minimum((frac * n).astype(int), n - 1)


def uniform_quantize(spec: QuantizerSpec, point):
    """Row-major flat index of the cell containing point (vectorized over leading axes)."""
    idx = bin_indices(spec, point)
    flat = np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), spec.bins)
    return int(flat) if np.ndim(flat) == 0 else flat


def dequantize(spec: QuantizerSpec, index):
    """Cell centre for a flat index."""
    multi = np.stack(np.unravel_index(np.asarray(index), spec.bins), axis=-1)
    lo, hi, n = np.asarray(spec.lows), np.asarray(spec.highs), np.asarray(spec.bins)
    return lo + (multi + 0.5) * (hi - lo) / n


def snap(spec: QuantizerSpec, points):
    """Replace points by the centre of their cell."""
    idx = bin_indices(spec, points)
    lo, hi, n = np.asarray(spec.lows), np.asarray(spec.highs), np.asarray(spec.bins)
    return lo + (idx + 0.5) * (hi - lo) / n
