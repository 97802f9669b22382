"""Comparison selectors and the moving-average bandwidth predictor.

Both selectors return ``(qualities, pieces)``: the chosen level per tile (``-1``
for skipped tiles) and the download order as ``(tile, level)`` pieces, where
piece ``(j, q)`` carries the size delta between levels ``q-1`` and ``q``.
"""

from __future__ import annotations

from collections import deque

import numpy as np


class BandwidthPredictor:
    def __init__(self, window: int = 100):
        if window < 1:
            raise ValueError("predictor window must be at least one slot")
        self.window = window
        self.history: deque[float] = deque(maxlen=window)

    def observe(self, rate_bps: float) -> None:
        self.history.append(float(rate_bps))

    def extend(self, rates) -> None:
        for r in rates:
            self.observe(r)

    def predict(self) -> float:
        if not self.history:
            return 0.0
        return float(np.mean(self.history))


def priority_order(fov_prob) -> list[int]:
    """Tiles by descending probability, lower index first on ties."""
    p = np.asarray(fov_prob, dtype=float)
    return sorted(range(len(p)), key=lambda j: (-p[j], j))


def qps_select(fov_prob, budget_bits, sizes) -> tuple[np.ndarray, list]:
    """Quality first: give each tile in turn the best level that still fits.

    ``sizes`` is ``(J, A)`` with cumulative sizes per level.
    """
    sizes = np.asarray(sizes)
    tiles, levels = sizes.shape
    left = budget_bits
    q = np.full(tiles, -1, dtype=np.int64)
    pieces = []
    for j in priority_order(fov_prob):
        fits = np.nonzero(sizes[j] <= left)[0]
        if len(fits) == 0:
            continue
        q[j] = fits[-1]
        left -= sizes[j, q[j]]
        pieces.extend((j, k) for k in range(q[j] + 1))
    return q, pieces


def fps_select(fov_prob, budget_bits, sizes, p_th: float = 0.01) -> tuple[np.ndarray, list]:
    """FoV first: base level for every likely tile, then one level up per round.

    A tile whose next delta does not fit is passed over and the round carries
    on with the remaining tiles.
    """
    sizes = np.asarray(sizes)
    tiles, levels = sizes.shape
    deltas = np.diff(sizes, axis=1, prepend=0)
    eligible = [j for j in priority_order(fov_prob) if fov_prob[j] >= p_th]
    left = budget_bits
    q = np.full(tiles, -1, dtype=np.int64)
    pieces = []
    for level in range(levels):
        progressed = False
        for j in eligible:
            if q[j] != level - 1:
                continue
            if deltas[j, level] <= left:
                left -= deltas[j, level]
                q[j] = level
                pieces.append((j, level))
                progressed = True
        if not progressed:
            break
    return q, pieces
