"""Minimum-cost bipartite assignment (Hungarian algorithm)."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import NonFiniteCost


class Assignment(NamedTuple):
    pairs: list[tuple[int, int]]
    total_cost: float


def hungarian(cost) -> Assignment:
    """Solve the assignment problem for an ``n x m`` matrix of non-negative costs.

    Returns ``min(n, m)`` ``(row, col)`` pairs sorted by row, plus their total
    cost. Rectangular inputs are padded to square with a cost larger than
    any feasible total of real entries; padded pairs are dropped.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"cost must be a non-empty 2D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteCost("cost matrix contains NaN or infinite entries")
    if (a < 0).any():
        raise ValueError("costs must be non-negative")
    n, m = a.shape
    k = max(n, m)
    if n != m:
        sentinel = float(a.max()) * k + 1.0
        square = np.full((k, k), sentinel)
        square[:n, :m] = a
    else:
        square = a
    cols = _kernels.hungarian_square(square)
    pairs = [(r, int(cols[r])) for r in range(n) if cols[r] < m]
    total = 0.0
    for r, c in pairs:
        total += float(a[r, c])
    return Assignment(pairs, total)
