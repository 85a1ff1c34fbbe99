"""Dynamic time warping over arbitrary sequences.

Classic full DTW with steps {down, right, diagonal}; ties prefer the
diagonal so paths are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass
class AlignmentPath:
    """Monotone index pairs from (0, 0) to (len_a - 1, len_b - 1)."""

    pairs: list[tuple[int, int]]
    cost: float

    def __len__(self) -> int:
        return len(self.pairs)

    def map_a_to_b(self, len_a: int) -> np.ndarray:
        """For each index of sequence a, the last b index aligned to it."""
        out = np.zeros(len_a, dtype=np.int64)
        for i, j in self.pairs:
            if i < len_a:
                out[i] = j
        return out


def dtw_align(a: Sequence, b: Sequence,
              local_cost: Callable[[object, object], float] | None = None) -> AlignmentPath:
    """Globally minimal monotone alignment of two sequences.

    `local_cost` defaults to Euclidean distance (absolute difference for
    scalars). Step ties break in the order diagonal, up, left.
    """
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("dtw_align requires non-empty sequences")

    if local_cost is None:
        av = np.atleast_2d(np.asarray(a, dtype=np.float64))
        bv = np.atleast_2d(np.asarray(b, dtype=np.float64))
        if av.shape[0] == 1 and n > 1:
            av = av.T
        if bv.shape[0] == 1 and m > 1:
            bv = bv.T
        av = av.reshape(n, -1)
        bv = bv.reshape(m, -1)
        diff = av[:, None, :] - bv[None, :, :]
        cost = np.sqrt(np.sum(diff * diff, axis=2))
    else:
        cost = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                cost[i, j] = local_cost(a[i], b[j])

    acc = np.full((n, m), np.inf)
    # step code taken to reach each cell: 0 diagonal, 1 up (i-1), 2 left (j-1)
    step = np.zeros((n, m), dtype=np.int8)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        step[0, j] = 2
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        step[i, 0] = 1
        row_prev = acc[i - 1]
        row = acc[i]
        for j in range(1, m):
            diag, up, left = row_prev[j - 1], row_prev[j], row[j - 1]
            best = diag
            code = 0
            if up < best:
                best, code = up, 1
            if left < best:
                best, code = left, 2
            row[j] = best + cost[i, j]
            step[i, j] = code

    pairs = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        code = step[i, j]
        if code == 0:
            i, j = i - 1, j - 1
        elif code == 1:
            i -= 1
        else:
            j -= 1
        pairs.append((i, j))
    pairs.reverse()
    return AlignmentPath(pairs, float(acc[n - 1, m - 1]))
