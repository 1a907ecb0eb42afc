"""Dynamic time warping over sequences of vectors, exact and coarsen-project-refine.

Warping path indices are 1-based, arrays inside this module are 0-based.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist

from .exceptions import DimensionMismatchError, InputError
from .globals import DEFAULT_DTW_RADIUS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WarpingPath:
    pairs: List[Tuple[int, int]]
    total_cost: float

    def __len__(self) -> int:
        return len(self.pairs)

    def indices(self) -> Tuple[NDArray, NDArray]:
        """0-based row and column index arrays of the path."""
        pairs = np.array(self.pairs, dtype=np.int64) - 1
        return pairs[:, 0], pairs[:, 1]


def cost_matrix(a: ArrayLike, b: ArrayLike) -> NDArray:
    """Pairwise squared Euclidean costs, shape (len(a), len(b))."""
    a, b = _as_sequences(a, b)
    return cdist(a, b, "sqeuclidean")


def dtw_exact(a: ArrayLike, b: ArrayLike) -> WarpingPath:
    """Minimum-cost warping path between `a` and `b`.

    Backtracking prefers the diagonal step, then a step in `b`, then a step in `a`.

    >>> path = dtw_exact([[0.0], [1.0], [2.0]], [[0.0], [1.0], [2.0], [2.0]])
    >>> path.pairs, path.total_cost
    ([(1, 1), (2, 2), (3, 3), (3, 4)], 0.0)
    """
    a, b = _as_sequences(a, b)
    lo, hi = _full_window(len(a), len(b))
    return _windowed_dtw(a, b, lo, hi)


def dtw_fast(a: ArrayLike, b: ArrayLike, radius: int = DEFAULT_DTW_RADIUS) -> WarpingPath:
    """Approximate warping path by recursive coarsening, projection and windowed refinement.

    Sequences shorter than `radius + 2` are aligned exactly, so a radius at least as long as both
    sequences gives the exact result.
    """
    a, b = _as_sequences(a, b)
    if radius < 0:
        raise InputError(f"DTW radius must be nonnegative, got {radius}")
    return _fast_dtw(a, b, int(radius))


def first_occurrence_map(path: WarpingPath) -> Dict[int, int]:
    """For every index i of the first sequence, the smallest j it is paired with.

    >>> first_occurrence_map(WarpingPath([(1, 1), (1, 2), (2, 3)], 0.0))
    {1: 1, 2: 3}
    """
    result: Dict[int, int] = {}
    for i, j in path.pairs:
        result.setdefault(i, j)
    return result


def is_valid_warping_path(pairs: Sequence[Tuple[int, int]], n: int, m: int) -> bool:
    """Boundary, monotonicity and unit-step check on 1-based pairs."""
    if len(pairs) == 0 or tuple(pairs[0]) != (1, 1) or tuple(pairs[-1]) != (n, m):
        return False
    steps = np.diff(np.asarray(pairs, dtype=np.int64), axis=0)
    return bool(np.all((steps >= 0) & (steps <= 1)) and np.all(steps.sum(axis=1) >= 1))


def save_cost_matrix(a: ArrayLike, b: ArrayLike, fp: Union[str, Path]):
    """Write the pairwise cost matrix as CSV, rows and columns labelled 1-based."""
    costs = cost_matrix(a, b)
    df = pd.DataFrame(
        costs,
        index=pd.RangeIndex(1, costs.shape[0] + 1, name="i"),
        columns=range(1, costs.shape[1] + 1),
    )
    df.to_csv(fp)
    logger.debug(f"Wrote {costs.shape} cost matrix to '{fp}'")


def _as_sequences(a: ArrayLike, b: ArrayLike) -> Tuple[NDArray, NDArray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if len(a) == 0 or len(b) == 0:
        raise InputError("DTW needs two nonempty sequences")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(
            f"DTW sequences differ in vector dimension: {a.shape[1]} and {b.shape[1]}"
        )
    return a, b


def _full_window(n: int, m: int) -> Tuple[NDArray, NDArray]:
    return np.zeros(n, dtype=np.int64), np.full(n, m - 1, dtype=np.int64)


def _windowed_dtw(a: NDArray, b: NDArray, lo: NDArray, hi: NDArray) -> WarpingPath:
    """DTW restricted to columns lo[i]..hi[i] (inclusive) of each row i."""
    n, m = len(a), len(b)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        start, stop = int(lo[i - 1]), int(hi[i - 1])
        row_cost = cdist(a[i - 1 : i], b[start : stop + 1], "sqeuclidean")[0]
        prev, row = acc[i - 1], acc[i]
        for offset, j in enumerate(range(start + 1, stop + 2)):
            row[j] = row_cost[offset] + min(prev[j - 1], prev[j], row[j - 1])

    pairs = [(n, m)]
    i, j = n, m
    while (i, j) != (1, 1):
        # tie order: diagonal, step in b, step in a
        candidates = ((i - 1, j - 1), (i, j - 1), (i - 1, j))
        i, j = min(candidates, key=lambda ij: acc[ij])
        pairs.append((i, j))
    pairs.reverse()
    return WarpingPath(pairs, float(acc[n, m]))


def _fast_dtw(a: NDArray, b: NDArray, radius: int) -> WarpingPath:
    min_size = radius + 2
    if len(a) < min_size or len(b) < min_size:
        lo, hi = _full_window(len(a), len(b))
        return _windowed_dtw(a, b, lo, hi)

    coarse = _fast_dtw(_coarsen(a), _coarsen(b), radius)
    lo, hi = _expand_window(coarse, len(a), len(b), radius)
    logger.debug(f"DTW window of {int(np.sum(hi - lo + 1))} cells for {len(a)}x{len(b)}")
    return _windowed_dtw(a, b, lo, hi)


def _coarsen(x: NDArray) -> NDArray:
    """Halve the resolution by averaging adjacent pairs, an odd tail is kept as is."""
    n_pairs = len(x) // 2
    coarse = x[: 2 * n_pairs].reshape(n_pairs, 2, -1).mean(axis=1)
    if len(x) % 2:
        coarse = np.concatenate([coarse, x[-1:]], axis=0)
    return coarse


def _expand_window(coarse: WarpingPath, n: int, m: int, radius: int) -> Tuple[NDArray, NDArray]:
    rows, cols = coarse.indices()
    n_coarse, m_coarse = int(rows.max()) + 1, int(cols.max()) + 1

    coarse_lo = np.full(n_coarse, m_coarse, dtype=np.int64)
    coarse_hi = np.full(n_coarse, -1, dtype=np.int64)
    for i, j in zip(rows, cols):
        r_start, r_stop = max(i - radius, 0), min(i + radius, n_coarse - 1)
        coarse_lo[r_start : r_stop + 1] = np.minimum(coarse_lo[r_start : r_stop + 1], j - radius)
        coarse_hi[r_start : r_stop + 1] = np.maximum(coarse_hi[r_start : r_stop + 1], j + radius)
    coarse_lo = np.clip(coarse_lo, 0, m_coarse - 1)
    coarse_hi = np.clip(coarse_hi, 0, m_coarse - 1)

    parent = np.arange(n) // 2
    lo = np.minimum(2 * coarse_lo[parent], m - 1)
    hi = np.minimum(2 * coarse_hi[parent] + 1, m - 1)
    return lo, hi
