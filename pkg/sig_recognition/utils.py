import time
from typing import Any, Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DimensionMismatchError, InputError


def generate_random_trajectory(
    n_points: int,
    dimension: int = 2,
    start: Optional[ArrayLike] = None,
    step_scale: float = 1.0,
    seed: Optional[int] = None,
) -> NDArray:
    """Generate a random walk of `n_points` states with Gaussian increments"""
    if n_points < 1:
        raise InputError(f"A trajectory needs at least one point, got {n_points = }")
    rng = np.random.default_rng(seed)
    start = np.zeros(dimension) if start is None else np.asarray(start, dtype=np.float64)
    steps = step_scale * rng.standard_normal((n_points - 1, dimension))
    return start + np.concatenate([np.zeros((1, dimension)), np.cumsum(steps, axis=0)], axis=0)


def linear_trajectory(start: ArrayLike, end: ArrayLike, n_points: int) -> NDArray:
    """Evenly spaced states from `start` to `end`, both included.

    >>> linear_trajectory([0, 0], [2, 4], 3).tolist()
    [[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]]
    """
    start, end = np.asarray(start, dtype=np.float64), np.asarray(end, dtype=np.float64)
    if n_points < 2:
        raise InputError(f"A line needs at least two points, got {n_points = }")
    return np.linspace(start, end, n_points)


def apply_dimension_mask(points: ArrayLike, mask: Optional[Sequence[bool]] = None) -> NDArray:
    """Keep the state dimensions selected by `mask`, on one state or on a whole trajectory.

    >>> apply_dimension_mask([[1.0, 2.0, 0.5]], [True, True, False]).tolist()
    [[1.0, 2.0]]
    """
    points = np.asarray(points, dtype=np.float64)
    if mask is None:
        return points
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (points.shape[-1],):
        raise DimensionMismatchError(
            f"Dimension mask of length {len(mask)} does not fit states of dimension "
            f"{points.shape[-1]}"
        )
    return points[..., mask]


def time_func_run(func: Callable, *args, **kwargs) -> Tuple[float, Any]:
    tic = time.perf_counter()
    result = func(*args, **kwargs)
    toc = time.perf_counter()
    return toc - tic, result
