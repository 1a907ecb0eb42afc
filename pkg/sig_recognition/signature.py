"""Truncated path signatures of piecewise-linear trajectories.

Terms are stored flat, level-major, each level in lexicographic multi-index order:

    [1, S^1 .. S^d, S^11, S^12, .., S^dd, S^111, ..]

so a depth-k signature of a d-dimensional path has `signature_length(d, k)` terms.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DimensionMismatchError, InputError

logger = logging.getLogger(__name__)


def signature_length(d: int, k: int) -> int:
    """Number of terms in a depth `k` signature of a `d` dimensional path.

    >>> signature_length(2, 2)
    7
    >>> signature_length(1, 3)
    4
    """
    if d < 1 or k < 1:
        raise InputError(f"Signature dimension and depth must be positive, got {d = }, {k = }")
    return sum(d**i for i in range(k + 1))


@lru_cache(maxsize=None)
def level_offsets(d: int, k: int) -> Tuple[int, ...]:
    """Start offset of every level, plus the total length as the last entry."""
    offsets = [0]
    for level in range(k + 1):
        offsets.append(offsets[-1] + d**level)
    return tuple(offsets)


@dataclass(frozen=True, eq=False)
class PathSignature:
    dimension: int
    depth: int
    terms: NDArray

    def __post_init__(self):
        expected = signature_length(self.dimension, self.depth)
        if self.terms.shape != (expected,):
            raise DimensionMismatchError(
                f"Expected {expected} terms for d={self.dimension}, k={self.depth}, "
                f"got shape {self.terms.shape}"
            )

    def __len__(self) -> int:
        return len(self.terms)

    def __array__(self, dtype=None, copy=None):
        del copy
        return self.terms if dtype is None else self.terms.astype(dtype)

    @classmethod
    def trivial(cls, dimension: int, depth: int) -> "PathSignature":
        return cls(dimension, depth, _trivial_terms(dimension, depth))

    def level(self, m: int) -> NDArray:
        offsets = level_offsets(self.dimension, self.depth)
        return self.terms[offsets[m] : offsets[m + 1]]

    def levels(self) -> List[NDArray]:
        return [self.level(m) for m in range(self.depth + 1)]

    def to_array(self) -> NDArray:
        """Flat layout `[d, k, terms...]`."""
        return np.concatenate([[self.dimension, self.depth], self.terms]).astype(np.float64)

    @classmethod
    def from_array(cls, array: ArrayLike) -> "PathSignature":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 1 or len(array) < 3:
            raise InputError("A serialised signature needs a (d, k) header and terms")
        dimension, depth = int(array[0]), int(array[1])
        return cls(dimension, depth, array[2:].copy())


def validate_trajectory(points: ArrayLike) -> NDArray:
    """Return `points` as a finite (n, d) float array with n >= 1, d >= 1."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionMismatchError(
            f"Expected a trajectory of shape (n, d), got an array with {points.ndim} dims"
        )
    if points.shape[0] < 1 or points.shape[1] < 1:
        raise InputError(f"Trajectory must hold at least one state of dimension >= 1, got {points.shape}")
    if not np.isfinite(points).all():
        raise InputError("Trajectory contains non-finite values")
    return points


def as_state(state: ArrayLike, dimension: Optional[int] = None) -> NDArray:
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise DimensionMismatchError(f"Expected a state vector, got shape {state.shape}")
    if dimension is not None and len(state) != dimension:
        raise DimensionMismatchError(f"Expected a state of dimension {dimension}, got {len(state)}")
    if not np.isfinite(state).all():
        raise InputError("State contains non-finite values")
    return state


def squared_distance(a: ArrayLike, b: ArrayLike) -> float:
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(diff @ diff)


def segment_signature(delta: ArrayLike, k: int) -> PathSignature:
    """Signature of a single linear segment with increment `delta`.

    Level m holds the m-fold tensor power of `delta` divided by m!.

    >>> segment_signature([2.0], 3).terms.tolist()
    [1.0, 2.0, 2.0, 1.3333333333333333]
    """
    delta = as_state(delta)
    if k < 1:
        raise InputError(f"Signature depth must be positive, got {k = }")
    return PathSignature(len(delta), k, _segment_terms(delta, k))


def concat(a: PathSignature, b: PathSignature) -> PathSignature:
    """Signature of the path `a` followed by the path `b` (Chen's identity)."""
    if a.dimension != b.dimension or a.depth != b.depth:
        raise DimensionMismatchError(
            f"Cannot concatenate signatures with (d, k) = {(a.dimension, a.depth)} "
            f"and {(b.dimension, b.depth)}"
        )
    return PathSignature(a.dimension, a.depth, _concat_terms(a.terms, b.terms, a.dimension, a.depth))


def batch_signature(traj: ArrayLike, k: int) -> PathSignature:
    """Signature of the piecewise-linear interpolation of `traj`.

    >>> x = 5.0 + np.arange(1, 11)
    >>> batch_signature(np.stack([x, x**2], axis=1), 2).terms.tolist()
    [1.0, 9.0, 189.0, 40.5, 970.5, 730.5, 17860.5]
    """
    return prefix_signatures(traj, k)[-1]


def prefix_signatures(traj: ArrayLike, k: int) -> List[PathSignature]:
    """Signatures of every prefix of `traj`, the first one being the trivial signature."""
    points = validate_trajectory(traj)
    if k < 1:
        raise InputError(f"Signature depth must be positive, got {k = }")
    d = points.shape[1]

    terms = _trivial_terms(d, k)
    result = [PathSignature(d, k, terms)]
    for delta in np.diff(points, axis=0):
        terms = _concat_terms(terms, _segment_terms(delta, k), d, k)
        result.append(PathSignature(d, k, terms))
    return result


class SignatureStream:
    """Signature of a trajectory that grows one point at a time.

    After consuming p_1..p_t the current terms equal `batch_signature([p_1..p_t])`.
    Single writer: one stream per observed agent.
    """

    def __init__(self, dimension: int, depth: int):
        signature_length(dimension, depth)
        self.dimension = dimension
        self.depth = depth
        self.terms = _trivial_terms(dimension, depth)
        self.last_point: Optional[NDArray] = None
        self.count = 0

    def __repr__(self):
        return f"SignatureStream(d={self.dimension}, k={self.depth}, count={self.count})"

    @property
    def signature(self) -> PathSignature:
        return PathSignature(self.dimension, self.depth, self.terms.copy())

    def extend(self, point: ArrayLike) -> "SignatureStream":
        point = as_state(point, self.dimension)
        if self.last_point is not None:
            segment = _segment_terms(point - self.last_point, self.depth)
            self.terms = _concat_terms(self.terms, segment, self.dimension, self.depth)
        self.last_point = point
        self.count += 1
        return self


def stream_extend(stream: SignatureStream, point: ArrayLike) -> SignatureStream:
    return stream.extend(point)


def _trivial_terms(d: int, k: int) -> NDArray:
    terms = np.zeros(signature_length(d, k))
    terms[0] = 1.0
    return terms


def _segment_terms(delta: NDArray, k: int) -> NDArray:
    level = np.ones(1)
    blocks = [level]
    for m in range(1, k + 1):
        level = np.multiply.outer(level, delta).ravel() / m
        blocks.append(level)
    return np.concatenate(blocks)


def _concat_terms(a: NDArray, b: NDArray, d: int, k: int) -> NDArray:
    offsets = level_offsets(d, k)
    out = np.empty_like(a)
    out[0] = a[0] * b[0]
    for m in range(1, k + 1):
        acc = np.zeros(d**m)
        for j in range(m + 1):
            left = a[offsets[j] : offsets[j + 1]]
            right = b[offsets[m - j] : offsets[m - j + 1]]
            acc += np.multiply.outer(left, right).ravel()
        out[offsets[m] : offsets[m + 1]] = acc
    return out
