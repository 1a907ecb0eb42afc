"""Online goal recognition over a trajectory tree.

Every observation extends the streaming observation signature, each tree branch is scored with
`1 - exp(-1 / squared distance)` and the per-goal scores become a normalised posterior.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import interp1d

from .config import EngineConfig
from .dtw import dtw_fast, first_occurrence_map, save_cost_matrix
from .exceptions import DimensionMismatchError, EpisodeTerminated, InputError
from .globals import DEFAULT_DTW_RADIUS
from .signature import SignatureStream, as_state
from .trajtree import Branch, GoalId, TrajectoryTree, branches
from .utils import apply_dimension_mask

logger = logging.getLogger(__name__)


def likelihood(squared_distance: ArrayLike) -> NDArray:
    """`1 - exp(-1/x)`, defined as 1 at distance 0.

    >>> likelihood([0.0, 1.0]).tolist()
    [1.0, 0.6321205588285577]
    """
    squared_distance = np.asarray(squared_distance, dtype=np.float64)
    with np.errstate(divide="ignore"):
        scores = -np.expm1(-1.0 / squared_distance)
    return np.where(squared_distance == 0, 1.0, scores)


@dataclass
class RecognitionProblem:
    """Goals (id to full state), shared initial state, tree and engine config.

    The tree is built on states after the config's dimension mask, goals and observations are
    given unmasked.
    """

    goals: Dict[GoalId, NDArray]
    initial_state: NDArray
    tree: TrajectoryTree
    config: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self):
        if len(self.goals) == 0:
            raise InputError("A recognition problem needs at least one goal")
        self.initial_state = as_state(self.initial_state)
        self.goals = {
            goal: as_state(state, len(self.initial_state)) for goal, state in self.goals.items()
        }
        unknown = set(self.tree.goal_ids) - set(self.goals)
        if unknown:
            raise InputError(f"Tree holds goals {sorted(map(str, unknown))} outside the problem")
        if self.tree.depth != self.config.depth:
            raise DimensionMismatchError(
                f"Tree depth {self.tree.depth} differs from configured depth {self.config.depth}"
            )
        masked = apply_dimension_mask(self.initial_state, self.config.dimension_mask)
        if len(masked) != self.tree.dimension:
            raise DimensionMismatchError(
                f"Tree dimension {self.tree.dimension} differs from the masked state "
                f"dimension {len(masked)}"
            )

    @property
    def goal_ids(self) -> List[GoalId]:
        return list(self.goals)


@dataclass
class GoalPosterior:
    goals: Tuple[GoalId, ...]
    probabilities: NDArray
    normalized: bool = True
    degenerate: bool = False
    timestep: Optional[int] = None

    def __getitem__(self, goal: GoalId) -> float:
        return float(self.probabilities[self.goals.index(goal)])

    def as_dict(self) -> Dict[GoalId, float]:
        return dict(zip(self.goals, self.probabilities.tolist()))

    def top(self) -> GoalId:
        """Most probable goal, ties going to the lowest goal index."""
        return self.goals[int(np.argmax(self.probabilities))]

    def predicted(self, tie_tolerance: float = 0.0) -> List[GoalId]:
        """Goals within `tie_tolerance` of the top probability."""
        best = self.probabilities.max()
        return [g for g, p in zip(self.goals, self.probabilities) if p >= best - tie_tolerance]

    def ranking(self) -> List[GoalId]:
        order = np.argsort(-self.probabilities, kind="stable")
        return [self.goals[i] for i in order]


class ObservationLog:
    """Received observations, their gap-free densification and its prefix signatures.

    `filled[t]` is the (masked) state at timestep t, `prefix_sigs[t]` the signature of
    `filled[0..t]`.
    """

    def __init__(self, dimension: int, depth: int):
        self.received: List[Tuple[int, NDArray]] = []
        self.filled: List[NDArray] = []
        self.stream = SignatureStream(dimension, depth)
        self.prefix_sigs: List[NDArray] = []
        self.last_t: Optional[int] = None

    def __len__(self) -> int:
        return len(self.filled)

    def __repr__(self):
        return f"ObservationLog(received={len(self.received)}, filled={len(self.filled)})"

    @property
    def current(self) -> NDArray:
        return self.prefix_sigs[-1]

    def extend(self, t: int, state: NDArray, received: bool = True):
        """Add the state at timestep t, interpolating the timesteps missed since the last one."""
        if t < 0:
            raise InputError(f"Timesteps must be nonnegative, got {t}")
        if self.last_t is not None and t <= self.last_t:
            raise InputError(f"Timestep {t} does not follow the last timestep {self.last_t}")

        if self.last_t is not None and t > self.last_t + 1:
            dense = interpolate_missing([(self.last_t, self.filled[-1]), (t, state)], self.last_t, t)
            for _, point in dense[1:-1]:
                self._push(point)
        elif self.last_t is None and t > 0:
            raise InputError(f"The first state must be at timestep 0, got {t}")

        self._push(state)
        if received:
            self.received.append((t, state))
        self.last_t = t

    def _push(self, point: NDArray):
        self.stream.extend(point)
        self.filled.append(point)
        self.prefix_sigs.append(self.stream.terms)


def interpolate_missing(
    received: Sequence[Tuple[int, ArrayLike]], last_t: int, t: int, kind: str = "linear"
) -> List[Tuple[int, NDArray]]:
    """Fill every integer timestep between the received ones.

    Args:
        received: (timestep, state) pairs in increasing timestep order, ending at `t`.
        last_t: Timestep of the last observation before `t`.
        t: Timestep of the newest observation.
        kind: Interpolation kind passed to `scipy.interpolate.interp1d`.

    Returns:
        (timestep, state) for every timestep from the first received one to `t`, received states
        unchanged.
    """
    times = np.array([ts for ts, _ in received], dtype=np.int64)
    points = np.stack([np.asarray(p, dtype=np.float64) for _, p in received])
    if times[-1] != t or last_t not in times:
        raise InputError(f"Received timesteps {times.tolist()} must include {last_t} and end at {t}")
    if np.any(np.diff(times) <= 0):
        raise InputError(f"Received timesteps {times.tolist()} are not increasing")
    if len(times) == 1:
        return [(int(times[0]), points[0])]

    grid = np.arange(times[0], times[-1] + 1)
    dense = interp1d(times, points, axis=0, kind=kind)(grid)
    dense[times - times[0]] = points
    return [(int(ts), point) for ts, point in zip(grid, dense)]


def score_branch_plain(obs: ObservationLog, branch: Branch) -> float:
    """Score the current observation signature against the branch node at the same timestep.

    The node used is the deepest one whose original timestep is at most the current one, so a
    branch that pruning shortened or that ended earlier is clamped to its last node.
    """
    idx = int(np.searchsorted(branch.timesteps, obs.last_t, side="right")) - 1
    diff = branch.nodes[idx] - obs.current
    return float(likelihood(diff @ diff))


def score_branch_dtw(
    obs: ObservationLog,
    branch: Branch,
    radius: int = DEFAULT_DTW_RADIUS,
    reduction: str = "mean",
) -> float:
    """Score all prefix signatures against the branch after aligning them.

    Only the first pair of every observation index on the warping path counts. The squared
    distances are summed and, for the "mean" reduction, divided by the number of observations.
    """
    prefix = np.stack(obs.prefix_sigs)
    path = dtw_fast(prefix, branch.nodes, radius)
    first = first_occurrence_map(path)
    rows = np.fromiter(first.keys(), dtype=np.int64) - 1
    cols = np.fromiter(first.values(), dtype=np.int64) - 1
    distance = float(np.sum((prefix[rows] - branch.nodes[cols]) ** 2))
    if reduction == "mean":
        distance /= len(prefix)
    return float(likelihood(distance))


def aggregate(
    scores: Iterable[Tuple[GoalId, float]],
    mode: str = "max",
    goals: Optional[Sequence[GoalId]] = None,
) -> Dict[GoalId, float]:
    """Reduce branch scores to one unnormalised score per goal.

    Every goal starts at 0. "max" keeps the best branch, "incremental_mean" keeps the running
    mean `P += (p - P) / (n + 1)`.

    >>> aggregate([("a", 0.9), ("a", 0.1), ("b", 0.4)], mode="incremental_mean")
    {'a': 0.5, 'b': 0.4}
    """
    result: Dict[GoalId, float] = {g: 0.0 for g in goals or []}
    counts: Dict[GoalId, int] = {g: 0 for g in result}
    for goal, score in scores:
        current = result.setdefault(goal, 0.0)
        if mode == "max":
            result[goal] = max(current, float(score))
        elif mode == "incremental_mean":
            count = counts.get(goal, 0)
            result[goal] = current + (float(score) - current) / (count + 1)
            counts[goal] = count + 1
        else:
            raise InputError(f"Unknown aggregation mode '{mode}'")
    return result


def normalize(
    raw: Mapping[GoalId, float], priors: Optional[Mapping[GoalId, float]] = None
) -> GoalPosterior:
    """Multiply by the priors and normalise. All-zero evidence gives a uniform, degenerate posterior."""
    goals = tuple(raw)
    scores = np.array([raw[g] for g in goals], dtype=np.float64)
    if np.any(scores < 0):
        raise InputError(f"Goal scores must be nonnegative, got {dict(raw)}")
    if priors is None:
        weights = np.full(len(goals), 1.0 / len(goals))
    else:
        weights = np.array([priors[g] for g in goals], dtype=np.float64)

    weighted = scores * weights
    total = weighted.sum()
    if total <= 0:
        logger.warning("All goal scores are zero, falling back to a uniform posterior")
        return GoalPosterior(goals, np.full(len(goals), 1.0 / len(goals)), degenerate=True)
    return GoalPosterior(goals, weighted / total)


class BranchTable:
    """Branch node values padded into one array for vectorised plain scoring."""

    def __init__(self, branch_list: Sequence[Branch]):
        n_branches = len(branch_list)
        n_nodes = max(len(b) for b in branch_list)
        n_terms = branch_list[0].nodes.shape[1]

        self.values = np.zeros((n_branches, n_nodes, n_terms))
        self.timesteps = np.full((n_branches, n_nodes), np.iinfo(np.int64).max, dtype=np.int64)
        for i, branch in enumerate(branch_list):
            self.values[i, : len(branch)] = branch.nodes
            self.timesteps[i, : len(branch)] = branch.timesteps
        self._rows = np.arange(n_branches)

    def nodes_at(self, t: int) -> NDArray:
        """Deepest node of every branch with timestep <= t."""
        idx = (self.timesteps <= t).sum(axis=1) - 1
        return self.values[self._rows, idx]

    def score(self, current: NDArray, t: int) -> NDArray:
        diff = self.nodes_at(t) - current
        return likelihood(np.einsum("ij,ij->i", diff, diff))


class GoalRecognizer:
    """Single-stream recognition engine, one per observed agent."""

    def __init__(self, problem: RecognitionProblem):
        self.problem = problem
        self.config = problem.config
        self.goal_ids = problem.goal_ids
        self.branches = branches(problem.tree)
        if not self.branches:
            raise InputError("The trajectory tree has no branches")
        self.branch_goals = [b.goal for b in self.branches]
        self.table = BranchTable(self.branches)
        self.priors = dict(zip(self.goal_ids, self.config.prior_vector(self.goal_ids)))
        self.goal_states = np.stack([problem.goals[g] for g in self.goal_ids])
        self.reset()

    def __repr__(self):
        return (
            f"GoalRecognizer(goals={len(self.goal_ids)}, branches={len(self.branches)}, "
            f"mode={self.config.mode})"
        )

    def reset(self):
        self.log = ObservationLog(self.problem.tree.dimension, self.config.depth)
        self.history: List[GoalPosterior] = []

    def observe(self, t: int, o: ArrayLike) -> GoalPosterior:
        """Consume the observation `o` at timestep `t` and return the updated posterior.

        Raises:
            InputError: `t` does not increase, or `o` is malformed.
            EpisodeTerminated: `o` is a goal state; the observation is not consumed.
        """
        o = as_state(o, len(self.problem.initial_state))
        if self.log.last_t is not None and t <= self.log.last_t:
            raise InputError(f"Timestep {t} does not follow the last timestep {self.log.last_t}")

        reached = np.abs(self.goal_states - o).max(axis=1) <= self.config.goal_tolerance
        if reached.any():
            goal = self.goal_ids[int(np.argmax(reached))]
            last = self.history[-1] if self.history else None
            raise EpisodeTerminated(t, goal, last)

        mask = self.config.dimension_mask
        if self.log.last_t is None and t > 0:
            self.log.extend(0, apply_dimension_mask(self.problem.initial_state, mask), False)
        self.log.extend(t, apply_dimension_mask(o, mask))

        scores = self.score_branches()
        raw = aggregate(zip(self.branch_goals, scores), self.config.aggregation, self.goal_ids)
        posterior = normalize(raw, self.priors)
        posterior.timestep = t
        self.history.append(posterior)
        logger.debug(f"t={t}: top goal {posterior.top()!r} with p={posterior.probabilities.max()}")
        return posterior

    def score_branches(self) -> NDArray:
        if self.config.mode == "plain":
            return self.table.score(self.log.current, self.log.last_t)
        return np.array(
            [
                score_branch_dtw(self.log, b, self.config.dtw_radius, self.config.dtw_reduction)
                for b in self.branches
            ]
        )

    def dump_cost_matrices(self, directory: Union[str, Path]):
        """Write the prefix-signature against branch-node cost matrix of every branch as CSV."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        prefix = np.stack(self.log.prefix_sigs)
        for i, branch in enumerate(self.branches):
            save_cost_matrix(prefix, branch.nodes, directory / f"branch_{i:03d}_{branch.goal}.csv")

    def run(self, observations: Iterable[Tuple[int, ArrayLike]]) -> List[GoalPosterior]:
        """Observe until the stream ends or reaches a goal, returning the posterior history."""
        for t, o in observations:
            try:
                self.observe(t, o)
            except EpisodeTerminated as ex:
                logger.info(f"Episode terminated: {ex}")
                break
        return self.history
