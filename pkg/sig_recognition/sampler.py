"""Grid-world trajectory sampling and trajectory / observation files.

Maps use the Moving-AI grid text format. Cell (col, row) is centred at the continuous point
(x, y) = (col, row); `.`, `G` and `S` cells are traversable, anything else is blocked.
"""
import heapq
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .exceptions import DimensionMismatchError, InputError, SamplingError, UnreachableGoalError
from .signature import validate_trajectory

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]

TRAVERSABLE = frozenset(".GS")
MAP_HEADER_KEYS = ("type", "height", "width", "map")
MOVES = [(dc, dr) for dc in (-1, 0, 1) for dr in (-1, 0, 1) if (dc, dr) != (0, 0)]
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class GridMap:
    traversable: NDArray
    name: str = ""

    def __repr__(self):
        return f"GridMap(name={self.name!r}, width={self.width}, height={self.height})"

    @property
    def width(self) -> int:
        return self.traversable.shape[1]

    @property
    def height(self) -> int:
        return self.traversable.shape[0]

    @classmethod
    def from_rows(cls, rows: Sequence[str], name: str = "") -> "GridMap":
        """
        >>> GridMap.from_rows(["..@", "..."]).is_free((2, 0))
        False
        """
        if len(rows) == 0 or len({len(row) for row in rows}) != 1:
            raise InputError("Map rows must be nonempty and of equal width")
        traversable = np.array([[c in TRAVERSABLE for c in row] for row in rows], dtype=bool)
        return cls(traversable, name)

    def is_free(self, cell: Cell) -> bool:
        col, row = cell
        return 0 <= col < self.width and 0 <= row < self.height and bool(self.traversable[row, col])

    def cell_of(self, point: ArrayLike) -> Cell:
        point = np.asarray(point, dtype=np.float64)
        if point.shape != (2,):
            raise DimensionMismatchError(f"Grid points are (x, y), got shape {point.shape}")
        return int(np.floor(point[0] + 0.5)), int(np.floor(point[1] + 0.5))

    def free_cells(self) -> List[Cell]:
        rows, cols = np.nonzero(self.traversable)
        return list(zip(cols.tolist(), rows.tolist()))


@dataclass(frozen=True)
class GridPath:
    cells: List[Cell]
    cost: float


@dataclass(frozen=True)
class SampleRequest:
    """Sample `k` trajectories from `start` to `goal`.

    Detours cost at most `(1 + spread)` times the shortest grid path and are given up after
    `max_attempts` (default 50 per requested trajectory) waypoint draws.
    """

    grid: GridMap
    start: Tuple[float, float]
    goal: Tuple[float, float]
    k: int = 1
    seed: int = 0
    spread: float = 0.5
    step: float = 1.0
    max_attempts: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise InputError(f"At least one trajectory must be requested, got k={self.k}")
        if self.spread < 0 or self.step <= 0:
            raise InputError("Sampling spread must be nonnegative and the step positive")


def load_map(fp: Union[str, Path]) -> GridMap:
    """Read a Moving-AI grid map file."""
    with open(fp, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\r\n") for line in f]

    header = {}
    for lineno, line in enumerate(lines[:4], start=1):
        tokens = line.split()
        if not tokens or tokens[0] != MAP_HEADER_KEYS[lineno - 1]:
            raise InputError(f"{fp}: line {lineno}: expected '{MAP_HEADER_KEYS[lineno - 1]}'")
        header[tokens[0]] = tokens[1:]
    if len(header) != 4:
        raise InputError(f"{fp}: truncated map header")

    try:
        height, width = int(header["height"][0]), int(header["width"][0])
    except (IndexError, ValueError) as ex:
        raise InputError(f"{fp}: malformed height or width") from ex
    rows = lines[4 : 4 + height]
    if len(rows) != height:
        raise InputError(f"{fp}: expected {height} map rows, found {len(rows)}")
    for lineno, row in enumerate(rows, start=5):
        if len(row) != width:
            raise InputError(f"{fp}: line {lineno}: expected {width} cells, found {len(row)}")

    grid = GridMap.from_rows(rows, name=Path(fp).stem)
    logger.debug(f"Loaded {grid!r}")
    return grid


def octile_distance(a: Cell, b: Cell) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1) * min(dx, dy)


def shortest_grid_path(grid: GridMap, start: Cell, goal: Cell) -> Optional[GridPath]:
    """8-connected A* without corner cutting, None when `goal` cannot be reached."""
    if not grid.is_free(start) or not grid.is_free(goal):
        return None

    counter = 0
    frontier = [(octile_distance(start, goal), counter, start)]
    cost = {start: 0.0}
    came_from: Dict[Cell, Optional[Cell]] = {start: None}
    closed = set()
    while frontier:
        _, _, cell = heapq.heappop(frontier)
        if cell == goal:
            break
        if cell in closed:
            continue
        closed.add(cell)
        for dc, dr in MOVES:
            nxt = (cell[0] + dc, cell[1] + dr)
            if not grid.is_free(nxt):
                continue
            if dc and dr and not (
                grid.is_free((cell[0] + dc, cell[1])) and grid.is_free((cell[0], cell[1] + dr))
            ):
                continue
            new_cost = cost[cell] + (SQRT2 if dc and dr else 1.0)
            if new_cost < cost.get(nxt, math.inf):
                cost[nxt] = new_cost
                came_from[nxt] = cell
                counter += 1
                heapq.heappush(frontier, (new_cost + octile_distance(nxt, goal), counter, nxt))

    if goal not in came_from:
        return None
    cells = [goal]
    while cells[-1] != start:
        cells.append(came_from[cells[-1]])
    cells.reverse()
    return GridPath(cells, cost[goal])


def line_of_sight(grid: GridMap, a: ArrayLike, b: ArrayLike, resolution: float = 0.1) -> bool:
    """Whether the segment a-b only touches traversable cells, corners included."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n_samples = int(np.ceil(np.linalg.norm(b - a) / resolution)) + 1
    margin = 1e-9
    for point in np.linspace(a, b, n_samples):
        cols = {int(np.floor(point[0] + 0.5 - margin)), int(np.floor(point[0] + 0.5 + margin))}
        rows = {int(np.floor(point[1] + 0.5 - margin)), int(np.floor(point[1] + 0.5 + margin))}
        if not all(grid.is_free((c, r)) for c in cols for r in rows):
            return False
    return True


def smooth_path(grid: GridMap, cells: Sequence[Cell]) -> NDArray:
    """Greedy string pulling: keep only the waypoints needed to stay in line of sight."""
    points = np.array(cells, dtype=np.float64)
    waypoints = [0]
    while waypoints[-1] < len(points) - 1:
        anchor = waypoints[-1]
        nxt = anchor + 1
        for candidate in range(len(points) - 1, anchor + 1, -1):
            if line_of_sight(grid, points[anchor], points[candidate]):
                nxt = candidate
                break
        waypoints.append(nxt)
    return points[waypoints]


def resample_polyline(waypoints: ArrayLike, step: float = 1.0) -> NDArray:
    """Points every `step` of arc length along the polyline, ending exactly at its last point.

    >>> resample_polyline([[0.0, 0.0], [2.5, 0.0]]).tolist()
    [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.5, 0.0]]
    """
    waypoints = np.asarray(waypoints, dtype=np.float64)
    moved = np.concatenate([[True], np.any(np.diff(waypoints, axis=0) != 0, axis=1)])
    waypoints = waypoints[moved]
    lengths = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(waypoints, axis=0), axis=1))])
    total = lengths[-1]
    if total == 0:
        return waypoints[:1].copy()
    stations = np.arange(0.0, total, step)
    points = np.stack([np.interp(stations, lengths, waypoints[:, i]) for i in range(2)], axis=1)
    return np.concatenate([points, waypoints[-1:]], axis=0)


def sample_k_trajectories(req: SampleRequest) -> List[NDArray]:
    """Shortest smoothed path first, then random-waypoint detours of bounded extra cost.

    Raises:
        UnreachableGoalError: `start` or `goal` is blocked, or not connected.
        SamplingError: fewer than `k` distinct trajectories within the attempt budget.
    """
    grid = req.grid
    start_cell, goal_cell = grid.cell_of(req.start), grid.cell_of(req.goal)
    optimal = shortest_grid_path(grid, start_cell, goal_cell)
    if optimal is None:
        raise UnreachableGoalError(f"No path from {req.start} to {req.goal} on {grid!r}")

    start, goal = np.asarray(req.start, dtype=np.float64), np.asarray(req.goal, dtype=np.float64)
    trajs = [_legs_to_trajectory(grid, [optimal], start, goal, req.step)]

    rng = np.random.default_rng(req.seed)
    free_cells = grid.free_cells()
    budget = 50 * req.k if req.max_attempts is None else req.max_attempts
    max_cost = (1 + req.spread) * optimal.cost + 1e-9
    attempts = 0
    while len(trajs) < req.k and attempts < budget:
        attempts += 1
        waypoint = free_cells[int(rng.integers(len(free_cells)))]
        first = shortest_grid_path(grid, start_cell, waypoint)
        second = shortest_grid_path(grid, waypoint, goal_cell)
        if first is None or second is None or first.cost + second.cost > max_cost:
            continue
        traj = _legs_to_trajectory(grid, [first, second], start, goal, req.step)
        if any(_same_trajectory(traj, other) for other in trajs):
            continue
        trajs.append(traj)

    if len(trajs) < req.k:
        logger.warning(
            f"Found {len(trajs)} of {req.k} distinct trajectories to {req.goal} "
            f"after {attempts} attempts"
        )
        raise SamplingError(
            f"Only {len(trajs)} of {req.k} distinct trajectories found",
            found=len(trajs),
            trajectories=trajs,
        )
    logger.debug(f"Sampled {len(trajs)} trajectories to {req.goal} in {attempts} attempts")
    return trajs


def _legs_to_trajectory(
    grid: GridMap, legs: Sequence[GridPath], start: NDArray, goal: NDArray, step: float
) -> NDArray:
    pieces = []
    for idx, leg in enumerate(legs):
        waypoints = smooth_path(grid, leg.cells)
        if idx == 0:
            waypoints[0] = start
        if idx == len(legs) - 1:
            waypoints[-1] = goal
        piece = resample_polyline(waypoints, step)
        pieces.append(piece if idx == 0 else piece[1:])
    return np.concatenate(pieces, axis=0)


def _same_trajectory(a: NDArray, b: NDArray) -> bool:
    return a.shape == b.shape and np.allclose(a, b)


def all_pairs_problems(
    points: Sequence[ArrayLike],
) -> List[Tuple[NDArray, Dict[str, NDArray], str]]:
    """Every ordered pair (i, j) of points as a problem starting at i with true goal j.

    The goal hypotheses are all points but the start, named `g<index>`.
    """
    points = [np.asarray(p, dtype=np.float64) for p in points]
    problems = []
    for i, start in enumerate(points):
        goals = {f"g{j}": p for j, p in enumerate(points) if j != i}
        for j in range(len(points)):
            if j != i:
                problems.append((start, goals, f"g{j}"))
    return problems


def save_trajectories(trajs: Sequence[Tuple[ArrayLike, str]], fp: Union[str, Path]):
    """Write trajectories in the text format read by `load_trajectories`."""
    if len(trajs) == 0:
        raise InputError("Nothing to save")
    arrays = [(validate_trajectory(points), str(goal)) for points, goal in trajs]
    dimension = arrays[0][0].shape[1]
    with open(fp, "w", encoding="utf-8") as f:
        f.write(f"d {dimension} count {len(arrays)}\n")
        for points, goal in arrays:
            if points.shape[1] != dimension:
                raise DimensionMismatchError(
                    f"Cannot save trajectories of dimensions {dimension} and {points.shape[1]}"
                )
            f.write(f"trajectory {goal}\n")
            for point in points:
                f.write(" ".join(repr(float(v)) for v in point) + "\n")
    logger.info(f"Saved {len(arrays)} trajectories to '{fp}'")


def load_trajectories(fp: Union[str, Path]) -> List[Tuple[NDArray, str]]:
    """Read a trajectory file: `d <d> count <n>`, then `trajectory <goal>` blocks of point rows.

    Blank lines and lines starting with `#` are skipped.
    """
    with open(fp, "r", encoding="utf-8") as f:
        lines = [
            (lineno, line.split())
            for lineno, line in enumerate(f, start=1)
            if line.strip() and not line.lstrip().startswith("#")
        ]
    if not lines:
        logger.warning(f"Trajectory file '{fp}' is empty")
        return []

    lineno, tokens = lines[0]
    if len(tokens) != 4 or tokens[0] != "d" or tokens[2] != "count":
        raise InputError(f"{fp}: line {lineno}: expected header 'd <d> count <n>'")
    try:
        dimension, count = int(tokens[1]), int(tokens[3])
    except ValueError as ex:
        raise InputError(f"{fp}: line {lineno}: malformed header") from ex

    trajs: List[Tuple[List[List[float]], str]] = []
    for lineno, tokens in lines[1:]:
        if tokens[0] == "trajectory":
            if len(tokens) != 2:
                raise InputError(f"{fp}: line {lineno}: expected 'trajectory <goal>'")
            trajs.append(([], tokens[1]))
            continue
        if not trajs:
            raise InputError(f"{fp}: line {lineno}: point row before any 'trajectory' line")
        if len(tokens) != dimension:
            raise DimensionMismatchError(
                f"{fp}: line {lineno}: expected {dimension} values, found {len(tokens)}"
            )
        try:
            trajs[-1][0].append([float(v) for v in tokens])
        except ValueError as ex:
            raise InputError(f"{fp}: line {lineno}: non-numeric value") from ex

    if len(trajs) != count:
        raise InputError(f"{fp}: header declares {count} trajectories, found {len(trajs)}")
    result = []
    for points, goal in trajs:
        if not points:
            raise InputError(f"{fp}: trajectory to '{goal}' has no points")
        result.append((validate_trajectory(points), goal))
    logger.debug(f"Loaded {len(result)} trajectories from '{fp}'")
    return result


def load_observations(fp: Union[str, Path]) -> List[Tuple[int, NDArray]]:
    """Read an observation CSV with a `t` column followed by one column per state dimension."""
    try:
        df = pd.read_csv(fp)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as ex:
        raise InputError(f"Cannot read observations from '{fp}': {ex}") from ex

    if "t" not in df.columns or len(df.columns) < 2:
        raise InputError(f"Observation file '{fp}' needs a 't' column and state columns")
    if df.empty:
        raise InputError(f"Observation file '{fp}' holds no observations")
    states = df.drop(columns="t")
    try:
        values = states.to_numpy(dtype=np.float64)
    except ValueError as ex:
        raise InputError(f"Observation file '{fp}' holds non-numeric states") from ex
    return [(int(t), row) for t, row in zip(df["t"], values)]
