"""Experiment harness: observation-fraction sweeps, metrics, grid search and reports."""
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.stats import norm
from tqdm import tqdm

from .config import EngineConfig
from .exceptions import InputError, SamplingError
from .globals import (
    ADOPTED_THRESHOLDS,
    DEFAULT_FRACTIONS,
    DEFAULT_K_GRID,
    DEFAULT_MERGE_GRID,
    DEFAULT_PRUNE_GRID,
    GRID_COLUMNS,
    REPORT_COLUMNS,
)
from .recognizer import GoalRecognizer, RecognitionProblem
from .sampler import (
    GridMap,
    SampleRequest,
    all_pairs_problems,
    load_map,
    load_observations,
    load_trajectories,
    sample_k_trajectories,
)
from .trajtree import build_trajectory_tree
from .utils import apply_dimension_mask, time_func_run

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("csv", "json-lines", "text-table")
BAR_FORMAT = "{l_bar}{bar}| {n_fmt}/{total_fmt} [{elapsed}{postfix}]"


@dataclass
class ProblemSpec:
    """One recognition problem.

    Trajectories come from sampling `grid` (one sampler call per goal) or from the trajectory
    file `trajectories`. Observations come from the file `observations`, else from the first
    trajectory to the true goal.
    """

    name: str
    goals: Dict[str, NDArray]
    true_goal: str
    initial_state: NDArray
    grid: Optional[GridMap] = None
    trajectories: Optional[str] = None
    observations: Optional[str] = None

    def __post_init__(self):
        if self.true_goal not in self.goals:
            raise InputError(f"Problem '{self.name}': true goal '{self.true_goal}' is not a goal")
        if (self.grid is None) == (self.trajectories is None):
            raise InputError(f"Problem '{self.name}' needs exactly one of a map or trajectories")


@dataclass
class ExperimentSpec:
    problems: List[ProblemSpec]
    fractions: Sequence[float] = DEFAULT_FRACTIONS
    eps_merge: Sequence[float] = (0.0,)
    eps_prune: Sequence[float] = (0.0,)
    n_trajectories: Sequence[int] = (1,)
    depths: Sequence[int] = (2,)
    modes: Sequence[str] = ("plain",)
    engine: EngineConfig = field(default_factory=EngineConfig)
    seed: int = 0
    spread: float = 0.5
    observation_noise: float = 0.0
    observation_stride: int = 1
    n_workers: int = 1

    def __post_init__(self):
        if not self.problems:
            raise InputError("An experiment needs at least one problem")
        if any(not 0 < f <= 1 for f in self.fractions) or not self.fractions:
            raise InputError(f"Observation fractions must lie in (0, 1], got {self.fractions}")
        grids = [self.eps_merge, self.eps_prune, self.n_trajectories, self.depths, self.modes]
        if any(len(grid) == 0 for grid in grids):
            raise InputError("Grid lists must be nonempty")
        if self.observation_stride < 1 or self.observation_noise < 0:
            raise InputError("Observation stride must be >= 1 and noise nonnegative")

    def cells(self) -> List["GridCell"]:
        return [
            GridCell(*values)
            for values in product(
                self.eps_merge, self.eps_prune, self.n_trajectories, self.depths, self.modes
            )
        ]

    def use_default_grid(self):
        """Sweep merge and prune over 0..2 in steps of 0.2 and K over 1, 5, 10, 15."""
        self.eps_merge = list(DEFAULT_MERGE_GRID)
        self.eps_prune = list(DEFAULT_PRUNE_GRID)
        self.n_trajectories = list(DEFAULT_K_GRID)

    def use_adopted_thresholds(self):
        """Fix merge and prune to the thresholds adopted for the first mode."""
        thresholds = ADOPTED_THRESHOLDS[self.modes[0]]
        self.eps_merge = [thresholds["eps_merge"]]
        self.eps_prune = [thresholds["eps_prune"]]


@dataclass(frozen=True)
class GridCell:
    eps_merge: float
    eps_prune: float
    n_trajectories: int
    depth: int
    mode: str


@dataclass
class ProblemOutcome:
    problem: str
    fraction: float
    true_goal: str
    step_predictions: List[str]
    predicted_set: List[str]
    pc: int
    online_s: float
    offline_s: float
    violations: List[str] = field(default_factory=list)

    @property
    def final_prediction(self) -> Optional[str]:
        return self.step_predictions[-1] if self.step_predictions else None

    @property
    def correct(self) -> bool:
        return self.final_prediction == self.true_goal


@dataclass
class MetricsReport:
    table: pd.DataFrame
    violations: List[str] = field(default_factory=list)
    name: str = "experiment"

    def overall(self) -> Dict[str, Any]:
        return self.table[self.table["scope"] == "all"].iloc[0].to_dict()


def load_experiment_spec(fp: Union[str, Path]) -> ExperimentSpec:
    """Read a JSON experiment spec, file paths inside it being relative to the spec file."""
    fp = Path(fp)
    try:
        with open(fp, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as ex:
        raise InputError(f"Cannot read experiment spec '{fp}': {ex}") from ex

    raw = dict(raw)
    problems = []
    for idx, entry in enumerate(raw.pop("problems", [])):
        problems.extend(_parse_problem(entry, idx, fp.parent))
    engine = EngineConfig.from_dict(raw.pop("engine", {}))

    known = {f.name for f in fields(ExperimentSpec)} - {"problems", "engine"}
    unknown = set(raw) - known
    if unknown:
        raise InputError(f"Unknown keys {sorted(unknown)} in experiment spec '{fp}'")
    spec = ExperimentSpec(problems=problems, engine=engine, **raw)
    logger.info(f"Loaded experiment with {len(spec.problems)} problems from '{fp}'")
    return spec


def _parse_problem(entry: Dict[str, Any], idx: int, root: Path) -> List[ProblemSpec]:
    name = entry.get("name", f"problem_{idx}")
    grid = load_map(root / entry["map"]) if "map" in entry else None
    if "points" in entry:
        if grid is None:
            raise InputError(f"Problem '{name}': 'points' needs a 'map'")
        return [
            ProblemSpec(f"{name}_{start.tolist()}_{truth}", goals, truth, start, grid=grid)
            for start, goals, truth in all_pairs_problems(entry["points"])
        ]

    trajectories = str(root / entry["trajectories"]) if "trajectories" in entry else None
    observations = str(root / entry["observations"]) if "observations" in entry else None
    if "true_goal" not in entry:
        raise InputError(f"Problem '{name}' has no ground-truth goal")

    goals = entry.get("goals")
    initial_state = entry.get("initial_state")
    if trajectories is not None and (goals is None or initial_state is None):
        loaded = load_trajectories(trajectories)
        if not loaded:
            raise InputError(f"Problem '{name}': trajectory file '{trajectories}' is empty")
        if goals is None:
            goals = {}
            for points, goal in loaded:
                goals.setdefault(goal, points[-1].tolist())
        if initial_state is None:
            initial_state = loaded[0][0][0].tolist()
    if goals is None or initial_state is None:
        raise InputError(f"Problem '{name}' needs 'goals' and 'initial_state'")

    return [
        ProblemSpec(
            name,
            {str(g): np.asarray(s, dtype=np.float64) for g, s in goals.items()},
            str(entry["true_goal"]),
            np.asarray(initial_state, dtype=np.float64),
            grid=grid,
            trajectories=trajectories,
            observations=observations,
        )
    ]


def sample_problem(
    problem: ProblemSpec, k: int, spec: ExperimentSpec, index: int = 0
) -> Tuple[List[Tuple[NDArray, str]], float, int]:
    """Trajectories of one problem with the time spent and the number of sampler calls."""
    if problem.grid is None:
        elapsed, trajs = time_func_run(load_trajectories, problem.trajectories)
        return trajs, elapsed, 0

    trajs: List[Tuple[NDArray, str]] = []
    elapsed = 0.0
    for goal_idx, (goal, state) in enumerate(problem.goals.items()):
        request = SampleRequest(
            problem.grid,
            tuple(problem.initial_state),
            tuple(state),
            k=k,
            seed=spec.seed + 1000 * index + goal_idx,
            spread=spec.spread,
        )
        try:
            seconds, sampled = time_func_run(sample_k_trajectories, request)
        except SamplingError as ex:
            if ex.found == 0:
                raise
            logger.warning(f"Problem '{problem.name}': continuing with {ex.found} of {k} to {goal}")
            seconds, sampled = 0.0, ex.trajectories
        elapsed += seconds
        trajs.extend((points, goal) for points in sampled)
    return trajs, elapsed, len(problem.goals)


def observation_sequence(
    problem: ProblemSpec,
    trajs: Sequence[Tuple[NDArray, str]],
    spec: ExperimentSpec,
    index: int = 0,
) -> List[Tuple[int, NDArray]]:
    if problem.observations is not None:
        observations = load_observations(problem.observations)
    else:
        truth = next((points for points, goal in trajs if goal == problem.true_goal), None)
        if truth is None:
            raise InputError(f"Problem '{problem.name}' has no trajectory to its true goal")
        points = truth.copy()
        if spec.observation_noise > 0:
            rng = np.random.default_rng(spec.seed + index)
            points[1:-1] += spec.observation_noise * rng.standard_normal(points[1:-1].shape)
        observations = list(enumerate(points))
    if not observations:
        raise InputError(f"Problem '{problem.name}' has no observations")
    return observations[:: spec.observation_stride]


def run_problem(
    problem: ProblemSpec,
    cell: GridCell,
    spec: ExperimentSpec,
    trajs: Sequence[Tuple[NDArray, str]],
    sample_s: float,
    pc: int,
    index: int = 0,
) -> List[ProblemOutcome]:
    """Build the tree of one problem and recognise every observation fraction."""
    config = spec.engine.replace(depth=cell.depth, mode=cell.mode)
    masked = [(apply_dimension_mask(points, config.dimension_mask), g) for points, g in trajs]
    build_s, (tree, diagnostics) = time_func_run(
        build_trajectory_tree,
        masked,
        cell.depth,
        cell.eps_merge,
        cell.eps_prune,
        list(problem.goals),
    )
    recognition = RecognitionProblem(problem.goals, problem.initial_state, tree, config)
    recognizer = GoalRecognizer(recognition)
    observations = observation_sequence(problem, trajs, spec, index)

    outcomes = []
    for fraction in spec.fractions:
        n_obs = max(1, math.ceil(fraction * len(observations)))
        recognizer.reset()
        online_s, history = time_func_run(recognizer.run, observations[:n_obs])
        predicted = (
            history[-1].predicted(config.tie_tolerance) if history else list(problem.goals)
        )
        outcomes.append(
            ProblemOutcome(
                problem=problem.name,
                fraction=fraction,
                true_goal=problem.true_goal,
                step_predictions=[str(posterior.top()) for posterior in history],
                predicted_set=[str(g) for g in predicted],
                pc=pc,
                online_s=online_s,
                offline_s=sample_s + build_s,
                violations=list(diagnostics.violations),
            )
        )
    return outcomes


def _run_job(job) -> List[ProblemOutcome]:
    return run_problem(*job)


def _run_jobs(jobs: List[Tuple], n_workers: int, desc: str) -> List[List[ProblemOutcome]]:
    progress = dict(total=len(jobs), miniters=1, bar_format=BAR_FORMAT, desc=desc)
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as executor:
            return list(tqdm(executor.map(_run_job, jobs), **progress))
    return [_run_job(job) for job in tqdm(jobs, **progress)]


def run_experiment(spec: ExperimentSpec, cell: Optional[GridCell] = None) -> MetricsReport:
    """Run every problem and fraction for one grid cell (the first one by default)."""
    cell = cell or spec.cells()[0]
    jobs = []
    for index, problem in enumerate(spec.problems):
        trajs, sample_s, pc = sample_problem(problem, cell.n_trajectories, spec, index)
        jobs.append((problem, cell, spec, trajs, sample_s, pc, index))

    outcomes = [o for result in _run_jobs(jobs, spec.n_workers, "problems") for o in result]
    report = compute_metrics(outcomes)
    logger.info(f"Experiment finished: PPV {report.overall()['ppv']:.2f}% over {len(jobs)} problems")
    return report


def _mean_std_ci(values: Sequence[float]) -> Tuple[float, float, float]:
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std, float(norm.ppf(0.975) * std / np.sqrt(len(values)))


def compute_metrics(outcomes: Sequence[ProblemOutcome], name: str = "experiment") -> MetricsReport:
    """Reduce problem outcomes to PPV, ACC, SPR, PC and timings per fraction and overall.

    PPV counts one prediction, the argmax, per observation step of a problem, ACC the argmax after
    the last step, SPR the size of the predicted set after the last step. Means, standard
    deviations and 95% half-widths are over problems.

    PPV is the mean of the per-problem ratios TP / (TP + FP), not one ratio over the pooled steps,
    so a problem with few observation steps weighs as much as a long one.
    """
    if len(outcomes) == 0:
        raise InputError("No outcomes to compute metrics from")

    def row(scope: str, fraction: Optional[float], group: Sequence[ProblemOutcome]):
        ppv = [
            100.0 * np.mean([p == o.true_goal for p in o.step_predictions])
            if o.step_predictions
            else 0.0
            for o in group
        ]
        acc = [100.0 * o.correct for o in group]
        spr = [len(o.predicted_set) for o in group]
        ppv_mean, ppv_std, ppv_ci = _mean_std_ci(ppv)
        acc_mean, acc_std, acc_ci = _mean_std_ci(acc)
        spr_mean, spr_std, _ = _mean_std_ci(spr)
        pc_mean, pc_std, _ = _mean_std_ci([o.pc for o in group])
        online, online_std, _ = _mean_std_ci([o.online_s for o in group])
        offline, offline_std, _ = _mean_std_ci([o.offline_s for o in group])
        return [
            scope,
            fraction,
            ppv_mean,
            ppv_std,
            ppv_ci,
            acc_mean,
            acc_std,
            acc_ci,
            spr_mean,
            spr_std,
            pc_mean,
            pc_std,
            online,
            online_std,
            offline,
            offline_std,
            len(group),
        ]

    fractions = sorted({o.fraction for o in outcomes})
    rows = [row("fraction", f, [o for o in outcomes if o.fraction == f]) for f in fractions]
    rows.append(row("all", None, outcomes))

    violations = sorted({v for o in outcomes for v in o.violations})
    return MetricsReport(pd.DataFrame(rows, columns=REPORT_COLUMNS), violations, name)


def grid_search(spec: ExperimentSpec) -> pd.DataFrame:
    """Mean PPV of every (merge, prune, K, depth, mode) cell.

    Trajectories are sampled once per problem and K and shared by all cells with that K; PC still
    counts the sampler calls of every cell.
    """
    cache: Dict[Tuple[int, int], Tuple[List, float, int]] = {}
    cells = spec.cells()
    jobs = []
    for cell in cells:
        for index, problem in enumerate(spec.problems):
            key = (index, cell.n_trajectories)
            if key not in cache:
                cache[key] = sample_problem(problem, cell.n_trajectories, spec, index)
            jobs.append((problem, cell, spec, *cache[key], index))

    results = _run_jobs(jobs, spec.n_workers, "grid search")
    n_problems = len(spec.problems)
    rows = []
    for i, cell in enumerate(cells):
        outcomes = [o for result in results[i * n_problems : (i + 1) * n_problems] for o in result]
        report = compute_metrics(outcomes)
        rows.append(
            {
                **asdict(cell),
                "ppv": report.overall()["ppv"],
                "violations": ";".join(report.violations),
            }
        )

    table = pd.DataFrame(rows, columns=GRID_COLUMNS)
    best = best_cell(table)
    logger.info(f"Grid search best cell: {best}")
    return table


def best_cell(table: pd.DataFrame) -> Dict[str, Any]:
    """Highest-PPV cell, ties going to smaller prune, then smaller merge, then smaller K."""
    ordered = table.sort_values(
        ["ppv", "eps_prune", "eps_merge", "n_trajectories"],
        ascending=[False, True, True, True],
        kind="stable",
    )
    return ordered.iloc[0].to_dict()


def emit_report(
    report: MetricsReport, fmt: str = "csv", fp: Optional[Union[str, Path]] = None
) -> Optional[str]:
    """Serialise the report as csv, json-lines or a text table, to `fp` or returned as a string."""
    if fmt not in REPORT_FORMATS:
        raise InputError(f"Unknown report format '{fmt}', expected one of {REPORT_FORMATS}")
    table = report.table[REPORT_COLUMNS]
    if fmt == "csv":
        text = table.to_csv(index=False)
    elif fmt == "json-lines":
        text = table.to_json(orient="records", lines=True, double_precision=15)
    else:
        text = _text_table(report)

    if fp is None:
        return text
    try:
        with open(fp, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as ex:
        raise InputError(f"Cannot write report to '{fp}': {ex}") from ex
    logger.info(f"Report written to '{fp}'")
    return None


def load_report_json(fp: Union[str, Path], name: str = "experiment") -> MetricsReport:
    table = pd.read_json(fp, orient="records", lines=True)
    return MetricsReport(table[REPORT_COLUMNS], name=name)


def _text_table(report: MetricsReport) -> str:
    header = " " + "| ".join(
        [
            f"{'Map':<16}",
            f"{'Fraction':<10}",
            f"{'PPV':<18}",
            f"{'ACC':<18}",
            f"{'SPR':<14}",
            f"{'PC':<12}",
            f"{'Online (s)':<22}",
            f"{'Offline (s)':<22}",
        ]
    )
    lines = ["-" * len(header), header, "-" * len(header)]
    for rec in report.table.to_dict(orient="records"):
        fraction = "all" if rec["scope"] == "all" else f"{rec['fraction']:.3f}"
        lines.append(
            " "
            + "| ".join(
                [
                    f"{report.name:<16}",
                    f"{fraction:<10}",
                    f"{rec['ppv']:.1f} ± {rec['ppv_std']:.1f}".ljust(18),
                    f"{rec['acc']:.1f} ± {rec['acc_std']:.1f}".ljust(18),
                    f"{rec['spr']:.2f} ± {rec['spr_std']:.2f}".ljust(14),
                    f"{rec['pc']:.1f} ± {rec['pc_std']:.1f}".ljust(12),
                    f"{rec['online_s']:.2e} ± {rec['online_s_std']:.1e}".ljust(22),
                    f"{rec['offline_s']:.2e} ± {rec['offline_s_std']:.1e}".ljust(22),
                ]
            )
        )
    if report.violations:
        lines.append(f" Tree violations: {', '.join(report.violations)}")
    return "\n".join(lines) + "\n"
