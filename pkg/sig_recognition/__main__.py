import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .bench import REPORT_FORMATS, best_cell, emit_report, grid_search, load_experiment_spec
from .bench import run_experiment
from .config import EngineConfig, engine_keys, load_config, resolve_mode
from .exceptions import InputError, SigRecognitionError, ValidationViolation
from .globals import EXIT_INPUT_ERROR, EXIT_OK, EXIT_VALIDATION_VIOLATION
from .log import setup_logging
from .recognizer import GoalRecognizer, RecognitionProblem
from .sampler import SampleRequest, load_map, load_observations, load_trajectories
from .sampler import sample_k_trajectories, save_trajectories
from .trajtree import build_trajectory_tree, goal_states_from_tree, load_tree, save_tree
from .utils import apply_dimension_mask

logger = logging.getLogger(__name__)

FLAG_KEYS = (
    "depth",
    "mode",
    "aggregation",
    "dtw_radius",
    "dimension_mask",
    "eps_merge",
    "eps_prune",
    "n_trajectories",
    "seed",
    "spread",
    "output_format",
)


def parse_cli_input(argv: Optional[List[str]] = None):
    parser = argparse.ArgumentParser("sig-recognition", add_help=True)
    parser.add_argument("--log-level", default="INFO", help="root log level, e.g. DEBUG")
    subparsers = parser.add_subparsers(dest="command", required=True)

    build = subparsers.add_parser("build-tree", help="build a trajectory tree file")
    source = build.add_mutually_exclusive_group(required=True)
    source.add_argument("--trajectories", type=Path, help="trajectory file to build from")
    source.add_argument("--map", type=Path, help="Moving-AI map to sample trajectories on")
    build.add_argument("--start", nargs=2, type=float, help="initial state x y (with --map)")
    build.add_argument(
        "--goal",
        nargs=3,
        action="append",
        metavar=("NAME", "X", "Y"),
        help="goal hypothesis (with --map), repeatable",
    )
    build.add_argument("--out", type=Path, required=True, help="tree file to write")
    build.add_argument("--save-trajectories", type=Path, help="also write sampled trajectories")
    build.add_argument("--report", type=Path, help="write the validation report as JSON")
    build.add_argument("--plot", type=Path, help="write the trajectories as an HTML plot")
    build.add_argument(
        "--strict", action="store_true", help="fail with exit code 2 on a tree violation"
    )
    _add_engine_flags(build)
    _add_tree_flags(build)

    recognize = subparsers.add_parser("recognize", help="run the online recognizer")
    recognize.add_argument("--tree", type=Path, required=True, help="tree file")
    recognize.add_argument(
        "--observations", type=Path, required=True, help="observation CSV with a 't' column"
    )
    recognize.add_argument(
        "--goal",
        nargs="+",
        action="append",
        metavar="NAME X",
        help="goal name and full state, repeatable; derived from the tree when omitted",
    )
    recognize.add_argument("--out", type=Path, help="posterior per step, stdout when omitted")
    recognize.add_argument(
        "--dump-costs", type=Path, help="directory for per-branch DTW cost matrices (CSV)"
    )
    recognize.add_argument("--format", dest="output_format", choices=("csv", "json-lines"))
    _add_engine_flags(recognize)

    bench = subparsers.add_parser("bench", help="run an experiment spec")
    grid = subparsers.add_parser("grid-search", help="sweep merge, prune and K of a spec")
    for sub in (bench, grid):
        sub.add_argument("--spec", type=Path, required=True, help="experiment spec JSON")
        sub.add_argument("--out", type=Path, help="report file, stdout when omitted")
        sub.add_argument("--workers", type=int, help="number of worker processes")
        sub.add_argument("--config", type=Path, help="JSON config file overriding flags")
    bench.add_argument("--format", dest="output_format", choices=REPORT_FORMATS)
    bench.add_argument(
        "--adopted-thresholds",
        action="store_true",
        help="use the merge/prune thresholds adopted for the mode instead of the spec grid",
    )
    grid.add_argument("--plot", type=Path, help="write the PPV heatmaps as HTML")
    grid.add_argument(
        "--default-grid", action="store_true", help="sweep the default merge, prune and K grid"
    )

    return parser.parse_args(argv)


def _add_engine_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="JSON config file overriding flags")
    parser.add_argument("--depth", "-k", type=int, help="signature depth")
    parser.add_argument("--mode", choices=("plain", "dtw"), help="scoring mode")
    parser.add_argument("--aggregation", choices=("max", "incremental_mean"))
    parser.add_argument("--dtw-radius", type=int, help="radius of the approximate DTW")
    parser.add_argument(
        "--dimension-mask",
        nargs="+",
        type=lambda v: v.lower() in ("1", "true", "yes"),
        help="per-dimension flags, e.g. 1 1 0",
    )


def _add_tree_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--eps-merge", type=float, help="merge threshold (squared distance)")
    parser.add_argument("--eps-prune", type=float, help="prune threshold (squared distance)")
    parser.add_argument("--n-trajectories", "-K", type=int, help="trajectories per goal")
    parser.add_argument("--seed", type=int, help="sampler seed")
    parser.add_argument("--spread", type=float, help="allowed relative detour cost")


def resolve_settings(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values, overridden by the config file when one is given."""
    settings = {
        key: getattr(args, key) for key in FLAG_KEYS if getattr(args, key, None) is not None
    }
    if getattr(args, "config", None) is not None:
        settings.update(load_config(args.config))
    settings["mode"] = resolve_mode(settings.get("mode"))
    return settings


def engine_config(settings: Dict[str, Any]) -> EngineConfig:
    return EngineConfig.from_dict({k: v for k, v in settings.items() if k in engine_keys()})


def build_tree_command(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    config = engine_config(settings)

    grid = None
    if args.trajectories is not None:
        trajs = load_trajectories(args.trajectories)
        goals = None
    else:
        if args.start is None or not args.goal:
            raise InputError("--map needs --start and at least one --goal")
        grid = load_map(args.map)
        trajs = []
        goals = [name for name, _, _ in args.goal]
        for idx, (name, x, y) in enumerate(args.goal):
            request = SampleRequest(
                grid,
                tuple(args.start),
                (float(x), float(y)),
                k=settings.get("n_trajectories", 1),
                seed=settings.get("seed", 0) + idx,
                spread=settings.get("spread", 0.5),
            )
            trajs.extend((points, name) for points in sample_k_trajectories(request))
        if args.save_trajectories is not None:
            save_trajectories(trajs, args.save_trajectories)

    masked = [(apply_dimension_mask(points, config.dimension_mask), g) for points, g in trajs]
    tree, diagnostics = build_trajectory_tree(
        masked,
        config.depth,
        settings.get("eps_merge", 0.0),
        settings.get("eps_prune", 0.0),
        goals,
    )
    if config.dimension_mask is not None:
        tree.source_state = np.asarray(trajs[0][0], dtype=np.float64)[0].copy()
    save_tree(tree, args.out)
    if args.report is not None:
        pd.Series(diagnostics.to_dict()).to_json(args.report, indent=2)
    if args.plot is not None:
        _plot_trajectories(trajs, grid, args.plot)
    if args.strict and not diagnostics.ok:
        raise ValidationViolation(f"Tree violates {', '.join(diagnostics.violations)}")
    return EXIT_OK


def _plot_trajectories(trajs, grid, fp: Path):
    if any(np.shape(points)[1] < 2 for points, _ in trajs):
        raise InputError("Plotting needs trajectories of at least two dimensions")
    from .vis import plot_trajectories

    plot_trajectories(trajs, grid).write_html(str(fp))
    logger.info(f"Wrote trajectory plot to '{fp}'")


def recognize_command(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    config = engine_config(settings)
    tree = load_tree(args.tree)

    observations = load_observations(args.observations)
    if config.dimension_mask is None:
        initial_state = tree.initial_state
    elif tree.source_state is not None:
        initial_state = tree.source_state
    else:
        raise InputError(
            f"Tree file '{args.tree}' holds no unmasked initial state, "
            "rebuild it with --dimension-mask"
        )

    if args.goal:
        goals = {values[0]: np.array(values[1:], dtype=np.float64) for values in args.goal}
    elif config.dimension_mask is None:
        goals = goal_states_from_tree(tree)
    else:
        raise InputError("Goal states cannot be derived from a masked tree, pass --goal")

    recognizer = GoalRecognizer(RecognitionProblem(goals, initial_state, tree, config))
    history = recognizer.run(observations)
    if args.dump_costs is not None and history:
        recognizer.dump_cost_matrices(args.dump_costs)

    df = pd.DataFrame(
        [
            {"t": p.timestep, **p.as_dict(), "top": p.top(), "degenerate": p.degenerate}
            for p in history
        ]
    )
    fmt = settings.get("output_format", "csv")
    text = df.to_csv(index=False) if fmt == "csv" else df.to_json(orient="records", lines=True)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text, encoding="utf-8")
    if history:
        logger.info(f"Final ranking: {history[-1].ranking()}")
    return EXIT_OK


def bench_command(args: argparse.Namespace) -> int:
    spec = _experiment_spec(args)
    report = run_experiment(spec)
    report.name = args.spec.stem
    fmt = getattr(args, "output_format", None) or "text-table"
    text = emit_report(report, fmt, args.out)
    if text is not None:
        sys.stdout.write(text)
    return EXIT_VALIDATION_VIOLATION if report.violations else EXIT_OK


def grid_search_command(args: argparse.Namespace) -> int:
    spec = _experiment_spec(args)
    table = grid_search(spec)
    if args.out is None:
        sys.stdout.write(table.to_csv(index=False))
    else:
        table.to_csv(args.out, index=False)
    if args.plot is not None:
        from .vis import plot_grid_search

        plot_grid_search(table).write_html(str(args.plot))
    logger.info(f"Best cell: {best_cell(table)}")
    return EXIT_OK


def _experiment_spec(args: argparse.Namespace):
    spec = load_experiment_spec(args.spec)
    overrides = load_config(args.config) if args.config is not None else {}
    engine = {k: v for k, v in overrides.items() if k in engine_keys()}
    spec.engine = spec.engine.replace(**engine)
    if "mode" in engine:
        spec.modes = [engine["mode"]]
    if "depth" in engine:
        spec.depths = [engine["depth"]]

    if getattr(args, "default_grid", False):
        spec.use_default_grid()
    if getattr(args, "adopted_thresholds", False):
        spec.use_adopted_thresholds()
    for key in ("eps_merge", "eps_prune", "n_trajectories"):
        if key in overrides:
            setattr(spec, key, [overrides[key]])
    if "seed" in overrides:
        spec.seed = overrides["seed"]
    if "spread" in overrides:
        spec.spread = overrides["spread"]
    if args.workers is not None:
        spec.n_workers = args.workers
    return spec


COMMANDS = {
    "build-tree": build_tree_command,
    "recognize": recognize_command,
    "bench": bench_command,
    "grid-search": grid_search_command,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_cli_input(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ValidationViolation as ex:
        logger.error(str(ex))
        return EXIT_VALIDATION_VIOLATION
    except (SigRecognitionError, OSError) as ex:
        logger.error(str(ex))
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
