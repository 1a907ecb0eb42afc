"""Engine configuration and JSON config files."""
import json
import logging
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from .exceptions import InputError
from .globals import (
    AGGREGATIONS,
    DEFAULT_DEPTH,
    DEFAULT_DTW_RADIUS,
    DEFAULT_GOAL_TOLERANCE,
    DEFAULT_TIE_TOLERANCE,
    DTW_REDUCTIONS,
    INTERPOLATIONS,
    MAX_DEPTH,
    MODE_ENV_VAR,
    MODES,
)

logger = logging.getLogger(__name__)

# Keys a config file may carry besides the EngineConfig fields
RUN_KEYS = ("eps_merge", "eps_prune", "n_trajectories", "seed", "spread", "output_format")


@dataclass(frozen=True)
class EngineConfig:
    """Settings of the online recognizer.

    Args:
        depth: Signature depth k, 1 to 6.
        mode: "plain" scores the current prefix signature against the branch node at the same
            timestep, "dtw" aligns all prefix signatures with the branch first.
        aggregation: "max" or "incremental_mean" over the branches of a goal.
        dtw_radius: Radius of the approximate alignment.
        dtw_reduction: "mean" or "sum" of the aligned squared distances.
        priors: Goal id to prior probability, uniform when not given.
        interpolation: How missing observations are filled, only "linear".
        tie_tolerance: Goals within this of the top posterior count as predicted.
        goal_tolerance: An observation this close (max norm) to a goal state ends the episode.
        dimension_mask: Booleans selecting the state dimensions that enter the signatures.
    """

    depth: int = DEFAULT_DEPTH
    mode: str = "plain"
    aggregation: str = "max"
    dtw_radius: int = DEFAULT_DTW_RADIUS
    dtw_reduction: str = "mean"
    priors: Optional[Dict[str, float]] = None
    interpolation: str = "linear"
    tie_tolerance: float = DEFAULT_TIE_TOLERANCE
    goal_tolerance: float = DEFAULT_GOAL_TOLERANCE
    dimension_mask: Optional[List[bool]] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise InputError(f"Signature depth must be within 1..{MAX_DEPTH}, got {self.depth}")
        for name, value, choices in [
            ("mode", self.mode, MODES),
            ("aggregation", self.aggregation, AGGREGATIONS),
            ("dtw_reduction", self.dtw_reduction, DTW_REDUCTIONS),
            ("interpolation", self.interpolation, INTERPOLATIONS),
        ]:
            if value not in choices:
                raise InputError(f"Unknown {name} '{value}', expected one of {choices}")
        if self.dtw_radius < 0:
            raise InputError(f"DTW radius must be nonnegative, got {self.dtw_radius}")
        if self.tie_tolerance < 0 or self.goal_tolerance < 0:
            raise InputError("Tolerances must be nonnegative")
        if self.priors is not None:
            values = np.array(list(self.priors.values()), dtype=np.float64)
            if np.any(values < 0) or not np.isclose(values.sum(), 1.0, rtol=0, atol=1e-9):
                raise InputError(f"Priors must be nonnegative and sum to 1, got {self.priors}")
        if self.dimension_mask is not None and not any(self.dimension_mask):
            raise InputError("Dimension mask must keep at least one dimension")

    def prior_vector(self, goals: Sequence) -> NDArray:
        if self.priors is None:
            return np.full(len(goals), 1.0 / len(goals))
        missing = [g for g in goals if str(g) not in self.priors]
        if missing:
            raise InputError(f"No prior given for goals {missing}")
        return np.array([self.priors[str(g)] for g in goals], dtype=np.float64)

    def replace(self, **changes) -> "EngineConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "EngineConfig":
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise InputError(f"Unknown engine config keys {sorted(unknown)}")
        return cls(**values)


def engine_keys() -> List[str]:
    return [f.name for f in fields(EngineConfig)]


def load_config(fp: Union[str, Path]) -> Dict[str, Any]:
    """Read a JSON config file holding EngineConfig fields and run settings."""
    try:
        with open(fp, "r", encoding="utf-8") as f:
            values = json.load(f)
    except (OSError, json.JSONDecodeError) as ex:
        raise InputError(f"Cannot read config file '{fp}': {ex}") from ex

    if not isinstance(values, dict):
        raise InputError(f"Config file '{fp}' must hold a JSON object")
    unknown = set(values) - set(engine_keys()) - set(RUN_KEYS)
    if unknown:
        raise InputError(f"Unknown keys {sorted(unknown)} in config file '{fp}'")
    logger.debug(f"Loaded config keys {sorted(values)} from '{fp}'")
    return values


def resolve_mode(mode: Optional[str] = None) -> str:
    """Explicit mode, else the SIG_RECOGNITION_MODE environment variable, else "plain"."""
    if mode is None:
        mode = os.environ.get(MODE_ENV_VAR, "plain")
    if mode not in MODES:
        raise InputError(f"Unknown mode '{mode}', expected one of {MODES}")
    return mode
