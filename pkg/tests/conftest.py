import json
from pathlib import Path

import numpy as np
import pytest

from sig_recognition.sampler import save_trajectories
from sig_recognition.utils import linear_trajectory


# Add modules for doctest namespaces
@pytest.fixture(autouse=True)
def add_np(doctest_namespace):
    doctest_namespace["np"] = np
    doctest_namespace["Path"] = Path


@pytest.fixture
def worked_example_trajectory():
    x = 5.0 + np.arange(1, 11)
    return np.stack([x, x**2], axis=1)


@pytest.fixture
def tree_example_trajectories():
    """Four 2-D trajectories over t = 1..4: a flat line, one bending up after two steps, one
    starting lower, and the flat line with a tiny bump at t = 2."""
    t = np.arange(1.0, 5.0)
    flat = np.stack([t, np.full(4, 2.0)], axis=1)
    bend = np.stack([t, np.maximum(t, 2.0)], axis=1)
    low = np.stack([t, np.minimum(2.0, t - 1)], axis=1)
    bump = np.stack([t, 0.1 * np.exp(-((t - 2) ** 2) / (2 * 0.158**2)) + 2], axis=1)
    return [(flat, "flat"), (bend, "bend"), (low, "low"), (bump, "bump")]


@pytest.fixture
def fork_trajectories():
    """Two goals sharing a long first step, then splitting by a hair."""
    up = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 0.01], [10.0, 0.02], [10.0, 0.03]])
    down = up * np.array([1.0, -1.0])
    return [(up, "up"), (down, "down")]


@pytest.fixture
def fork_file(tmp_path, fork_trajectories):
    fp = tmp_path / "fork.txt"
    save_trajectories(fork_trajectories, fp)
    return fp


@pytest.fixture
def fork_spec_file(tmp_path, fork_file):
    """Experiment over both fork goals, sweeping the prune threshold over 0 and 1."""
    spec = {
        "problems": [
            {"name": "fork_up", "trajectories": fork_file.name, "true_goal": "up"},
            {"name": "fork_down", "trajectories": fork_file.name, "true_goal": "down"},
        ],
        "fractions": [0.8],
        "eps_prune": [0.0, 1.0],
    }
    fp = tmp_path / "fork.json"
    fp.write_text(json.dumps(spec))
    return fp


@pytest.fixture
def line_trajectories():
    """Straight lines from the origin to four points, nine steps each."""
    goals = {"east": (9.0, 0.0), "north": (0.0, 9.0), "west": (-9.0, 0.0), "south": (0.0, -9.0)}
    return [(linear_trajectory((0.0, 0.0), end, 10), goal) for goal, end in goals.items()]


@pytest.fixture
def open_map_file(tmp_path):
    fp = tmp_path / "open.map"
    rows = ["." * 10 for _ in range(10)]
    fp.write_text("type octile\nheight 10\nwidth 10\nmap\n" + "\n".join(rows) + "\n")
    return fp
