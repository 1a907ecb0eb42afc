import logging

import numpy as np
import pytest
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import dijkstra

from sig_recognition.exceptions import (
    DimensionMismatchError,
    InputError,
    SamplingError,
    UnreachableGoalError,
)
from sig_recognition.sampler import (
    MOVES,
    SQRT2,
    GridMap,
    SampleRequest,
    all_pairs_problems,
    line_of_sight,
    load_map,
    load_observations,
    load_trajectories,
    octile_distance,
    resample_polyline,
    sample_k_trajectories,
    save_trajectories,
    shortest_grid_path,
    smooth_path,
)


def random_grid(seed, size=12, blocked=0.25):
    rng = np.random.default_rng(seed)
    rows = ["".join("@" if rng.random() < blocked else "." for _ in range(size)) for _ in range(size)]
    return GridMap.from_rows(rows)


def dijkstra_costs(grid, source):
    """Reference shortest costs from `source` over the same 8-connected moves."""
    cells = grid.free_cells()
    index = {cell: i for i, cell in enumerate(cells)}
    graph = lil_matrix((len(cells), len(cells)))
    for (col, row), i in index.items():
        for dc, dr in MOVES:
            nxt = (col + dc, row + dr)
            if nxt not in index:
                continue
            if dc and dr and not (grid.is_free((col + dc, row)) and grid.is_free((col, row + dr))):
                continue
            graph[i, index[nxt]] = SQRT2 if dc and dr else 1.0
    costs = dijkstra(graph.tocsr(), indices=index[source])
    return {cell: costs[i] for cell, i in index.items()}


class TestLoadMap:
    def test_reads_moving_ai_format(self, tmp_path):
        fp = tmp_path / "small.map"
        fp.write_text("type octile\nheight 2\nwidth 4\nmap\n.@T.\nGS.O\n")
        grid = load_map(fp)
        assert (grid.width, grid.height) == (4, 2)
        assert grid.name == "small"
        assert grid.traversable.tolist() == [[True, False, False, True], [True, True, True, False]]

    @pytest.mark.parametrize(
        "text, message",
        [
            ("type octile\nheight 2\nwidth 2\n..\n..\n", "line 4"),
            ("type octile\nheight 2\nwidth 3\nmap\n...\n..\n", "line 6"),
            ("type octile\nheight 3\nwidth 2\nmap\n..\n..\n", "expected 3 map rows"),
            ("type octile\nheight x\nwidth 2\nmap\n..\n", "malformed"),
        ],
    )
    def test_rejects_malformed_maps(self, tmp_path, text, message):
        fp = tmp_path / "bad.map"
        fp.write_text(text)
        with pytest.raises(InputError, match=message):
            load_map(fp)

    def test_cell_of_rounds_to_nearest_centre(self):
        grid = GridMap.from_rows(["...", "..."])
        assert grid.cell_of([1.4, 0.6]) == (1, 1)
        with pytest.raises(DimensionMismatchError):
            grid.cell_of([1.0, 1.0, 1.0])


class TestShortestGridPath:
    n_samples = 20

    def test_matches_dijkstra(self):
        for seed in range(self.n_samples):
            grid = random_grid(seed)
            cells = grid.free_cells()
            source = cells[0]
            reference = dijkstra_costs(grid, source)
            for target in cells[:: max(1, len(cells) // 10)]:
                path = shortest_grid_path(grid, source, target)
                if np.isinf(reference[target]):
                    assert path is None
                else:
                    assert path.cost == pytest.approx(reference[target])
                    assert path.cells[0] == source and path.cells[-1] == target

    def test_open_grid_cost_is_octile(self):
        grid = GridMap.from_rows(["." * 10] * 10)
        path = shortest_grid_path(grid, (0, 0), (9, 4))
        assert path.cost == pytest.approx(octile_distance((0, 0), (9, 4)))

    def test_no_corner_cutting(self):
        grid = GridMap.from_rows([".@", "@."])
        assert shortest_grid_path(grid, (0, 0), (1, 1)) is None

    def test_blocked_end(self):
        grid = GridMap.from_rows(["..@"])
        assert shortest_grid_path(grid, (0, 0), (2, 0)) is None


class TestSmoothing:
    def test_line_of_sight_respects_blocked_cells(self):
        grid = GridMap.from_rows(["...", ".@.", "..."])
        assert line_of_sight(grid, (0, 0), (2, 0))
        assert not line_of_sight(grid, (0, 0), (2, 2))
        assert not line_of_sight(grid, (0, 1), (2, 1))

    def test_string_pulling_on_open_grid(self):
        grid = GridMap.from_rows(["." * 6] * 6)
        cells = [(0, 0), (1, 0), (2, 1), (3, 2), (4, 3), (5, 5)]
        assert smooth_path(grid, cells).tolist() == [[0.0, 0.0], [5.0, 5.0]]

    def test_resample_spacing(self):
        points = resample_polyline([[0.0, 0.0], [3.0, 0.0], [3.0, 2.5]])
        steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
        np.testing.assert_allclose(steps[:-1], 1.0)
        assert steps[-1] <= 1.0
        assert points[-1].tolist() == [3.0, 2.5]

    def test_resample_drops_repeated_waypoints(self):
        points = resample_polyline([[0.0, 0.0], [0.0, 0.0], [2.0, 0.0], [2.0, 0.0]])
        assert points.tolist() == [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]

    def test_resample_single_point(self):
        assert resample_polyline([[1.0, 1.0], [1.0, 1.0]]).tolist() == [[1.0, 1.0]]


class TestSampleTrajectories:
    grid = GridMap.from_rows(["." * 10] * 10, name="open10")

    def test_single_trajectory_is_straight(self):
        (traj,) = sample_k_trajectories(SampleRequest(self.grid, (0.0, 0.0), (9.0, 9.0)))
        assert traj[0].tolist() == [0.0, 0.0]
        assert traj[-1].tolist() == [9.0, 9.0]
        assert np.all(np.diff(traj, axis=0) >= 0)
        np.testing.assert_allclose(traj[:, 0], traj[:, 1])

    @pytest.mark.parametrize("k", [3, 5])
    def test_distinct_trajectories(self, k):
        trajs = sample_k_trajectories(SampleRequest(self.grid, (0.0, 0.0), (9.0, 9.0), k=k))
        assert len(trajs) == k
        for i, a in enumerate(trajs):
            assert a[0].tolist() == [0.0, 0.0]
            assert a[-1].tolist() == [9.0, 9.0]
            for b in trajs[i + 1 :]:
                assert a.shape != b.shape or not np.allclose(a, b)

    def test_same_seed_same_trajectories(self):
        request = SampleRequest(self.grid, (0.0, 0.0), (9.0, 5.0), k=4, seed=17)
        first, second = sample_k_trajectories(request), sample_k_trajectories(request)
        assert len(first) == len(second)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_detours_stay_within_spread(self):
        request = SampleRequest(self.grid, (0.0, 0.0), (9.0, 0.0), k=4, spread=0.2)
        for traj in sample_k_trajectories(request):
            length = np.linalg.norm(np.diff(traj, axis=0), axis=1).sum()
            assert length <= 1.2 * 9.0 + 1e-9

    def test_blocked_goal(self):
        grid = GridMap.from_rows(["....", "...@"])
        with pytest.raises(UnreachableGoalError):
            sample_k_trajectories(SampleRequest(grid, (0.0, 0.0), (3.0, 1.0)))

    def test_walled_off_goal(self):
        grid = GridMap.from_rows([".@.", ".@.", ".@."])
        with pytest.raises(UnreachableGoalError):
            sample_k_trajectories(SampleRequest(grid, (0.0, 0.0), (2.0, 2.0)))

    def test_corridor_has_a_single_trajectory(self):
        grid = GridMap.from_rows(["....."])
        request = SampleRequest(grid, (0.0, 0.0), (4.0, 0.0), k=2, max_attempts=20)
        with pytest.raises(SamplingError) as info:
            sample_k_trajectories(request)
        assert info.value.found == 1
        assert len(info.value.trajectories) == 1

    @pytest.mark.parametrize("k, spread", [(0, 0.5), (1, -0.1)])
    def test_rejects_bad_requests(self, k, spread):
        with pytest.raises(InputError):
            SampleRequest(self.grid, (0.0, 0.0), (1.0, 1.0), k=k, spread=spread)


class TestAllPairsProblems:
    def test_every_ordered_pair(self):
        points = [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)]
        problems = all_pairs_problems(points)
        assert len(problems) == 6
        start, goals, truth = problems[0]
        assert start.tolist() == [0.0, 0.0]
        assert sorted(goals) == ["g1", "g2"]
        assert truth == "g1"
        for start, goals, truth in problems:
            assert truth in goals
            assert not any(np.array_equal(start, state) for state in goals.values())


class TestTrajectoryFiles:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        trajs = [(rng.standard_normal((n, 3)), f"goal{n}") for n in (1, 4, 7)]
        fp = tmp_path / "trajs.txt"
        save_trajectories(trajs, fp)
        loaded = load_trajectories(fp)
        assert [goal for _, goal in loaded] == ["goal1", "goal4", "goal7"]
        for (points, _), (expected, _) in zip(loaded, trajs):
            np.testing.assert_array_equal(points, expected)

    def test_comments_and_blank_lines(self, tmp_path):
        fp = tmp_path / "trajs.txt"
        fp.write_text("# two goals\nd 2 count 2\n\ntrajectory a\n0 0\n1 1\n# next\ntrajectory b\n0 0\n")
        loaded = load_trajectories(fp)
        assert [len(points) for points, _ in loaded] == [2, 1]

    def test_mixed_dimensions_name_the_line(self, tmp_path):
        fp = tmp_path / "trajs.txt"
        fp.write_text("d 2 count 1\ntrajectory a\n0 0\n1 1 1\n")
        with pytest.raises(DimensionMismatchError, match="line 4"):
            load_trajectories(fp)

    @pytest.mark.parametrize(
        "text, message",
        [
            ("d 2\ntrajectory a\n0 0\n", "line 1"),
            ("d 2 count 2\ntrajectory a\n0 0\n", "declares 2"),
            ("d 1 count 1\n0\n", "line 2"),
            ("d 1 count 1\ntrajectory a\nx\n", "line 3"),
            ("d 1 count 1\ntrajectory a\n", "no points"),
        ],
    )
    def test_rejects_malformed_files(self, tmp_path, text, message):
        fp = tmp_path / "trajs.txt"
        fp.write_text(text)
        with pytest.raises(InputError, match=message):
            load_trajectories(fp)

    def test_empty_file(self, tmp_path, caplog):
        fp = tmp_path / "empty.txt"
        fp.write_text("\n# nothing here\n")
        with caplog.at_level(logging.WARNING):
            assert load_trajectories(fp) == []
        assert "empty" in caplog.text

    def test_rejects_saving_mixed_dimensions(self, tmp_path):
        with pytest.raises(DimensionMismatchError):
            save_trajectories([(np.zeros((2, 2)), "a"), (np.zeros((2, 3)), "b")], tmp_path / "x")


class TestObservationFiles:
    def test_reads_timesteps_and_states(self, tmp_path):
        fp = tmp_path / "obs.csv"
        fp.write_text("t,x,y\n0,0.0,0.0\n2,1.5,2.0\n5,3.0,4.0\n")
        observations = load_observations(fp)
        assert [t for t, _ in observations] == [0, 2, 5]
        assert observations[1][1].tolist() == [1.5, 2.0]

    @pytest.mark.parametrize("text", ["x,y\n0,0\n", "t,x\n", "t\n0\n", "t,x\n0,a\n"])
    def test_rejects_malformed_files(self, tmp_path, text):
        fp = tmp_path / "obs.csv"
        fp.write_text(text)
        with pytest.raises(InputError):
            load_observations(fp)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_observations(tmp_path / "absent.csv")
