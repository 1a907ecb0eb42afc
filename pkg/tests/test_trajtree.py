import logging
from collections import Counter

import numpy as np
import pytest

from sig_recognition.exceptions import DimensionMismatchError, InputError
from sig_recognition.globals import TREE_FORMAT_VERSION
from sig_recognition.signature import PathSignature
from sig_recognition.trajtree import (
    GOAL_WITHOUT_BRANCH,
    LEAF_COUNT_BELOW_GOALS,
    MULTI_GOAL_LEAF,
    TrajectoryTree,
    TreeNode,
    branches,
    build_trajectory_tree,
    build_tree,
    goal_states_from_tree,
    load_tree,
    merge,
    node_table,
    prune,
    save_tree,
    validate,
)
from sig_recognition.utils import generate_random_trajectory


def random_walks(n_goals, per_goal, n_points=8, step_scale=0.3, seed=0):
    trajs = []
    for g in range(n_goals):
        for i in range(per_goal):
            walk_seed = seed + 1000 * g + i
            points = generate_random_trajectory(n_points, step_scale=step_scale, seed=walk_seed)
            trajs.append((points, f"g{g}"))
    return trajs


def tables_equal(a: TrajectoryTree, b: TrajectoryTree) -> bool:
    left, right = node_table(a), node_table(b)
    return all(np.array_equal(left[key], right[key]) for key in left)


def shared_node_count(tree, *goals):
    return sum(set(goals) <= node.goal_labels for node in tree.nodes())


class TestBuildTree:
    def test_bend_shares_one_node_after_root(self, tree_example_trajectories):
        tree = build_tree(tree_example_trajectories[:2], 2)
        shared = tree.root.children[0]
        assert len(tree.root.children) == 1
        assert shared.goal_labels == {"flat", "bend"}
        assert len(shared.children) == 2
        assert shared_node_count(tree, "flat", "bend") == 2

    def test_lower_start_and_bump_branch_at_root(self, tree_example_trajectories):
        tree = build_tree(tree_example_trajectories, 2)
        assert len(tree.root.children) == 3
        assert shared_node_count(tree, "flat", "low") == 1
        assert shared_node_count(tree, "flat", "bump") == 1
        assert tree.stats().leaf_count == 4
        assert [b.goal for b in branches(tree)] == ["flat", "bend", "low", "bump"]

    def test_differing_start_is_logged(self, tree_example_trajectories, caplog):
        with caplog.at_level(logging.WARNING):
            build_tree(tree_example_trajectories[:3], 2)
        assert "not at the shared initial state" in caplog.text

    @pytest.mark.parametrize("n_shared", [1, 2, 3, 4])
    def test_shared_prefix_gives_shared_nodes(self, n_shared):
        prefix = generate_random_trajectory(n_shared, seed=n_shared)
        tails = [
            prefix[-1] + 1 + generate_random_trajectory(3, seed=100 + i, start=[0.0, i])
            for i in range(2)
        ]
        trajs = [(np.concatenate([prefix, tail]), goal) for tail, goal in zip(tails, "ab")]
        tree = build_tree(trajs, 2)
        assert shared_node_count(tree, "a", "b") == n_shared
        assert tree.stats().node_count == n_shared + 6

    def test_single_trajectory_is_a_chain(self):
        points = generate_random_trajectory(6, seed=7)
        tree = build_tree([(points, "g")], 3)
        stats = tree.stats()
        assert (stats.node_count, stats.leaf_count, stats.height) == (6, 1, 6)
        assert stats.widths == [1] * 6
        (branch,) = branches(tree)
        assert branch.timesteps.tolist() == list(range(6))
        assert branch.goal == "g"

    def test_one_branch_per_trajectory(self):
        tree = build_tree(random_walks(3, 2), 2)
        found = branches(tree)
        assert len(found) == 6
        assert sorted(b.goal for b in found) == ["g0", "g0", "g1", "g1", "g2", "g2"]
        assert tree.goal_ids == ("g0", "g1", "g2")

    def test_prefix_trajectory_ends_inside_the_tree(self):
        points = generate_random_trajectory(6, seed=1)
        tree = build_tree([(points, "far"), (points[:3], "near")], 2)
        assert tree.stats().leaf_count == 2
        ends = {b.goal: len(b) for b in branches(tree)}
        assert ends == {"far": 6, "near": 3}

    def test_root_holds_trivial_signature(self):
        tree = build_tree(random_walks(1, 2), 2)
        np.testing.assert_array_equal(tree.root.value, PathSignature.trivial(2, 2).terms)
        assert tree.root.goal_labels == {"g0"}

    def test_rejects_empty_input(self):
        with pytest.raises(InputError):
            build_tree([], 2)

    def test_rejects_mixed_dimensions(self):
        with pytest.raises(DimensionMismatchError):
            build_tree([(np.zeros((3, 2)), "a"), (np.zeros((3, 3)), "b")], 2)

    def test_copy_is_independent(self):
        tree = build_tree(random_walks(2, 2), 2)
        clone = tree.copy()
        assert tables_equal(tree, clone)
        clone.root.children[0].value[1] += 1.0
        clone.root.children.pop()
        assert not tables_equal(tree, clone)
        assert len(tree.root.children) == 4


class TestMerge:
    # k = 1, so the squared distance of the two siblings is that of their increments
    near = [
        (np.array([[0.0, 0.0], [1.0, 0.0]]), "a"),
        (np.array([[0.0, 0.0], [1.0, np.sqrt(0.3)]]), "b"),
    ]

    def test_keeps_siblings_beyond_threshold(self):
        merged = merge(build_tree(self.near, 1), 0.2)
        assert len(merged.root.children) == 2

    def test_merges_siblings_within_threshold(self):
        tree = build_tree(self.near, 1)
        merged = merge(tree, 0.4)
        (child,) = merged.root.children
        assert child.goal_labels == {"a", "b"}
        assert child.terminal_goals == Counter(["a", "b"])
        np.testing.assert_allclose(child.value, [1.0, 1.0, np.sqrt(0.3) / 2])
        assert len(tree.root.children) == 2

    def test_identical_siblings_merge_into_their_value(self):
        value = np.array([1.0, 0.5, 0.5])
        root = TreeNode(np.array([1.0, 0.0, 0.0]), 0, goal_labels={"a", "b"})
        root.children = [
            TreeNode(value.copy(), 1, goal_labels={"a"}, terminal_goals=Counter(["a"])),
            TreeNode(value.copy(), 1, goal_labels={"b"}, terminal_goals=Counter(["b"])),
        ]
        tree = TrajectoryTree(root, ("a", "b"), 2, 1, np.zeros(2))
        merged = merge(tree, 1e-12)
        assert len(merged.root.children) == 1
        np.testing.assert_array_equal(merged.root.children[0].value, value)
        assert len(branches(merged)) == 2

    def test_zero_threshold_is_identity(self):
        tree = build_tree(random_walks(3, 3), 2)
        assert tables_equal(merge(tree, 0.0), tree)

    @pytest.mark.parametrize("eps", [0.1, 0.5, 2.0])
    def test_merge_is_monotone(self, eps):
        tree = build_tree(random_walks(3, 4), 2)
        before, after = tree.stats(), merge(tree, eps).stats()
        assert after.leaf_count <= before.leaf_count
        assert after.node_count <= before.node_count
        assert after.height == before.height
        assert all(a <= b for a, b in zip(after.widths, before.widths))

    @pytest.mark.parametrize("eps", [0.1, 0.5, 2.0])
    def test_merge_is_idempotent(self, eps):
        once = merge(build_tree(random_walks(3, 4), 2), eps)
        assert tables_equal(merge(once, eps), once)

    def test_rejects_negative_threshold(self):
        with pytest.raises(InputError):
            merge(build_tree(self.near, 1), -0.1)


class TestPrune:
    def test_slow_chain_collapses_to_root_and_leaf(self):
        points = np.stack([0.01 * np.arange(11), np.zeros(11)], axis=1)
        pruned = prune(build_tree([(points, "g")], 2), 1.0)
        stats = pruned.stats()
        assert (stats.node_count, stats.leaf_count) == (2, 1)
        (branch,) = branches(pruned)
        assert branch.timesteps.tolist() == [0, 10]
        assert not pruned.root.terminal_goals

    def test_zero_threshold_is_identity(self):
        tree = build_tree(random_walks(2, 3), 2)
        assert tables_equal(prune(tree, 0.0), tree)

    def test_fork_collapses_into_multi_goal_leaf(self, fork_trajectories):
        pruned = prune(build_tree(fork_trajectories, 2), 1.0)
        (fork,) = pruned.root.children
        assert fork.is_leaf
        assert fork.terminal_goals == Counter(["up", "down"])
        found = branches(pruned)
        assert [b.goal for b in found] == ["up", "down"]
        np.testing.assert_array_equal(found[0].nodes, found[1].nodes)

        diagnostics = validate(pruned)
        assert diagnostics.violations == [LEAF_COUNT_BELOW_GOALS, MULTI_GOAL_LEAF]
        assert not diagnostics.ok

    @pytest.mark.parametrize("eps", [0.05, 0.5, 5.0])
    def test_prune_is_monotone(self, eps):
        tree = build_tree(random_walks(3, 3), 2)
        pruned = prune(tree, eps)
        assert pruned.stats().node_count <= tree.stats().node_count
        goals_before = Counter(b.goal for b in branches(tree))
        assert Counter(b.goal for b in branches(pruned)) == goals_before

    def test_collapsed_fork_keeps_one_branch_per_trajectory(self):
        split = [(np.array([[0.0, 0.0], [5.0, 0.0], [5.0, dy]]), "g") for dy in (0.01, -0.01)]
        trajs = split + [(np.array([[0.0, 0.0], [0.0, 5.0]]), "h")]
        pruned = prune(build_tree(trajs, 2), 0.01)
        (fork, _) = pruned.root.children
        assert fork.is_leaf
        assert fork.terminal_goals == Counter({"g": 2})
        assert [b.goal for b in branches(pruned)] == ["g", "g", "h"]
        assert validate(pruned).ok

    def test_terminal_inner_node_counts_as_leaf(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.01], [3.0, 0.0]])
        pruned = prune(build_tree([(points, "far"), (points[:3], "near")], 2), 0.01)
        (inner,) = pruned.root.children
        assert inner.terminal_goals == Counter(["near"])
        assert len(inner.children) == 1
        found = branches(pruned)
        assert {b.goal: b.timesteps.tolist() for b in found} == {"near": [0, 1], "far": [0, 1, 3]}
        assert pruned.stats().leaf_count == len(found) == 2
        assert validate(pruned).leaf_count == 2

    @pytest.mark.parametrize("eps", [0.05, 0.5, 5.0])
    def test_prune_is_idempotent(self, eps):
        once = prune(build_tree(random_walks(3, 3), 2), eps)
        assert tables_equal(prune(once, eps), once)

    def test_huge_threshold_leaves_root_and_leaves(self):
        tree = build_tree(random_walks(2, 3), 2)
        pruned = prune(tree, 1e12)
        assert pruned.stats().widths == [1, tree.stats().leaf_count]
        assert not pruned.root.terminal_goals

    def test_merge_then_prune_keeps_timesteps_increasing(self):
        tree, _ = build_trajectory_tree(random_walks(3, 3), 2, eps_merge=0.5, eps_prune=0.5)
        for branch in branches(tree):
            assert branch.timesteps[0] == 0
            assert np.all(np.diff(branch.timesteps) > 0)

    def test_rejects_negative_threshold(self):
        with pytest.raises(InputError):
            prune(build_tree(random_walks(1, 1), 2), -1.0)


class TestValidate:
    def test_many_trajectories_per_goal(self):
        tree, diagnostics = build_trajectory_tree(random_walks(7, 15, n_points=6), 2)
        assert diagnostics.leaf_count == 105
        assert diagnostics.ok
        assert len(branches(tree)) == 105

    def test_nearly_identical_goals_merge_into_one_leaf(self):
        points = generate_random_trajectory(5, seed=4)
        trajs = [(points, "a"), (points + np.array([0.0, 1e-3]) * (points != 0), "b")]
        _, diagnostics = build_trajectory_tree(trajs, 2, eps_merge=1.0)
        assert MULTI_GOAL_LEAF in diagnostics.violations
        assert LEAF_COUNT_BELOW_GOALS in diagnostics.violations

    def test_goal_without_branch(self):
        tree = build_tree(random_walks(2, 1), 2)
        diagnostics = validate(tree, ["g0", "g1", "g2"])
        assert GOAL_WITHOUT_BRANCH in diagnostics.violations
        assert LEAF_COUNT_BELOW_GOALS in diagnostics.violations

    def test_report_dict(self):
        _, diagnostics = build_trajectory_tree(random_walks(2, 2, n_points=4), 2)
        report = diagnostics.to_dict()
        assert sorted(report) == ["height", "leaf_count", "node_count", "violations", "widths"]
        assert report["height"] == 4
        assert report["widths"][0] == 1
        assert report["violations"] == []


class TestGoalStates:
    def test_goal_states_are_trajectory_ends(self, fork_trajectories):
        states = goal_states_from_tree(build_tree(fork_trajectories, 2))
        assert list(states) == ["up", "down"]
        np.testing.assert_allclose(states["up"], [10.0, 0.03])
        np.testing.assert_allclose(states["down"], [10.0, -0.03])


class TestTreeFiles:
    def test_round_trip(self, tmp_path):
        tree, _ = build_trajectory_tree(random_walks(3, 2), 3, eps_merge=0.3)
        fp = tmp_path / "tree.npz"
        save_tree(tree, fp)
        loaded = load_tree(fp)
        assert tables_equal(loaded, tree)
        assert loaded.goal_ids == tree.goal_ids
        assert (loaded.dimension, loaded.depth) == (2, 3)
        np.testing.assert_array_equal(loaded.initial_state, tree.initial_state)

    def test_repeated_terminal_goals_survive(self, tmp_path):
        points = generate_random_trajectory(4, seed=2)
        tree = build_tree([(points, "g"), (points, "g"), (points[:2], "h")], 2)
        fp = tmp_path / "tree.npz"
        save_tree(tree, fp)
        assert [b.goal for b in branches(load_tree(fp))] == ["h", "g", "g"]

    def test_source_state_survives(self, tmp_path):
        tree = build_tree(random_walks(1, 2), 2)
        fp = tmp_path / "tree.npz"
        save_tree(tree, fp)
        assert load_tree(fp).source_state is None
        tree.source_state = np.array([0.0, 0.0, 5.0])
        save_tree(tree, fp)
        np.testing.assert_array_equal(load_tree(fp).source_state, [0.0, 0.0, 5.0])

    def test_integer_goals_survive(self, tmp_path):
        trajs = [(points, idx) for idx, (points, _) in enumerate(random_walks(1, 2))]
        fp = tmp_path / "tree.npz"
        save_tree(build_tree(trajs, 2), fp)
        assert load_tree(fp).goal_ids == (0, 1)

    def test_rejects_unknown_version(self, tmp_path):
        fp = tmp_path / "tree.npz"
        save_tree(build_tree(random_walks(1, 1), 2), fp)
        with np.load(fp) as data:
            content = {key: data[key] for key in data.files}
        content["header"][0] = TREE_FORMAT_VERSION + 1
        with open(fp, "wb") as f:
            np.savez(f, **content)
        with pytest.raises(InputError, match="version"):
            load_tree(fp)

    def test_rejects_missing_arrays(self, tmp_path):
        fp = tmp_path / "tree.npz"
        with open(fp, "wb") as f:
            np.savez(f, header=np.array([TREE_FORMAT_VERSION, 2, 2, 1]))
        with pytest.raises(InputError, match="lacks"):
            load_tree(fp)

    def test_rejects_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_tree(tmp_path / "absent.npz")
