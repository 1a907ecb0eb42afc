"""Trajectory trees of partial path signatures, with merge and prune compression.

A trajectory of n states contributes the chain of its prefix signatures
`[trivial, sig(p_1..p_2), .., sig(p_1..p_n)]`, starting at the shared root. Identical prefixes
share nodes, so the tree widens only where trajectories diverge.
"""
import json
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DimensionMismatchError, InputError
from .globals import TREE_FORMAT_VERSION
from .signature import (
    PathSignature,
    prefix_signatures,
    signature_length,
    squared_distance,
    validate_trajectory,
)

logger = logging.getLogger(__name__)

GoalId = Union[str, int]

LEAF_COUNT_BELOW_GOALS = "leaf_count_below_goals"
MULTI_GOAL_LEAF = "multi_goal_leaf"
GOAL_WITHOUT_BRANCH = "goal_without_branch"


@dataclass(eq=False)
class TreeNode:
    value: NDArray
    timestep: int
    children: List["TreeNode"] = field(default_factory=list)
    goal_labels: Set[GoalId] = field(default_factory=set)
    # goal of every trajectory ending here, with multiplicity
    terminal_goals: Counter[GoalId] = field(default_factory=Counter)

    def __repr__(self):
        return (
            f"TreeNode(t={self.timestep}, children={len(self.children)}, "
            f"goals={sorted(map(str, self.goal_labels))})"
        )

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def ends_branch(self) -> bool:
        """Childless, or a trajectory ends here."""
        return self.is_leaf or bool(self.terminal_goals)

    def walk(self) -> Iterator["TreeNode"]:
        """Depth-first, pre-order, child order preserved."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class TreeStats:
    node_count: int
    leaf_count: int
    height: int
    widths: List[int]


@dataclass(eq=False)
class TrajectoryTree:
    root: TreeNode
    goal_ids: Tuple[GoalId, ...]
    dimension: int
    depth: int
    initial_state: NDArray
    # full initial state of a tree built from dimension-masked trajectories
    source_state: Optional[NDArray] = None

    def __repr__(self):
        stats = self.stats()
        return (
            f"TrajectoryTree(d={self.dimension}, k={self.depth}, goals={len(self.goal_ids)}, "
            f"nodes={stats.node_count}, leaves={stats.leaf_count})"
        )

    def nodes(self) -> Iterator[TreeNode]:
        return self.root.walk()

    def stats(self) -> TreeStats:
        """Node count, leaf count, height (nodes on the longest path) and node count per level.

        The leaf count is the number of branch ends, terminal inner nodes included.
        """
        widths: List[int] = []
        leaf_count = 0
        level = [self.root]
        while level:
            widths.append(len(level))
            leaf_count += sum(node.ends_branch for node in level)
            level = [child for node in level for child in node.children]
        return TreeStats(
            node_count=sum(widths), leaf_count=leaf_count, height=len(widths), widths=widths
        )

    def copy(self) -> "TrajectoryTree":
        root = _copy_node(self.root)
        stack = [(self.root, root)]
        while stack:
            old, new = stack.pop()
            for child in old.children:
                new_child = _copy_node(child)
                new.children.append(new_child)
                stack.append((child, new_child))
        source_state = None if self.source_state is None else self.source_state.copy()
        return TrajectoryTree(
            root,
            self.goal_ids,
            self.dimension,
            self.depth,
            self.initial_state.copy(),
            source_state,
        )

    def goal_order(self, goals: Iterable[GoalId]) -> List[GoalId]:
        """Distinct goals of `goals`, in tree goal order."""
        return sorted(set(goals), key=self.goal_ids.index)

    def terminal_order(self, node: TreeNode) -> List[GoalId]:
        """Goals ending at `node`, each repeated by its count, in tree goal order."""
        return [
            goal
            for goal in self.goal_order(node.terminal_goals)
            for _ in range(node.terminal_goals[goal])
        ]


@dataclass(eq=False)
class Branch:
    """Root-to-terminal path of the tree, as stacked node values with their original timesteps."""

    nodes: NDArray
    timesteps: NDArray
    goal: GoalId

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class TreeDiagnostics:
    node_count: int
    leaf_count: int
    height: int
    widths: List[int]
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict:
        return {
            "node_count": self.node_count,
            "leaf_count": self.leaf_count,
            "height": self.height,
            "widths": list(self.widths),
            "violations": list(self.violations),
        }


def build_tree(trajs: Sequence[Tuple[ArrayLike, GoalId]], k: int) -> TrajectoryTree:
    """Build the trajectory tree of prefix signatures.

    Args:
        trajs: Pairs of (trajectory of shape (n, d), goal id). Goal ids must be str or int.
        k: Signature depth.

    Returns:
        Uncompressed tree. A node is reused exactly when its signature equals the new one, which
        under a shared parent means the states are identical.
    """
    if len(trajs) == 0:
        raise InputError("Cannot build a trajectory tree without trajectories")

    first_points = validate_trajectory(trajs[0][0])
    dimension = first_points.shape[1]
    initial_state = first_points[0].copy()
    signature_length(dimension, k)

    root = TreeNode(PathSignature.trivial(dimension, k).terms, 0)
    goal_ids: List[GoalId] = []
    for idx, (points, goal) in enumerate(trajs):
        points = validate_trajectory(points)
        if points.shape[1] != dimension:
            raise DimensionMismatchError(
                f"Trajectory {idx} has dimension {points.shape[1]}, expected {dimension}"
            )
        if not np.array_equal(points[0], initial_state):
            logger.warning(
                f"Trajectory {idx} starts at {points[0].tolist()}, "
                f"not at the shared initial state {initial_state.tolist()}"
            )
        if goal not in goal_ids:
            goal_ids.append(goal)

        node = root
        node.goal_labels.add(goal)
        for timestep, sig in enumerate(prefix_signatures(points, k)[1:], start=1):
            child = next((c for c in node.children if np.array_equal(c.value, sig.terms)), None)
            if child is None:
                child = TreeNode(sig.terms, timestep)
                node.children.append(child)
            child.goal_labels.add(goal)
            node = child
        node.terminal_goals[goal] += 1

    tree = TrajectoryTree(root, tuple(goal_ids), dimension, k, initial_state)
    logger.debug(f"Built {tree!r} from {len(trajs)} trajectories")
    return tree


def merge(tree: TrajectoryTree, eps_merge: float) -> TrajectoryTree:
    """Merge sibling nodes closer than `eps_merge` (squared distance, strict).

    Nodes are visited breadth-first. Siblings are scanned pairwise left to right; the right node of
    a qualifying pair is folded into the left one (mean value, union of labels, children appended)
    and the scan restarts. The input tree is not modified.
    """
    if eps_merge < 0:
        raise InputError(f"Merge threshold must be nonnegative, got {eps_merge}")

    tree = tree.copy()
    n_merged = 0
    queue = deque([tree.root])
    while queue:
        node = queue.popleft()
        n_merged += _merge_children(node, eps_merge)
        queue.extend(node.children)

    logger.debug(f"Merged {n_merged} node pairs with {eps_merge = }")
    return tree


def _merge_children(node: TreeNode, eps_merge: float) -> int:
    n_merged = 0
    merged = True
    while merged:
        merged = False
        for i, j in combinations(range(len(node.children)), 2):
            left, right = node.children[i], node.children[j]
            if squared_distance(left.value, right.value) < eps_merge:
                left.value = (left.value + right.value) / 2
                left.children.extend(right.children)
                left.goal_labels |= right.goal_labels
                left.terminal_goals.update(right.terminal_goals)
                del node.children[j]
                n_merged += 1
                merged = True
                break
    return n_merged


def prune(tree: TrajectoryTree, eps_prune: float) -> TrajectoryTree:
    """Delete nodes closer than `eps_prune` (squared distance, strict) to their parent.

    The parent adopts the children of a deleted node in its place and inherits its terminal goals.
    Applied top-down until no child qualifies. A terminal node directly under the root is kept, so
    the root never becomes the end of a branch. The input tree is not modified.
    """
    if eps_prune < 0:
        raise InputError(f"Prune threshold must be nonnegative, got {eps_prune}")

    tree = tree.copy()
    n_pruned = 0
    stack = [tree.root]
    while stack:
        node = stack.pop()
        n_pruned += _prune_children(node, eps_prune, is_root=node is tree.root)
        stack.extend(node.children)

    logger.debug(f"Pruned {n_pruned} nodes with {eps_prune = }")
    return tree


def _prune_children(node: TreeNode, eps_prune: float, is_root: bool) -> int:
    n_pruned = 0
    pruned = True
    while pruned:
        pruned = False
        for idx, child in enumerate(node.children):
            if is_root and (child.is_leaf or child.terminal_goals):
                continue
            if squared_distance(child.value, node.value) < eps_prune:
                node.children[idx : idx + 1] = child.children
                node.terminal_goals.update(child.terminal_goals)
                n_pruned += 1
                pruned = True
                break
    return n_pruned


def branches(tree: TrajectoryTree) -> List[Branch]:
    """All root-to-terminal paths, depth-first with child order preserved.

    A node ending trajectories of several goals yields one branch per goal, in tree goal order.
    """
    result = []
    path: List[TreeNode] = []
    stack = [(tree.root, 0)]
    while stack:
        node, level = stack.pop()
        del path[level:]
        path.append(node)
        if node.terminal_goals:
            values = np.stack([n.value for n in path])
            timesteps = np.array([n.timestep for n in path], dtype=np.int64)
            for goal in tree.terminal_order(node):
                result.append(Branch(values, timesteps, goal))
        stack.extend((child, level + 1) for child in reversed(node.children))
    return result


def goal_states_from_tree(tree: TrajectoryTree) -> Dict[GoalId, NDArray]:
    """Goal states as the initial state plus the total increment (level-1 terms) of each goal's
    first branch."""
    states: Dict[GoalId, NDArray] = {}
    for branch in branches(tree):
        increment = branch.nodes[-1, 1 : 1 + tree.dimension]
        states.setdefault(branch.goal, tree.initial_state + increment)
    return {goal: states[goal] for goal in tree.goal_ids if goal in states}


def validate(tree: TrajectoryTree, goals: Optional[Sequence[GoalId]] = None) -> TreeDiagnostics:
    """Report tree shape and violations of the one-leaf-per-goal floor.

    Violations:
        leaf_count_below_goals: fewer leaves than goals.
        multi_goal_leaf: a branch end shared by trajectories of different goals.
        goal_without_branch: a goal none of the branches ends in.
    """
    goals = list(tree.goal_ids if goals is None else goals)
    stats = tree.stats()
    diagnostics = TreeDiagnostics(stats.node_count, stats.leaf_count, stats.height, stats.widths)

    terminal_goals = set()
    multi_goal = False
    for node in tree.nodes():
        terminal_goals.update(node.terminal_goals)
        multi_goal |= len(node.terminal_goals) > 1

    if stats.leaf_count < len(goals):
        diagnostics.violations.append(LEAF_COUNT_BELOW_GOALS)
    if multi_goal:
        diagnostics.violations.append(MULTI_GOAL_LEAF)
    if any(goal not in terminal_goals for goal in goals):
        diagnostics.violations.append(GOAL_WITHOUT_BRANCH)

    if diagnostics.violations:
        logger.warning(
            f"Tree with {stats.leaf_count} leaves for {len(goals)} goals violates "
            f"{', '.join(diagnostics.violations)}"
        )
    return diagnostics


def build_trajectory_tree(
    trajs: Sequence[Tuple[ArrayLike, GoalId]],
    k: int,
    eps_merge: float = 0.0,
    eps_prune: float = 0.0,
    goals: Optional[Sequence[GoalId]] = None,
) -> Tuple[TrajectoryTree, TreeDiagnostics]:
    """Build, merge then prune. Prune compares parent and child timesteps, so it always runs last."""
    tree = build_tree(trajs, k)
    if eps_merge > 0:
        tree = merge(tree, eps_merge)
    if eps_prune > 0:
        tree = prune(tree, eps_prune)
    diagnostics = validate(tree, goals)
    logger.info(
        f"Trajectory tree ready: {diagnostics.node_count} nodes, {diagnostics.leaf_count} leaves, "
        f"height {diagnostics.height} ({eps_merge = }, {eps_prune = })"
    )
    return tree, diagnostics


def node_table(tree: TrajectoryTree) -> Dict[str, NDArray]:
    """Flatten the tree pre-order into parent indices, timesteps, values and JSON label arrays."""
    parents, timesteps, values, labels, terminals = [], [], [], [], []
    index: Dict[int, int] = {}
    stack: List[Tuple[TreeNode, int]] = [(tree.root, -1)]
    while stack:
        node, parent = stack.pop()
        index[id(node)] = len(parents)
        parents.append(parent)
        timesteps.append(node.timestep)
        values.append(node.value)
        labels.append(json.dumps(tree.goal_order(node.goal_labels)))
        terminals.append(json.dumps(tree.terminal_order(node)))
        stack.extend((child, index[id(node)]) for child in reversed(node.children))

    return {
        "parents": np.array(parents, dtype=np.int64),
        "timesteps": np.array(timesteps, dtype=np.int64),
        "values": np.stack(values),
        "goal_labels": np.array(labels),
        "terminal_goals": np.array(terminals),
    }


def save_tree(tree: TrajectoryTree, fp: Union[str, Path]):
    """Write the tree as a versioned `.npz` node table (see docs/FORMATS.md)."""
    table = node_table(tree)
    header = np.array(
        [TREE_FORMAT_VERSION, tree.dimension, tree.depth, len(table["parents"])], dtype=np.int64
    )
    if tree.source_state is not None:
        table["source_state"] = tree.source_state
    with open(fp, "wb") as f:
        np.savez(
            f,
            header=header,
            goal_ids=np.array(json.dumps(list(tree.goal_ids))),
            initial_state=tree.initial_state,
            **table,
        )
    logger.info(f"Saved tree with {header[3]} nodes to '{fp}'")


def load_tree(fp: Union[str, Path]) -> TrajectoryTree:
    try:
        with np.load(fp) as data:
            content = {key: data[key] for key in data.files}
    except (OSError, ValueError) as ex:
        raise InputError(f"Cannot read tree file '{fp}': {ex}") from ex

    missing = {"header", "parents", "timesteps", "values", "goal_labels", "terminal_goals"}
    missing -= set(content)
    if missing:
        raise InputError(f"Tree file '{fp}' lacks {sorted(missing)}")

    version, dimension, depth, node_count = (int(v) for v in content["header"])
    if version != TREE_FORMAT_VERSION:
        raise InputError(f"Unsupported tree format version {version} in '{fp}'")
    values = content["values"]
    if values.shape != (node_count, signature_length(dimension, depth)):
        raise InputError(
            f"Tree file '{fp}' holds values of shape {values.shape}, header declares "
            f"{node_count} nodes with d={dimension}, k={depth}"
        )

    nodes = [
        TreeNode(
            values[i].copy(),
            int(content["timesteps"][i]),
            goal_labels=set(json.loads(str(content["goal_labels"][i]))),
            terminal_goals=Counter(json.loads(str(content["terminal_goals"][i]))),
        )
        for i in range(node_count)
    ]
    for i, parent in enumerate(content["parents"]):
        if parent >= 0:
            nodes[parent].children.append(nodes[i])

    goal_ids = tuple(json.loads(str(content["goal_ids"])))
    source_state = content.get("source_state")
    tree = TrajectoryTree(
        nodes[0],
        goal_ids,
        dimension,
        depth,
        content["initial_state"].copy(),
        None if source_state is None else source_state.copy(),
    )
    logger.info(f"Loaded {tree!r} from '{fp}'")
    return tree


def _copy_node(node: TreeNode) -> TreeNode:
    return TreeNode(
        node.value.copy(),
        node.timestep,
        goal_labels=set(node.goal_labels),
        terminal_goals=Counter(node.terminal_goals),
    )
