# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Expert policies and trajectory datasets.

The flat expert is the greedy (or softmax) policy of a value-iteration
solution for one goal. ``sample_dataset()`` repeats "random task, solve,
roll out" to build a dataset of flat trajectories; value tables are cached
per goal since the solution does not depend on the start.

Options handed to an expert (or extracted from DDO parameters) are
``OptionDefinition`` objects: an action distribution and a termination
probability per free state.
"""

import logging
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax
from securesystemslib.storage import FilesystemBackend, StorageBackendInterface
from securesystemslib.util import persist_temp_file

from optforge import settings
from optforge.api.artifact import Artifact
from optforge.api.exceptions import NoConvergenceError, UnreachableRegionError
from optforge.api.serialization.json import (
    JSONLinesDeserializer,
    JSONLinesSerializer,
)
from optforge.gridworld import (
    ACTIONS,
    N_ACTIONS,
    GridMap,
    MdpSpec,
    State,
    Task,
    bfs_distances,
    sample_task,
    states_to_indices,
    step,
    transition_tensor,
)

logger = logging.getLogger(__name__)

# Per-step latent labels of a hierarchical trajectory: the choice index active
# at that step and whether the choice terminated after it.
Annotation = Tuple[int, bool]

EXPERT_KINDS = ("flat", "hierarchical")


@dataclass
class ExpertConfig:
    """Used to store expert dataset settings.

    Args:
        n_trajectories: Number of expert trajectories in the dataset.
        temperature: Softmax temperature over Q values; 0 selects the
            deterministic greedy expert.
        kind: "flat" (value iteration) or "hierarchical" (hand-coded
            subgoal options under an SMDP meta-policy).
        subgoals: Hand-coded option subgoals as "r,c;r,c"; empty selects the
            map's doorways.
        hierarchical_goals: Size of the goal pool a hierarchical expert
            draws its tasks from; each goal gets its own meta-policy.
        hierarchical_episodes: SMDP training episodes per pooled goal.
        vi_tolerance: Bellman residual at which value iteration stops.
        vi_max_iters: Value iteration sweep budget.

    Raises:
        ValueError: Invalid values.
    """

    n_trajectories: int = 200
    temperature: float = 0.0
    kind: str = "flat"
    subgoals: str = ""
    hierarchical_goals: int = 4
    hierarchical_episodes: int = 500
    vi_tolerance: float = 1e-10
    vi_max_iters: int = 10000

    def __post_init__(self) -> None:
        if self.kind not in EXPERT_KINDS:
            raise ValueError(f"kind must be one of {EXPERT_KINDS}")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.hierarchical_goals < 1 or self.hierarchical_episodes < 1:
            raise ValueError("hierarchical goal pool and episodes must be >= 1")


class ValueTable(Artifact):
    """Optimal values for one goal.

    *All parameters named below are not just constructor arguments but also
    instance attributes.*

    Args:
        map_id: Name of the map the table was solved on.
        goal: The absorbing goal cell.
        v: State values, indexed like ``GridMap.free_states``.
        q: Action values, shape ``(n_states, 4)``.
        residual: Bellman residual of the final sweep.
    """

    type = "value_table"

    def __init__(
        self,
        map_id: str,
        goal: State,
        v: np.ndarray,
        q: np.ndarray,
        residual: float,
    ):
        if q.shape != (v.shape[0], N_ACTIONS):
            raise ValueError(f"q has shape {q.shape}, v has {v.shape}")
        self.map_id = map_id
        self.goal = goal
        self.v = v
        self.q = q
        self.residual = residual

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, ValueTable):
            return False

        return (
            self.map_id == other.map_id
            and self.goal == other.goal
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.q, other.q)
            and self.residual == other.residual
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self._common_fields_to_dict(),
            "map_id": self.map_id,
            "goal": list(self.goal),
            "v": self.v.tolist(),
            "q": self.q.tolist(),
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, artifact_dict: Dict[str, Any]) -> "ValueTable":
        cls._check_common_fields(artifact_dict)
        goal = artifact_dict["goal"]
        return cls(
            artifact_dict["map_id"],
            (int(goal[0]), int(goal[1])),
            np.array(artifact_dict["v"], dtype=float),
            np.array(artifact_dict["q"], dtype=float),
            float(artifact_dict["residual"]),
        )


@dataclass(eq=False)
class OptionDefinition:
    """An executable option: per-state action distribution and termination
    probability, both indexed like ``GridMap.free_states``.

    Args:
        label: Unique name within an option set.
        policy: Shape ``(n_states, 4)``; each row sums to one.
        termination: Shape ``(n_states,)``; values in [0, 1].
        unreachable: Cells where the policy is a uniform fallback because the
            option's subgoal cannot be reached from them.

    Raises:
        ValueError: Invalid distributions.
    """

    label: str
    policy: np.ndarray
    termination: np.ndarray
    unreachable: Tuple[State, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.policy.ndim != 2 or self.policy.shape[1] != N_ACTIONS:
            raise ValueError(f"policy has shape {self.policy.shape}")
        if self.termination.shape != (self.policy.shape[0],):
            raise ValueError(
                f"termination has shape {self.termination.shape}, expected "
                f"({self.policy.shape[0]},)"
            )
        row_sums = self.policy.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > settings.DISTRIBUTION_TOLERANCE):
            raise ValueError(f"option {self.label}: policy rows must sum to 1")
        if np.any(self.termination < 0.0) or np.any(self.termination > 1.0):
            raise ValueError(f"option {self.label}: termination outside [0, 1]")

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, OptionDefinition):
            return False

        return (
            self.label == other.label
            and np.array_equal(self.policy, other.policy)
            and np.array_equal(self.termination, other.termination)
            and self.unreachable == other.unreachable
        )


@dataclass
class Trajectory:
    """A flat observed trajectory ``s_0, a_0, s_1, ..., s_T``.

    Args:
        states: ``T + 1`` free cells.
        actions: ``T`` action indices (N=0, E=1, S=2, W=3).
        task: Start, goal and map of the episode.
        seed: Seed of the rng stream that produced the trajectory.
        truncated: True if the rollout hit its step cap before the goal.
        annotations: Optional per-step ``(choice, terminated)`` labels from a
            hierarchical expert.

    Raises:
        ValueError: Inconsistent lengths or an empty trajectory.
    """

    states: List[State]
    actions: List[int]
    task: Task
    seed: int
    truncated: bool = False
    annotations: Optional[List[Annotation]] = None

    def __post_init__(self) -> None:
        if len(self.actions) < 1:
            raise ValueError("a trajectory needs at least one action")
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(
                f"{len(self.states)} states for {len(self.actions)} actions"
            )
        if self.annotations is not None and len(self.annotations) != len(
            self.actions
        ):
            raise ValueError("annotations must label every step")

    @property
    def length(self) -> int:
        """Number of transitions T."""
        return len(self.actions)

    def state_indices(self, grid: GridMap) -> np.ndarray:
        return states_to_indices(grid, self.states)

    def to_dict(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "map_id": self.task.map_id,
            "seed": self.seed,
            "start": list(self.task.start),
            "goal": list(self.task.goal),
            "states": [list(s) for s in self.states],
            "actions": list(self.actions),
            "truncated": self.truncated,
        }
        if self.annotations is not None:
            record["annotations"] = [
                [choice, terminated] for choice, terminated in self.annotations
            ]
        return record

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "Trajectory":
        """Creates ``Trajectory`` from its JSON Lines record.

        Raises:
            KeyError, TypeError, ValueError: Invalid record.
        """
        annotations = record.get("annotations")
        return cls(
            states=[(int(r), int(c)) for r, c in record["states"]],
            actions=[int(a) for a in record["actions"]],
            task=Task(
                (int(record["start"][0]), int(record["start"][1])),
                (int(record["goal"][0]), int(record["goal"][1])),
                record["map_id"],
            ),
            seed=int(record["seed"]),
            truncated=bool(record.get("truncated", False)),
            annotations=None
            if annotations is None
            else [(int(c), bool(t)) for c, t in annotations],
        )


def value_iteration(
    grid: GridMap,
    spec: MdpSpec,
    goal: State,
    tol: float = 1e-10,
    max_iters: int = 10000,
) -> ValueTable:
    """Synchronous value iteration from ``V = 0`` for one goal.

    The goal is absorbing with value 0 once its reward has been collected.

    Raises:
        ValueError: ``goal`` is not free or ``tol`` is not positive.
        NoConvergenceError: ``max_iters`` sweeps left the residual >= tol.
    """
    if not grid.is_free(goal):
        raise ValueError(f"goal {goal} is not a free cell")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")

    goal_idx = grid.index(goal)
    tensor = transition_tensor(grid, spec)
    rewards_to = np.full(grid.n_states, spec.step_reward)
    rewards_to[goal_idx] = spec.goal_reward
    expected_reward = tensor @ rewards_to
    continues = np.ones(grid.n_states)
    continues[goal_idx] = 0.0

    v = np.zeros(grid.n_states)
    residual = np.inf
    for sweep in range(1, max_iters + 1):
        q = expected_reward + spec.discount * (tensor @ (v * continues))
        q[goal_idx, :] = 0.0
        v_new = q.max(axis=1)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < tol:
            logger.debug(
                "Value iteration for goal %s converged after %d sweeps",
                goal,
                sweep,
            )
            return ValueTable(grid.name, goal, v, q, residual)

    raise NoConvergenceError(
        f"value iteration for goal {goal} did not converge in {max_iters} "
        f"sweeps (residual {residual})",
        residual,
    )


def greedy_policy(values: ValueTable) -> np.ndarray:
    """One-hot argmax policy; ties go to the lowest action index."""
    policy = np.zeros_like(values.q)
    policy[np.arange(values.q.shape[0]), np.argmax(values.q, axis=1)] = 1.0
    return policy


def softmax_policy(values: ValueTable, temperature: float) -> np.ndarray:
    """``softmax(Q / temperature)`` per state; temperature 0 is greedy."""
    if temperature <= 0.0:
        return greedy_policy(values)
    return softmax(values.q / temperature, axis=1)


def rollout_flat(
    grid: GridMap,
    spec: MdpSpec,
    task: Task,
    policy: np.ndarray,
    rng: np.random.Generator,
    max_steps: int,
    seed: int = 0,
) -> Trajectory:
    """Runs ``policy`` from ``task.start`` until the goal or ``max_steps``.

    Args:
        policy: Shape ``(n_states, 4)`` action distributions.
        seed: Recorded on the trajectory; the caller derived ``rng`` from it.
    """
    states = [task.start]
    actions: List[int] = []
    state = task.start
    for _ in range(max_steps):
        action = int(rng.choice(N_ACTIONS, p=policy[grid.index(state)]))
        state, _, done = step(grid, spec, state, action, rng, task.goal)
        actions.append(action)
        states.append(state)
        if done:
            return Trajectory(states, actions, task, seed)

    logger.warning(
        "Rollout from %s to %s truncated after %d steps",
        task.start,
        task.goal,
        max_steps,
    )
    return Trajectory(states, actions, task, seed, truncated=True)


def make_handcoded_option(
    grid: GridMap, subgoal: State, strict: bool = False
) -> OptionDefinition:
    """Shortest-path option to ``subgoal``.

    The policy is one-hot on the lowest-index action that decreases the BFS
    distance; termination is 1 at the subgoal and 0 elsewhere. Cells that
    cannot reach the subgoal get a uniform policy and are listed in
    ``OptionDefinition.unreachable``.

    Raises:
        ValueError: ``subgoal`` is not free.
        UnreachableRegionError: ``strict`` and some cell is unreachable.
    """
    if not grid.is_free(subgoal):
        raise ValueError(f"subgoal {subgoal} is not a free cell")

    distances = bfs_distances(grid, subgoal)
    policy = np.zeros((grid.n_states, N_ACTIONS))
    termination = np.zeros(grid.n_states)
    unreachable = []
    for i, cell in enumerate(grid.free_states):
        if cell == subgoal:
            policy[i, :] = 1.0 / N_ACTIONS
            termination[i] = 1.0
            continue
        if cell not in distances:
            unreachable.append(cell)
            policy[i, :] = 1.0 / N_ACTIONS
            continue
        for a in ACTIONS:
            if distances.get(grid.neighbor(cell, a)) == distances[cell] - 1:
                policy[i, a] = 1.0
                break

    if unreachable:
        if strict:
            raise UnreachableRegionError(
                f"{len(unreachable)} cells cannot reach subgoal {subgoal}"
            )
        logger.warning(
            "Option to %s is undefined on %d unreachable cells",
            subgoal,
            len(unreachable),
        )

    label = f"goto_{subgoal[0]}_{subgoal[1]}"
    return OptionDefinition(label, policy, termination, tuple(unreachable))


def sample_dataset(
    grid: GridMap,
    spec: MdpSpec,
    config: ExpertConfig,
    rng: np.random.Generator,
) -> List[Trajectory]:
    """Builds a flat expert dataset: per trajectory a random task, the
    value-iteration expert for its goal and one rollout."""
    cache: Dict[State, ValueTable] = {}
    dataset = []
    for _ in range(config.n_trajectories):
        seed = int(rng.integers(2**31))
        traj_rng = np.random.default_rng(seed)
        task = sample_task(grid, traj_rng)
        if task.goal not in cache:
            cache[task.goal] = value_iteration(
                grid, spec, task.goal, config.vi_tolerance, config.vi_max_iters
            )
        policy = softmax_policy(cache[task.goal], config.temperature)
        dataset.append(
            rollout_flat(
                grid,
                spec,
                task,
                policy,
                traj_rng,
                spec.max_episode_steps,
                seed,
            )
        )

    logger.info(
        "Sampled %d expert trajectories on %s (%d distinct goals)",
        len(dataset),
        grid.name,
        len(cache),
    )
    return dataset


def save_trajectories(
    trajectories: List[Trajectory],
    filename: str,
    storage_backend: Optional[StorageBackendInterface] = None,
) -> None:
    """Writes a dataset as JSON Lines, one trajectory per line. The write is
    atomic.

    Raises:
        optforge.api.exceptions.SerializationError: A trajectory cannot be
            serialized.
        optforge.api.exceptions.StorageError: The file cannot be written.
    """
    data = JSONLinesSerializer().serialize(trajectories)
    with tempfile.TemporaryFile() as temp_file:
        temp_file.write(data)
        persist_temp_file(temp_file, filename, storage_backend)


def load_trajectories(
    filename: str,
    storage_backend: Optional[StorageBackendInterface] = None,
) -> List[Trajectory]:
    """Raises:
    optforge.api.exceptions.StorageError: The file cannot be read.
    optforge.api.exceptions.CorruptArtifactError: A line is not a valid
        trajectory record.
    """
    if storage_backend is None:
        storage_backend = FilesystemBackend()

    with storage_backend.get(filename) as file_obj:
        return JSONLinesDeserializer().deserialize(
            file_obj.read(), Trajectory.from_dict
        )
