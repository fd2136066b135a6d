# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Options as temporally extended actions and a tabular SMDP meta-policy.

A *choice* is either one of the four primitive actions (indices 0-3) or one
of the options of an ``OptionSet`` (indices 4 and up, in option-set order).
``smdp_q_learning()`` learns ``Q(s, choice)`` for a single goal with the
update::

    Q(s, c) += lr * (R + gamma**t' * max_c' Q(s', c') - Q(s, c))

where ``R`` is the discounted reward collected while ``c`` ran for ``t'``
flat steps. The bootstrap term is dropped once the goal is reached.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from optforge import settings
from optforge.api.artifact import Artifact
from optforge.expert import Annotation, OptionDefinition, Trajectory
from optforge.gridworld import (
    ACTIONS,
    N_ACTIONS,
    GridEnv,
    GridMap,
    MdpSpec,
    State,
    Task,
    sample_start,
)

logger = logging.getLogger(__name__)

PRIMITIVE_LABELS = tuple(a.name for a in ACTIONS)


@dataclass
class OptionSet:
    """Options available to the meta-policy next to the primitives.

    Args:
        options: Executable options; their order fixes the choice indices.
        primitives_included: Always True; primitives occupy choices 0-3.

    Raises:
        ValueError: Duplicate labels or options over different state sets.
    """

    options: List[OptionDefinition] = field(default_factory=list)
    primitives_included: bool = True

    def __post_init__(self) -> None:
        if not self.primitives_included:
            raise ValueError("option sets always include the primitives")
        labels = [o.label for o in self.options]
        if len(set(labels)) != len(labels):
            raise ValueError(f"option labels must be unique: {labels}")
        if len({o.policy.shape[0] for o in self.options}) > 1:
            raise ValueError("options are defined over different state sets")

    def __len__(self) -> int:
        return len(self.options)

    @property
    def n_choices(self) -> int:
        return N_ACTIONS + len(self.options)

    @property
    def labels(self) -> Tuple[str, ...]:
        return PRIMITIVE_LABELS + tuple(o.label for o in self.options)

    @staticmethod
    def is_primitive(choice: int) -> bool:
        return choice < N_ACTIONS

    def option(self, choice: int) -> OptionDefinition:
        return self.options[choice - N_ACTIONS]


@dataclass
class SmdpConfig:
    """Used to store SMDP Q-learning settings.

    Args:
        episodes: Training episodes, each from a random start to the goal.
        learning_rate: Tabular step size.
        epsilon_start: Exploration rate of the first episode.
        epsilon_end: Exploration rate once the decay is over.
        epsilon_decay_fraction: Share of the episodes over which epsilon
            decays linearly.
        option_max_steps: Cap on the flat steps of one option execution.
        eval_epsilon: Exploration rate of non-greedy evaluation rollouts.
    """

    episodes: int = 2000
    learning_rate: float = 0.5
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    option_max_steps: int = settings.DEFAULT_OPTION_MAX_STEPS
    eval_epsilon: float = 0.05

    def __post_init__(self) -> None:
        if self.episodes < 0:
            raise ValueError(f"episodes must be >= 0, got {self.episodes}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(
                f"learning_rate must be in (0, 1], got {self.learning_rate}"
            )
        for name in ("epsilon_start", "epsilon_end", "eval_epsilon"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0.0 < self.epsilon_decay_fraction <= 1.0:
            raise ValueError("epsilon_decay_fraction must be in (0, 1]")
        if self.option_max_steps < 1:
            raise ValueError("option_max_steps must be >= 1")

    def epsilon(self, episode: int) -> float:
        """Linear decay from ``epsilon_start`` to ``epsilon_end``."""
        decay_episodes = self.epsilon_decay_fraction * self.episodes
        if decay_episodes <= 0 or episode >= decay_episodes:
            return self.epsilon_end
        frac = episode / decay_episodes
        span = self.epsilon_end - self.epsilon_start
        return self.epsilon_start + frac * span


class SmdpQTable(Artifact):
    """Meta-policy values over primitives and options for one goal.

    *All parameters named below are not just constructor arguments but also
    instance attributes.*

    Args:
        q: Shape ``(n_states, n_choices)``.
        visits: Update counts, same shape as ``q``.
        labels: Choice labels, primitives first.
        goal: Goal the table was trained for.
        map_id: Name of the map.
    """

    type = "smdp_q_table"

    def __init__(
        self,
        q: np.ndarray,
        visits: np.ndarray,
        labels: Sequence[str],
        goal: State,
        map_id: str = "",
    ):
        if q.shape != visits.shape or q.shape[1] != len(labels):
            raise ValueError(
                f"q {q.shape}, visits {visits.shape} and {len(labels)} labels "
                "do not match"
            )
        if not np.all(np.isfinite(q)):
            raise ValueError("Q values must be finite")
        self.q = q
        self.visits = visits
        self.labels = tuple(labels)
        self.goal = goal
        self.map_id = map_id

    @classmethod
    def zeros(
        cls, n_states: int, option_set: OptionSet, goal: State, map_id: str = ""
    ) -> "SmdpQTable":
        shape = (n_states, option_set.n_choices)
        return cls(
            np.zeros(shape),
            np.zeros(shape, dtype=np.int64),
            option_set.labels,
            goal,
            map_id,
        )

    def values(self) -> np.ndarray:
        """``V(s) = max_c Q(s, c)``."""
        return self.q.max(axis=1)

    def greedy_choice(self, state_idx: int) -> int:
        """Argmax choice; ties go to the lowest index."""
        return int(np.argmax(self.q[state_idx]))

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, SmdpQTable):
            return False

        return (
            np.array_equal(self.q, other.q)
            and np.array_equal(self.visits, other.visits)
            and self.labels == other.labels
            and self.goal == other.goal
            and self.map_id == other.map_id
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self._common_fields_to_dict(),
            "map_id": self.map_id,
            "goal": list(self.goal),
            "labels": list(self.labels),
            "q": self.q.tolist(),
            "visits": self.visits.tolist(),
        }

    @classmethod
    def from_dict(cls, artifact_dict: Dict[str, Any]) -> "SmdpQTable":
        cls._check_common_fields(artifact_dict)
        goal = artifact_dict["goal"]
        return cls(
            np.array(artifact_dict["q"], dtype=float),
            np.array(artifact_dict["visits"], dtype=np.int64),
            artifact_dict["labels"],
            (int(goal[0]), int(goal[1])),
            artifact_dict["map_id"],
        )


@dataclass(frozen=True)
class Segment:
    """One completed choice within a rollout.

    Args:
        choice: Choice index.
        start: Index of the first flat step the choice took.
        duration: Flat steps taken, ``t' >= 1``.
        discounted_return: ``sum_k gamma**k * r_{start+k}``.
    """

    choice: int
    start: int
    duration: int
    discounted_return: float


@dataclass(frozen=True)
class OptionOutcome:
    """Result of running one choice from the current env state."""

    next_state: State
    discounted_return: float
    duration: int
    states: List[State]
    actions: List[int]
    reached_goal: bool


@dataclass
class SegmentedRollout:
    """A meta-policy rollout: the flat trace plus its choice segments.

    Args:
        states: ``T + 1`` cells.
        actions: ``T`` action indices.
        task: The episode's task.
        segments: Choice segments tiling the ``T`` steps.
        success: True if the goal was reached within the episode budget.
        n_primitives: Choices below this index are primitives.
    """

    states: List[State]
    actions: List[int]
    task: Task
    segments: List[Segment]
    success: bool
    n_primitives: int = N_ACTIONS

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def option_steps(self) -> int:
        return sum(
            seg.duration
            for seg in self.segments
            if seg.choice >= self.n_primitives
        )

    def annotations(self) -> List[Annotation]:
        labels: List[Annotation] = []
        for seg in self.segments:
            for k in range(seg.duration):
                labels.append((seg.choice, k == seg.duration - 1))
        return labels

    def to_trajectory(self, seed: int = 0) -> Trajectory:
        """The flat trace with per-step ``(choice, terminated)``
        annotations."""
        return Trajectory(
            list(self.states),
            list(self.actions),
            self.task,
            seed,
            truncated=not self.success,
            annotations=self.annotations(),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "map_id": self.task.map_id,
            "start": list(self.task.start),
            "goal": list(self.task.goal),
            "states": [list(s) for s in self.states],
            "actions": list(self.actions),
            "segments": [
                [s.choice, s.start, s.duration, s.discounted_return]
                for s in self.segments
            ],
            "success": self.success,
            "n_primitives": self.n_primitives,
        }

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "SegmentedRollout":
        return cls(
            states=[(int(r), int(c)) for r, c in record["states"]],
            actions=[int(a) for a in record["actions"]],
            task=Task(
                (int(record["start"][0]), int(record["start"][1])),
                (int(record["goal"][0]), int(record["goal"][1])),
                record["map_id"],
            ),
            segments=[
                Segment(int(c), int(s), int(d), float(r))
                for c, s, d, r in record["segments"]
            ],
            success=bool(record["success"]),
            n_primitives=int(record.get("n_primitives", N_ACTIONS)),
        )


def execute_option(
    env: GridEnv,
    option: OptionDefinition,
    rng: np.random.Generator,
    option_max_steps: int = settings.DEFAULT_OPTION_MAX_STEPS,
) -> OptionOutcome:
    """Runs ``option`` from ``env.state``.

    Each flat step samples an action from the option policy, steps the env
    and then samples termination with probability ``termination(s')``. The
    option also stops when the episode ends or after ``option_max_steps``
    steps. An option interrupted by the episode end still reports what it
    collected.
    """
    gamma = env.spec.discount
    states = [env.state]
    actions: List[int] = []
    ret = 0.0
    done = False
    for k in range(option_max_steps):
        action = int(
            rng.choice(N_ACTIONS, p=option.policy[env.grid.index(env.state)])
        )
        next_state, reward, done = env.step(action, rng)
        ret += gamma**k * reward
        actions.append(action)
        states.append(next_state)
        if done:
            break
        if rng.random() < option.termination[env.grid.index(next_state)]:
            break

    return OptionOutcome(
        next_state=env.state,
        discounted_return=ret,
        duration=len(actions),
        states=states,
        actions=actions,
        reached_goal=env.reached_goal,
    )


def _run_choice(
    env: GridEnv,
    option_set: OptionSet,
    choice: int,
    rng: np.random.Generator,
    option_max_steps: int,
) -> OptionOutcome:
    if option_set.is_primitive(choice):
        start = env.state
        next_state, reward, _ = env.step(choice, rng)
        return OptionOutcome(
            next_state,
            reward,
            1,
            [start, next_state],
            [choice],
            env.reached_goal,
        )
    return execute_option(env, option_set.option(choice), rng, option_max_steps)


def _select_choice(
    q: SmdpQTable, state_idx: int, epsilon: float, rng: np.random.Generator
) -> int:
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.q.shape[1]))
    return q.greedy_choice(state_idx)


def smdp_q_learning(
    grid: GridMap,
    spec: MdpSpec,
    goal: State,
    option_set: OptionSet,
    config: SmdpConfig,
    rng: np.random.Generator,
) -> SmdpQTable:
    """Learns a meta-policy for ``goal`` from random starts with
    epsilon-greedy SMDP Q-learning."""
    table = SmdpQTable.zeros(grid.n_states, option_set, goal, grid.name)
    successes = 0
    for episode in range(config.episodes):
        epsilon = config.epsilon(episode)
        env = GridEnv(grid, spec, sample_start(grid, goal, rng))
        while not env.done:
            s = grid.index(env.state)
            choice = _select_choice(table, s, epsilon, rng)
            outcome = _run_choice(
                env, option_set, choice, rng, config.option_max_steps
            )
            target = outcome.discounted_return
            if not outcome.reached_goal:
                target += spec.discount**outcome.duration * float(
                    table.q[grid.index(outcome.next_state)].max()
                )
            table.q[s, choice] += config.learning_rate * (
                target - table.q[s, choice]
            )
            table.visits[s, choice] += 1

        successes += int(env.reached_goal)
        if (episode + 1) % 500 == 0:
            logger.debug(
                "SMDP episode %d/%d: epsilon %.3f, %d successes so far",
                episode + 1,
                config.episodes,
                epsilon,
                successes,
            )

    logger.info(
        "SMDP Q-learning for goal %s: %d episodes, %d reached the goal",
        goal,
        config.episodes,
        successes,
    )
    return table


def rollout_meta(
    grid: GridMap,
    spec: MdpSpec,
    table: SmdpQTable,
    option_set: OptionSet,
    task: Task,
    rng: np.random.Generator,
    greedy: bool = True,
    epsilon: float = 0.05,
    option_max_steps: int = settings.DEFAULT_OPTION_MAX_STEPS,
) -> SegmentedRollout:
    """Runs the meta-policy of ``table`` on ``task`` and records segments.

    Raises:
        ValueError: ``table`` and ``option_set`` disagree on the choices.
    """
    if table.labels != option_set.labels:
        raise ValueError(
            f"Q table choices {table.labels} do not match the option set "
            f"{option_set.labels}"
        )

    env = GridEnv(grid, spec, task)
    states = [task.start]
    actions: List[int] = []
    segments: List[Segment] = []
    while not env.done:
        choice = _select_choice(
            table, grid.index(env.state), 0.0 if greedy else epsilon, rng
        )
        outcome = _run_choice(env, option_set, choice, rng, option_max_steps)
        segments.append(
            Segment(
                choice,
                len(actions),
                outcome.duration,
                outcome.discounted_return,
            )
        )
        actions.extend(outcome.actions)
        states.extend(outcome.states[1:])

    return SegmentedRollout(states, actions, task, segments, env.reached_goal)

