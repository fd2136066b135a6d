# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Gridworld MDPs built from ASCII maps.

A map is plain text: '#' is a wall, '.' a free cell, one row per line::

    #####
    #...#
    #####

``parse_map()`` turns the text into an immutable ``GridMap``; ``MdpSpec``
holds everything else the MDP needs (slip probability, rewards, discount,
episode budget). Start and goal cells are runtime ``Task`` data, not map
characters, so one map serves every task sampled on it.

States are ``(row, col)`` tuples. Wherever arrays are indexed by state the
index is the position in ``GridMap.free_states`` (row-major order).
"""

import enum
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from optforge.api.exceptions import (
    RaggedRowsError,
    TooFewFreeCellsError,
    UnknownCharError,
)

logger = logging.getLogger(__name__)

State = Tuple[int, int]

WALL_CHAR = "#"
FREE_CHAR = "."

BUNDLED_MAPS_DIR = os.path.join(os.path.dirname(__file__), "maps")
BUNDLED_MAPS = ("fourroom", "tworoom", "hallway", "roundabout")


class Action(enum.IntEnum):
    """Primitive actions. The order is part of the file formats."""

    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def delta(self) -> Tuple[int, int]:
        return _DELTAS[self]


_DELTAS = {
    Action.N: (-1, 0),
    Action.E: (0, 1),
    Action.S: (1, 0),
    Action.W: (0, -1),
}

ACTIONS: Tuple[Action, ...] = tuple(Action)
N_ACTIONS = len(ACTIONS)


@dataclass(frozen=True)
class GridMap:
    """Parsed maze geometry.

    *All parameters named below are not just constructor arguments but also
    instance attributes.*

    Args:
        name: Identifier used in datasets and reports.
        width: Number of columns.
        height: Number of rows.
        walls: ``walls[r][c]`` is True for wall cells.
        free_states: Free cells in row-major order.
    """

    name: str
    width: int
    height: int
    walls: Tuple[Tuple[bool, ...], ...]
    free_states: Tuple[State, ...]
    _index: Dict[State, int] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        # frozen dataclass: the lookup table is filled in place
        self._index.update({s: i for i, s in enumerate(self.free_states)})

    @property
    def n_states(self) -> int:
        return len(self.free_states)

    def is_free(self, cell: State) -> bool:
        r, c = cell
        if not (0 <= r < self.height and 0 <= c < self.width):
            return False
        return not self.walls[r][c]

    def index(self, cell: State) -> int:
        """Row-major index of a free cell.

        Raises:
            KeyError: ``cell`` is not free.
        """
        return self._index[cell]

    def neighbor(self, cell: State, action: int) -> State:
        """Cell reached by a deterministic move: walls and the grid border
        leave ``cell`` unchanged."""
        dr, dc = Action(action).delta
        target = (cell[0] + dr, cell[1] + dc)
        return target if self.is_free(target) else cell

    def to_text(self) -> str:
        return "\n".join(
            "".join(WALL_CHAR if wall else FREE_CHAR for wall in row)
            for row in self.walls
        )


@dataclass(frozen=True)
class MdpSpec:
    """Transition, reward and discount semantics of a gridworld.

    Args:
        slip_prob: Probability that a uniformly random *other* action is
            executed instead of the intended one.
        goal_reward: Reward for the transition that enters the goal.
        step_reward: Reward for every other transition.
        discount: Discount factor, strictly between 0 and 1.
        max_episode_steps: Per-episode step budget enforced by ``GridEnv``.

    Raises:
        ValueError: Invalid arguments.
    """

    slip_prob: float = 0.0
    goal_reward: float = 1.0
    step_reward: float = 0.0
    discount: float = 0.99
    max_episode_steps: int = 200

    def __post_init__(self) -> None:
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError(
                f"slip_prob must be in [0, 1), got {self.slip_prob}"
            )
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must be in (0, 1), got {self.discount}")
        if self.max_episode_steps < 1:
            raise ValueError(
                f"max_episode_steps must be >= 1, got {self.max_episode_steps}"
            )


@dataclass(frozen=True)
class Task:
    """A start/goal pair on a named map."""

    start: State
    goal: State
    map_id: str

    def __post_init__(self) -> None:
        if self.start == self.goal:
            raise ValueError(
                f"start and goal must differ, both are {self.start}"
            )

    def validate(self, grid: GridMap) -> None:
        """Raises ValueError if start or goal is not a free cell of ``grid``."""
        for cell in (self.start, self.goal):
            if not grid.is_free(cell):
                raise ValueError(f"{cell} is not a free cell of {grid.name}")


def parse_map(text: str, name: str = "map") -> GridMap:
    """Parses ASCII map text into a ``GridMap``.

    A single trailing newline is optional; '\\r' line endings are accepted.

    Raises:
        UnknownCharError: Character other than '#', '.' or a newline.
        RaggedRowsError: Rows have unequal lengths.
        TooFewFreeCellsError: Fewer than two free cells.
    """
    rows = text.replace("\r\n", "\n").split("\n")
    if rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise TooFewFreeCellsError(f"map {name} is empty")

    for r, row in enumerate(rows):
        for c, char in enumerate(row):
            if char not in (WALL_CHAR, FREE_CHAR):
                raise UnknownCharError(
                    f"map {name}: unknown character {char!r} at ({r}, {c})"
                )

    width = len(rows[0])
    for r, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRowsError(
                f"map {name}: row {r} has length {len(row)}, expected {width}"
            )

    walls = tuple(tuple(char == WALL_CHAR for char in row) for row in rows)
    free_states = tuple(
        (r, c)
        for r in range(len(rows))
        for c in range(width)
        if not walls[r][c]
    )
    if len(free_states) < 2:
        raise TooFewFreeCellsError(
            f"map {name} has {len(free_states)} free cells, need at least 2"
        )

    return GridMap(name, width, len(rows), walls, free_states)


def load_map(path: str, name: Optional[str] = None) -> GridMap:
    """Reads and parses a UTF-8 map file. The map is named after the file
    unless ``name`` is given."""
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    with open(path, encoding="utf-8") as f:
        return parse_map(f.read(), name)


def load_bundled_map(name: str) -> GridMap:
    """Loads one of ``BUNDLED_MAPS`` by name."""
    if name not in BUNDLED_MAPS:
        raise ValueError(f"unknown bundled map {name}, have {BUNDLED_MAPS}")
    return load_map(os.path.join(BUNDLED_MAPS_DIR, f"{name}.map"), name)


def transition_distribution(
    grid: GridMap, spec: MdpSpec, state: State, action: int
) -> Dict[State, float]:
    """Exact next-state distribution of ``step()``, slip branch included."""
    dist: Dict[State, float] = {}
    intended = grid.neighbor(state, action)
    dist[intended] = 1.0 - spec.slip_prob
    if spec.slip_prob > 0.0:
        share = spec.slip_prob / (N_ACTIONS - 1)
        for other in ACTIONS:
            if other == action:
                continue
            target = grid.neighbor(state, other)
            dist[target] = dist.get(target, 0.0) + share

    return dist


def transition_tensor(grid: GridMap, spec: MdpSpec) -> np.ndarray:
    """Dense ``P[s, a, s']`` over free-state indices."""
    tensor = np.zeros((grid.n_states, N_ACTIONS, grid.n_states))
    for i, state in enumerate(grid.free_states):
        for a in ACTIONS:
            for target, prob in transition_distribution(
                grid, spec, state, a
            ).items():
                tensor[i, a, grid.index(target)] += prob

    return tensor


def step(
    grid: GridMap,
    spec: MdpSpec,
    state: State,
    action: int,
    rng: np.random.Generator,
    goal: Optional[State] = None,
) -> Tuple[State, float, bool]:
    """Samples one transition.

    With probability ``1 - slip_prob`` the intended move is attempted,
    otherwise a uniformly random other action. The rng is only consumed when
    ``slip_prob > 0``. The episode step budget is the caller's business
    (see ``GridEnv``).

    Returns:
        ``(next_state, reward, done)``; ``done`` is True iff ``next_state``
        is ``goal``.
    """
    if spec.slip_prob > 0.0 and rng.random() < spec.slip_prob:
        others = [a for a in ACTIONS if a != action]
        action = others[int(rng.integers(len(others)))]

    next_state = grid.neighbor(state, action)
    if goal is not None and next_state == goal:
        return next_state, spec.goal_reward, True

    return next_state, spec.step_reward, False


def sample_task(grid: GridMap, rng: np.random.Generator) -> Task:
    """Draws start and goal uniformly without replacement from the free
    cells."""
    start, goal = rng.choice(grid.n_states, size=2, replace=False)
    return Task(
        grid.free_states[int(start)], grid.free_states[int(goal)], grid.name
    )


def sample_start(
    grid: GridMap, goal: State, rng: np.random.Generator
) -> Task:
    """Draws a uniformly random start cell different from ``goal``."""
    candidates = [s for s in grid.free_states if s != goal]
    return Task(candidates[int(rng.integers(len(candidates)))], goal, grid.name)


class GridEnv:
    """A gridworld episode for one task, with the step budget enforced.

    Args:
        grid: The map.
        spec: MDP semantics; ``spec.max_episode_steps`` caps the episode.
        task: Start and goal; ``None`` runs a goal-less walk (never done
            except by budget).
    """

    def __init__(self, grid: GridMap, spec: MdpSpec, task: Optional[Task]):
        self.grid = grid
        self.spec = spec
        self.task = task
        self.state: State = (
            task.start if task is not None else grid.free_states[0]
        )
        self.steps = 0
        self.reached_goal = False

    @property
    def goal(self) -> Optional[State]:
        return self.task.goal if self.task is not None else None

    @property
    def done(self) -> bool:
        return self.reached_goal or self.steps >= self.spec.max_episode_steps

    @property
    def truncated(self) -> bool:
        """True if the episode ended by exhausting its step budget."""
        return (
            not self.reached_goal
            and self.steps >= self.spec.max_episode_steps
        )

    def reset(self, start: Optional[State] = None) -> State:
        if start is None:
            if self.task is None:
                raise ValueError("reset() needs a start state without a task")
            start = self.task.start
        self.state = start
        self.steps = 0
        self.reached_goal = False
        return start

    def step(
        self, action: int, rng: np.random.Generator
    ) -> Tuple[State, float, bool]:
        """Like ``step()``, but ``done`` is also True once the budget is
        exhausted.

        Raises:
            RuntimeError: The episode is already done.
        """
        if self.done:
            raise RuntimeError("step() called on a finished episode")

        self.state, reward, self.reached_goal = step(
            self.grid, self.spec, self.state, action, rng, self.goal
        )
        self.steps += 1
        return self.state, reward, self.done


def bfs_distances(grid: GridMap, target: State) -> Dict[State, int]:
    """Shortest deterministic-move distance from every cell that can reach
    ``target``. Moves are reversible, so the search runs from ``target``."""
    distances = {target: 0}
    queue = deque([target])
    while queue:
        cell = queue.popleft()
        for a in ACTIONS:
            nxt = grid.neighbor(cell, a)
            if nxt not in distances:
                distances[nxt] = distances[cell] + 1
                queue.append(nxt)

    return distances


def find_doorways(grid: GridMap) -> List[State]:
    """Free cells walled on both sides along one axis and open on both sides
    along the other: the bottlenecks between rooms."""

    def free(cell: State) -> bool:
        return grid.is_free(cell)

    doorways = []
    for r, c in grid.free_states:
        vertical_walls = not free((r - 1, c)) and not free((r + 1, c))
        horizontal_open = free((r, c - 1)) and free((r, c + 1))
        horizontal_walls = not free((r, c - 1)) and not free((r, c + 1))
        vertical_open = free((r - 1, c)) and free((r + 1, c))
        if (vertical_walls and horizontal_open) or (
            horizontal_walls and vertical_open
        ):
            doorways.append((r, c))

    return doorways


def render_text(
    grid: GridMap, marks: Optional[Dict[State, str]] = None
) -> str:
    """Map text with selected free cells replaced by single characters."""
    marks = marks or {}
    lines = []
    for r, row in enumerate(grid.walls):
        chars = []
        for c, wall in enumerate(row):
            chars.append(WALL_CHAR if wall else marks.get((r, c), FREE_CHAR))
        lines.append("".join(chars))
    return "\n".join(lines)


def states_to_indices(grid: GridMap, states: Sequence[State]) -> np.ndarray:
    return np.array([grid.index(s) for s in states], dtype=np.int64)
