# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Policy maps as text or SVG.

ASCII output has one character per cell: ``#`` for walls, ``G`` for the
goal, and otherwise the arrow of the most likely action (``^ > v <``, ties to
the lowest action index). SVG output draws one arrow per action with length
proportional to its probability and shades each cell by its termination
probability.
"""

import xml.etree.ElementTree as ET
from typing import Optional

import numpy as np

from optforge.gridworld import N_ACTIONS, Action, GridMap, State, render_text

ASCII = "ascii"
SVG = "svg"
FORMATS = (ASCII, SVG)

ARROWS = "^>v<"
GOAL_CHAR = "G"

_CELL = 32  # px
_MIN_DRAWN_PROB = 0.01


def _check_policy(grid: GridMap, policy: np.ndarray) -> None:
    if policy.shape != (grid.n_states, N_ACTIONS):
        raise ValueError(
            f"policy has shape {policy.shape}, expected "
            f"{(grid.n_states, N_ACTIONS)}"
        )


def render_ascii(
    grid: GridMap, policy: np.ndarray, goal: Optional[State] = None
) -> str:
    _check_policy(grid, policy)
    best = np.argmax(policy, axis=1)
    marks = {cell: ARROWS[best[i]] for i, cell in enumerate(grid.free_states)}
    if goal is not None:
        marks[goal] = GOAL_CHAR
    return render_text(grid, marks)


def render_svg(
    grid: GridMap,
    policy: np.ndarray,
    termination: Optional[np.ndarray] = None,
    goal: Optional[State] = None,
) -> str:
    _check_policy(grid, policy)
    root = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(grid.width * _CELL),
        height=str(grid.height * _CELL),
        viewBox=f"0 0 {grid.width * _CELL} {grid.height * _CELL}",
    )
    for r, row in enumerate(grid.walls):
        for c, wall in enumerate(row):
            fill = "#222222"
            if not wall:
                shade = 0.0
                if termination is not None:
                    shade = float(termination[grid.index((r, c))])
                level = int(round(255 * (1.0 - 0.6 * shade)))
                fill = f"#{level:02x}{level:02x}ff"
            if goal == (r, c):
                fill = "#66cc66"
            ET.SubElement(
                root,
                "rect",
                x=str(c * _CELL),
                y=str(r * _CELL),
                width=str(_CELL),
                height=str(_CELL),
                fill=fill,
                stroke="#999999",
            )

    half = _CELL / 2
    for i, (r, c) in enumerate(grid.free_states):
        if goal == (r, c):
            continue
        cx, cy = c * _CELL + half, r * _CELL + half
        for a in Action:
            prob = float(policy[i, a])
            if prob < _MIN_DRAWN_PROB:
                continue
            dr, dc = a.delta
            ET.SubElement(
                root,
                "line",
                x1=f"{cx:g}",
                y1=f"{cy:g}",
                x2=f"{cx + dc * prob * half * 0.9:g}",
                y2=f"{cy + dr * prob * half * 0.9:g}",
                stroke="#000000",
            )
            ET.SubElement(
                root,
                "circle",
                cx=f"{cx + dc * prob * half * 0.9:g}",
                cy=f"{cy + dr * prob * half * 0.9:g}",
                r="1.5",
            )

    return ET.tostring(root, encoding="unicode")


def render_policy(
    grid: GridMap,
    policy: np.ndarray,
    fmt: str = ASCII,
    termination: Optional[np.ndarray] = None,
    goal: Optional[State] = None,
) -> str:
    """Renders a per-state action distribution (an expert policy or an
    option policy) in ``fmt``.

    Raises:
        ValueError: Unknown format or a policy not defined on every free
            state.
    """
    if fmt == ASCII:
        return render_ascii(grid, policy, goal)
    if fmt == SVG:
        return render_svg(grid, policy, termination, goal)
    raise ValueError(f"format must be one of {FORMATS}, got {fmt}")
