#!/usr/bin/env python

# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Unit tests for 'optforge/smdp.py'."""

import logging
import sys
import unittest

import numpy as np

from optforge.api.exceptions import CorruptArtifactError
from optforge.expert import make_handcoded_option, value_iteration
from optforge.gridworld import (
    GridEnv,
    Task,
    bfs_distances,
    load_bundled_map,
)
from optforge.smdp import (
    PRIMITIVE_LABELS,
    OptionSet,
    Segment,
    SegmentedRollout,
    SmdpConfig,
    SmdpQTable,
    execute_option,
    rollout_meta,
    smdp_q_learning,
)
from tests import utils

logger = logging.getLogger(__name__)

OPEN_ROOM = "######\n#....#\n#....#\n######"


class TestOptionSet(unittest.TestCase):
    def test_choices(self) -> None:
        grid = utils.grid(utils.SMALL_ROOMS)
        option_set = OptionSet([make_handcoded_option(grid, (2, 4))])
        self.assertEqual(option_set.n_choices, 5)
        self.assertEqual(len(option_set), 1)
        self.assertEqual(option_set.labels, PRIMITIVE_LABELS + ("goto_2_4",))
        self.assertTrue(option_set.is_primitive(3))
        self.assertFalse(option_set.is_primitive(4))
        self.assertEqual(option_set.option(4).label, "goto_2_4")
        self.assertEqual(OptionSet().labels, ("N", "E", "S", "W"))

    def test_invalid_sets(self) -> None:
        grid = utils.grid(utils.SMALL_ROOMS)
        option = make_handcoded_option(grid, (2, 4))
        with self.assertRaises(ValueError):
            OptionSet([option, option])
        with self.assertRaises(ValueError):
            OptionSet([option], primitives_included=False)
        other = make_handcoded_option(utils.grid(utils.CORRIDOR), (1, 3))
        with self.assertRaises(ValueError):
            OptionSet([option, other])


class TestSmdpConfig(unittest.TestCase):
    def test_epsilon_schedule(self) -> None:
        config = SmdpConfig(episodes=100)
        self.assertEqual(config.epsilon(0), 1.0)
        self.assertAlmostEqual(config.epsilon(25), 0.525)
        self.assertEqual(config.epsilon(50), 0.05)
        self.assertEqual(config.epsilon(99), 0.05)

    invalid_configs: utils.DataSet = {
        "negative episodes": {"episodes": -1},
        "zero learning rate": {"learning_rate": 0.0},
        "epsilon above one": {"epsilon_start": 1.5},
        "zero decay fraction": {"epsilon_decay_fraction": 0.0},
        "zero option steps": {"option_max_steps": 0},
    }

    @utils.run_sub_tests_with_dataset(invalid_configs)
    def test_invalid_config(self, kwargs: dict) -> None:
        with self.assertRaises(ValueError):
            SmdpConfig(**kwargs)


class TestExecuteOption(unittest.TestCase):
    def setUp(self) -> None:
        self.grid = utils.grid(utils.SMALL_ROOMS)
        self.option = make_handcoded_option(self.grid, (2, 4))

    def test_runs_to_subgoal(self) -> None:
        env = GridEnv(
            self.grid, utils.deterministic_spec(), Task((1, 1), (3, 7), "t")
        )
        outcome = execute_option(env, self.option, utils.rng())
        self.assertEqual(outcome.next_state, (2, 4))
        distances = bfs_distances(self.grid, (2, 4))
        self.assertEqual(outcome.duration, distances[(1, 1)])
        self.assertEqual(outcome.states[0], (1, 1))
        self.assertEqual(outcome.states[-1], (2, 4))
        self.assertEqual(len(outcome.actions), outcome.duration)
        self.assertEqual(outcome.discounted_return, 0.0)
        self.assertFalse(outcome.reached_goal)

    def test_step_cap(self) -> None:
        env = GridEnv(
            self.grid, utils.deterministic_spec(), Task((1, 1), (3, 7), "t")
        )
        outcome = execute_option(env, self.option, utils.rng(), 2)
        self.assertEqual(outcome.duration, 2)
        self.assertEqual(outcome.next_state, (1, 3))

    def test_interrupted_by_goal(self) -> None:
        spec = utils.deterministic_spec(discount=0.9)
        env = GridEnv(self.grid, spec, Task((1, 1), (1, 3), "t"))
        outcome = execute_option(env, self.option, utils.rng())
        self.assertTrue(outcome.reached_goal)
        self.assertEqual(outcome.duration, 2)
        self.assertAlmostEqual(outcome.discounted_return, 0.9)


class TestQLearning(unittest.TestCase):
    def test_primitives_only_matches_shortest_paths(self) -> None:
        grid = utils.grid(OPEN_ROOM)
        goal = (2, 4)
        table = smdp_q_learning(
            grid,
            utils.deterministic_spec(),
            goal,
            OptionSet(),
            SmdpConfig(episodes=600),
            utils.rng(1),
        )
        distances = bfs_distances(grid, goal)
        for i, cell in enumerate(grid.free_states):
            if cell == goal:
                continue
            nxt = grid.neighbor(cell, table.greedy_choice(i))
            self.assertEqual(distances[nxt], distances[cell] - 1, cell)
        self.assertEqual(table.labels, PRIMITIVE_LABELS)
        self.assertTrue(np.all(table.visits >= 0))

    def test_primitives_only_agrees_with_value_iteration(self) -> None:
        grid = load_bundled_map("fourroom")
        spec = utils.deterministic_spec(max_episode_steps=200)
        goal = (9, 9)
        # uniform exploration with full backups converges to exact values
        config = SmdpConfig(
            episodes=800,
            learning_rate=1.0,
            epsilon_start=1.0,
            epsilon_end=1.0,
        )
        table = smdp_q_learning(
            grid, spec, goal, OptionSet(), config, utils.rng(4)
        )
        expert = value_iteration(grid, spec, goal)
        agreement = [
            expert.q[i, table.greedy_choice(i)] >= expert.q[i].max() - 1e-9
            for i, cell in enumerate(grid.free_states)
            if cell != goal
        ]
        self.assertGreaterEqual(np.mean(agreement), 0.99)

    def test_zero_episodes(self) -> None:
        grid = utils.grid(OPEN_ROOM)
        table = smdp_q_learning(
            grid,
            utils.deterministic_spec(),
            (2, 4),
            OptionSet(),
            SmdpConfig(episodes=0),
            utils.rng(),
        )
        self.assertFalse(np.any(table.q))
        self.assertFalse(np.any(table.visits))

    def test_meta_rollouts_with_options(self) -> None:
        grid = utils.grid(utils.SMALL_ROOMS)
        spec = utils.deterministic_spec()
        goal = (3, 7)
        option_set = OptionSet([make_handcoded_option(grid, (2, 4))])
        table = smdp_q_learning(
            grid,
            spec,
            goal,
            option_set,
            SmdpConfig(episodes=1500),
            utils.rng(2),
        )
        generator = utils.rng(3)
        starts = [s for s in grid.free_states if s != goal]
        successes = 0
        for start in starts:
            rollout = rollout_meta(
                grid, spec, table, option_set, Task(start, goal, grid.name),
                generator,
            )
            successes += rollout.success
            # segments tile the flat trace
            self.assertEqual(
                sum(seg.duration for seg in rollout.segments), rollout.length
            )
            starts_at = [seg.start for seg in rollout.segments]
            self.assertEqual(starts_at[0], 0)
            self.assertEqual(len(rollout.states), rollout.length + 1)
            self.assertEqual(len(rollout.annotations()), rollout.length)
        self.assertGreaterEqual(successes / len(starts), 0.9)

    def test_label_mismatch(self) -> None:
        grid = utils.grid(utils.SMALL_ROOMS)
        table = SmdpQTable.zeros(grid.n_states, OptionSet(), (3, 7), grid.name)
        option_set = OptionSet([make_handcoded_option(grid, (2, 4))])
        with self.assertRaises(ValueError):
            rollout_meta(
                grid,
                utils.deterministic_spec(),
                table,
                option_set,
                Task((1, 1), (3, 7), grid.name),
                utils.rng(),
            )


class TestQTable(unittest.TestCase):
    def test_greedy_ties_go_to_lowest_index(self) -> None:
        table = SmdpQTable.zeros(2, OptionSet(), (1, 1))
        self.assertEqual(table.greedy_choice(0), 0)
        table.q[1] = [0.0, 0.5, 0.5, 0.1]
        self.assertEqual(table.greedy_choice(1), 1)
        np.testing.assert_array_equal(table.values(), [0.0, 0.5])

    def test_bytes(self) -> None:
        table = SmdpQTable.zeros(3, OptionSet(), (1, 3), "corridor")
        table.q[:] = utils.rng().uniform(size=table.q.shape)
        table.visits[:] = 7
        self.assertEqual(SmdpQTable.from_bytes(table.to_bytes()), table)

    def test_invalid_tables(self) -> None:
        with self.assertRaises(ValueError):
            SmdpQTable(
                np.zeros((2, 4)), np.zeros((2, 5)), PRIMITIVE_LABELS, (1, 1)
            )
        with self.assertRaises(ValueError):
            SmdpQTable(
                np.full((2, 4), np.nan),
                np.zeros((2, 4)),
                PRIMITIVE_LABELS,
                (1, 1),
            )
        with self.assertRaises(CorruptArtifactError):
            SmdpQTable.from_bytes(b'{"_type": "smdp_q_table", "version": 1}')


class TestSegmentedRollout(unittest.TestCase):
    def setUp(self) -> None:
        # one 3-step option then two primitives
        self.rollout = SegmentedRollout(
            states=[(1, 1), (1, 2), (1, 3), (2, 3), (2, 4), (2, 5)],
            actions=[1, 1, 2, 1, 1],
            task=Task((1, 1), (2, 5), "rooms"),
            segments=[
                Segment(4, 0, 3, 0.0),
                Segment(1, 3, 1, 0.0),
                Segment(1, 4, 1, 1.0),
            ],
            success=True,
        )

    def test_annotations(self) -> None:
        self.assertEqual(self.rollout.option_steps, 3)
        self.assertEqual(
            self.rollout.annotations(),
            [(4, False), (4, False), (4, True), (1, True), (1, True)],
        )
        traj = self.rollout.to_trajectory(seed=9)
        self.assertFalse(traj.truncated)
        self.assertEqual(traj.seed, 9)
        self.assertEqual(traj.annotations, self.rollout.annotations())

    def test_dict(self) -> None:
        self.assertEqual(
            SegmentedRollout.from_dict(self.rollout.to_dict()), self.rollout
        )


# Run unit test.
if __name__ == "__main__":
    utils.configure_test_logging(sys.argv)
    unittest.main()
