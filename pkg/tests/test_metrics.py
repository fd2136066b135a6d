#!/usr/bin/env python

# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Unit tests for 'optforge/metrics.py'."""

import logging
import math
import sys
import unittest
from typing import Dict, List, Optional

import numpy as np

from optforge.api.exceptions import (
    DisconnectedError,
    EmptyInputError,
    MismatchedDomainsError,
    UndefinedStateError,
)
from optforge.ddo import DdoParams, extract_options, scale_termination
from optforge.expert import OptionDefinition, value_iteration
from optforge.gridworld import Task
from optforge.metrics import (
    EXACT_PRIMITIVES,
    MONTE_CARLO,
    MetricReport,
    build_report,
    cross_entropy_metric,
    diffusion_time,
    empirical_action_distribution,
    format_csv,
    format_text_table,
    hinge_value_loss,
    metric_tables,
    termination_stats,
    usage_stats,
    visitation_counts,
)
from optforge.smdp import (
    OptionSet,
    Segment,
    SegmentedRollout,
    SmdpQTable,
    rollout_meta,
)
from tests import utils

logger = logging.getLogger(__name__)

OPEN_3X3 = "#####\n#...#\n#...#\n#...#\n#####"


def primitive_rollout(
    states: List[tuple],
    actions: List[int],
    success: bool = True,
    goal: Optional[tuple] = None,
) -> SegmentedRollout:
    return SegmentedRollout(
        states=states,
        actions=actions,
        task=Task(states[0], goal or states[-1], "test"),
        segments=[Segment(a, i, 1, 0.0) for i, a in enumerate(actions)],
        success=success,
    )


def expert_one_hot(n_states: int, actions: List[int]) -> np.ndarray:
    policy = np.zeros((n_states, 4))
    policy[np.arange(n_states), actions] = 1.0
    return policy


class TestCrossEntropy(unittest.TestCase):
    def setUp(self) -> None:
        self.expert = expert_one_hot(3, [1, 2, 0])
        self.rho = np.array([0.5, 0.25, 0.25])

    def test_self_is_zero(self) -> None:
        self.assertEqual(
            cross_entropy_metric(self.expert, self.expert, self.rho), 0.0
        )

    def test_uniform_agent(self) -> None:
        uniform = np.full((3, 4), 0.25)
        self.assertAlmostEqual(
            cross_entropy_metric(self.expert, uniform, self.rho),
            math.log(4),
            delta=1e-12,
        )

    def test_half_on_expert_action(self) -> None:
        agent = np.full((3, 4), 0.5 / 3)
        agent[np.arange(3), [1, 2, 0]] = 0.5
        value = cross_entropy_metric(self.expert, agent, self.rho)
        self.assertAlmostEqual(value, math.log(2), delta=1e-12)
        self.assertAlmostEqual(value, 0.69, places=2)

    def test_mapping_and_missing_states(self) -> None:
        agent = {0: [0.25, 0.25, 0.25, 0.25], 1: [0.25, 0.25, 0.25, 0.25]}
        with self.assertRaises(UndefinedStateError):
            cross_entropy_metric(self.expert, agent, self.rho)
        # states without weight need no distribution
        value = cross_entropy_metric(
            self.expert, agent, np.array([0.5, 0.5, 0.0])
        )
        self.assertAlmostEqual(value, math.log(4))

    def test_weights_must_be_a_distribution(self) -> None:
        with self.assertRaises(ValueError):
            cross_entropy_metric(self.expert, self.expert, np.ones(3))

    def test_empirical_action_distribution(self) -> None:
        grid = utils.grid(utils.CORRIDOR)
        rollout = primitive_rollout([(1, 1), (1, 2), (1, 3)], [1, 1])
        dist = empirical_action_distribution([rollout, rollout], grid, 0.5)
        np.testing.assert_allclose(
            dist[0], [0.5 / 4, 2.5 / 4, 0.5 / 4, 0.5 / 4]
        )
        np.testing.assert_allclose(dist[2], np.full(4, 0.25))


class TestHingeLoss(unittest.TestCase):
    examples: utils.DataSet = {
        "equal": (np.array([0.5, 0.9, 1.0]), 0.0),
        "one below everywhere": (np.array([-0.5, -0.1, 0.0]), 1.0),
        "overshoot": (np.array([5.5, 5.9, 6.0]), 0.0),
        "mixed": (np.array([0.5, 0.7, 2.0]), 0.04 / 3),
    }

    @utils.run_sub_tests_with_dataset(examples)
    def test_examples(self, test_case_data: tuple) -> None:
        agent, expected = test_case_data
        expert = np.array([0.5, 0.9, 1.0])
        self.assertAlmostEqual(hinge_value_loss(agent, expert), expected)

    def test_monotone(self) -> None:
        generator = utils.rng()
        expert = generator.uniform(size=10)
        agent = generator.uniform(size=10)
        better = agent + generator.uniform(size=10)
        self.assertLessEqual(
            hinge_value_loss(better, expert), hinge_value_loss(agent, expert)
        )

    def test_mismatched_domains(self) -> None:
        with self.assertRaises(MismatchedDomainsError):
            hinge_value_loss(np.zeros(3), np.zeros(4))


class TestOptionStats(unittest.TestCase):
    def test_termination_stats(self) -> None:
        uniform = np.full((2, 4), 0.25)
        constant = OptionDefinition("a", uniform, np.full(2, 0.5))
        spread = OptionDefinition("b", uniform, np.array([0.2, 0.8]))
        stats = termination_stats(OptionSet([constant, spread]))
        self.assertEqual(stats[0], (0.5, 0.0))
        self.assertAlmostEqual(stats[1][0], 0.5)
        self.assertAlmostEqual(stats[1][1], 0.09)

        params = DdoParams(
            np.zeros((3, 2)), np.zeros((2, 3, 4)), np.zeros((2, 3))
        )
        self.assertEqual(termination_stats(params), [(0.5, 0.0), (0.5, 0.0)])

    def test_usage_stats(self) -> None:
        states = [(1, c) for c in range(1, 12)]
        rollout = SegmentedRollout(
            states=states,
            actions=[1] * 10,
            task=Task(states[0], states[-1], "test"),
            segments=[Segment(4, 0, 5, 0.0)]
            + [Segment(1, 5 + i, 1, 0.0) for i in range(5)],
            success=True,
        )
        stats = usage_stats([rollout])
        self.assertEqual(stats.option_time_fraction, 0.5)
        self.assertEqual(stats.median_duration, 5.0)
        self.assertEqual(stats.mean_duration, 5.0)
        self.assertEqual(stats.success_rate, 1.0)
        self.assertTrue(stats.durations_defined)

    def test_smaller_alpha_keeps_options_running(self) -> None:
        grid = utils.grid(utils.SMALL_ROOMS)
        n = grid.n_states
        # one option: uniform actions, terminating with probability 0.5
        params = DdoParams(
            np.zeros((n, 1)), np.zeros((1, n, 4)), np.zeros((1, n))
        )
        task = Task((1, 1), (3, 7), grid.name)

        stats: Dict[float, tuple] = {}
        for alpha in (1.0, 0.3):
            option_set = extract_options(scale_termination(params, alpha))
            q = np.zeros((n, 5))
            q[:, 4] = 1.0
            visits = np.zeros((n, 5), dtype=np.int64)
            table = SmdpQTable(q, visits, option_set.labels, task.goal)
            generator = utils.rng(8)
            rollouts = [
                rollout_meta(
                    grid,
                    utils.deterministic_spec(),
                    table,
                    option_set,
                    task,
                    generator,
                    greedy=False,
                    epsilon=0.5,
                )
                for _ in range(30)
            ]
            stats[alpha] = (
                termination_stats(option_set),
                usage_stats(rollouts),
            )

        self.assertAlmostEqual(stats[1.0][0][0][0], 0.5)
        self.assertAlmostEqual(stats[0.3][0][0][0], 0.15)
        self.assertGreater(
            stats[0.3][1].mean_duration, stats[1.0][1].mean_duration
        )
        self.assertGreater(
            stats[0.3][1].option_time_fraction,
            stats[1.0][1].option_time_fraction,
        )

    def test_usage_stats_without_options(self) -> None:
        rollout = primitive_rollout([(1, 1), (1, 2), (1, 3)], [1, 1])
        failed = primitive_rollout(
            [(1, 1), (1, 1)], [0], success=False, goal=(1, 3)
        )
        stats = usage_stats([rollout, failed])
        self.assertEqual(stats.option_time_fraction, 0.0)
        self.assertEqual(stats.median_duration, 0.0)
        self.assertFalse(stats.durations_defined)
        self.assertEqual(stats.success_rate, 0.5)
        with self.assertRaises(EmptyInputError):
            usage_stats([])


class TestDiffusionTime(unittest.TestCase):
    def test_two_cells(self) -> None:
        grid = utils.grid(utils.TWO_CELLS)
        self.assertAlmostEqual(diffusion_time(grid).value, 4.0)

    def test_three_cells(self) -> None:
        grid = utils.grid(utils.CORRIDOR)
        result = diffusion_time(grid, mode=EXACT_PRIMITIVES)
        self.assertAlmostEqual(result.value, 8.0)
        self.assertEqual(result.standard_error, 0.0)

    def test_enumeration_order_does_not_matter(self) -> None:
        text = "#####\n#..##\n#...#\n#####"
        grid = utils.grid(text)
        flipped = utils.grid("\n".join(reversed(text.split("\n"))))
        self.assertAlmostEqual(
            diffusion_time(grid).value, diffusion_time(flipped).value
        )

    def test_monte_carlo_agrees_with_exact(self) -> None:
        grid = utils.grid(OPEN_3X3)
        exact = diffusion_time(grid).value
        sampled = diffusion_time(
            grid, mode=MONTE_CARLO, samples=400, rng=utils.rng(5)
        )
        self.assertEqual(sampled.truncation_fraction, 0.0)
        self.assertGreater(sampled.standard_error, 0.0)
        self.assertLess(
            abs(sampled.value - exact), 4 * sampled.standard_error
        )

    def test_monte_carlo_truncation(self) -> None:
        grid = utils.grid(utils.SMALL_ROOMS)
        with self.assertLogs("optforge.metrics", level="WARNING"):
            sampled = diffusion_time(
                grid, mode=MONTE_CARLO, samples=20, rng=utils.rng(), cap=1
            )
        self.assertGreater(sampled.truncation_fraction, 0.0)
        self.assertLessEqual(sampled.value, 1.0)

    def test_invalid_input(self) -> None:
        with self.assertRaises(DisconnectedError):
            diffusion_time(utils.grid("#####\n#.#.#\n#####"))
        with self.assertRaises(ValueError):
            diffusion_time(utils.grid(utils.CORRIDOR), mode="analytic")
        with self.assertRaises(ValueError):
            diffusion_time(
                utils.grid(utils.CORRIDOR), mode=MONTE_CARLO, samples=0
            )


class TestVisitation(unittest.TestCase):
    def test_counts(self) -> None:
        states = [(1, c) for c in range(1, 6)]
        rollout = primitive_rollout(states, [1] * 4)
        once = visitation_counts([rollout])
        for state in states:
            self.assertAlmostEqual(once.distribution[state], 0.2)
        twice = visitation_counts([rollout, rollout])
        self.assertEqual(twice.counts[(1, 1)], 2)
        self.assertEqual(twice.distribution, once.distribution)

    def test_weights(self) -> None:
        grid = utils.grid(utils.CORRIDOR)
        rollout = primitive_rollout(
            [(1, 2), (1, 1), (1, 2), (1, 3)], [3, 1, 1]
        )
        np.testing.assert_allclose(
            visitation_counts([rollout]).weights(grid), [0.25, 0.5, 0.25]
        )

    def test_empty(self) -> None:
        with self.assertRaises(EmptyInputError):
            visitation_counts([])


class TestReport(unittest.TestCase):
    def setUp(self) -> None:
        self.report = MetricReport(
            label="iteration 1",
            ce_error=0.25,
            hinge_loss=0.125,
            per_option_termination=[(0.5, 0.09), (0.3, 0.0)],
            option_time_fraction=0.4,
            median_option_duration=3.0,
            success_rate=0.95,
            diffusion_time=12.5,
            visitation={(1, 1): 3, (1, 2): 1},
            alpha=0.5,
            lam=0.3,
            pairwise_kl=1.25,
            log_likelihood=-42.0,
        )

    def test_bytes(self) -> None:
        self.assertEqual(
            MetricReport.from_bytes(self.report.to_bytes()), self.report
        )

    def test_invalid_values(self) -> None:
        with self.assertRaises(ValueError):
            MetricReport("x", 0.0, 0.0, [], 1.5, 0.0, 1.0, 0.0, {})
        with self.assertRaises(ValueError):
            MetricReport("x", -1.0, 0.0, [], 0.5, 0.0, 1.0, 0.0, {})

    def test_tables(self) -> None:
        tables = metric_tables([self.report])
        self.assertEqual(
            set(tables),
            {"termination_stats", "ce_error", "hinge_error", "alpha", "lambda"},
        )
        header, rows = tables["termination_stats"]
        self.assertEqual(rows[1], ["iteration 1", "opt1", 0.3, 0.0])
        self.assertEqual(
            format_csv(tables["ce_error"]), "run,ce_error\niteration 1,0.25\n"
        )
        text = format_text_table(tables["ce_error"]).splitlines()
        self.assertEqual(text[0], "run          ce_error")
        self.assertEqual(text[2], "iteration 1    0.2500")
        self.assertEqual(len(header), 4)

    def test_build_report(self) -> None:
        grid = utils.grid(utils.CORRIDOR)
        spec = utils.deterministic_spec()
        expert_values = value_iteration(grid, spec, (1, 3))
        table = SmdpQTable.zeros(3, OptionSet(), (1, 3), grid.name)
        table.q[:, 1] = expert_values.v
        rollout = primitive_rollout([(1, 1), (1, 2), (1, 3)], [1, 1])
        report = build_report(
            "flat",
            grid,
            expert_values,
            table,
            OptionSet(),
            [rollout],
            visitation_counts([rollout]),
            diffusion_time(grid),
        )
        self.assertEqual(report.hinge_loss, 0.0)
        self.assertEqual(report.success_rate, 1.0)
        self.assertEqual(report.option_time_fraction, 0.0)
        self.assertEqual(report.per_option_termination, [])
        self.assertAlmostEqual(report.diffusion_time, 8.0)
        # the agent took the expert action everywhere it acted
        smoothed = (1 + 1e-3) / (1 + 4e-3)
        self.assertAlmostEqual(report.ce_error, -math.log(smoothed))
        self.assertEqual(report.visitation, {(1, 1): 1, (1, 2): 1, (1, 3): 1})


# Run unit test.
if __name__ == "__main__":
    utils.configure_test_logging(sys.argv)
    unittest.main()
