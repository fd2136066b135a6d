#!/usr/bin/env python

# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Unit tests for 'optforge/scripts/cli.py'."""

import contextlib
import io
import logging
import os
import shutil
import sys
import tempfile
import unittest
from typing import List, Sequence, Tuple

from optforge.scripts import cli
from tests import utils

logger = logging.getLogger(__name__)


class TestCli(unittest.TestCase):
    def setUp(self) -> None:
        self.temp_dir = tempfile.mkdtemp(dir=os.getcwd())
        self.out = os.path.join(self.temp_dir, "out")
        map_path = os.path.join(self.temp_dir, "rooms.map")
        with open(map_path, "w", encoding="utf-8") as f:
            f.write(utils.SMALL_ROOMS)
        self.lines = [
            f"map = {map_path}",
            "mdp.max_episode_steps = 50",
            "expert.n_trajectories = 4",
            "ddo.n_options = 2",
            "ddo.epochs = 2",
            "smdp.episodes = 30",
            "eval.n_eval_tasks = 3",
            "eval.held_out_trajectories = 0",
            "eval.goal = 3,7",
            "iterate.n_iterations = 1",
            "iterate.agent_rollouts = 2",
        ]

    def tearDown(self) -> None:
        shutil.rmtree(self.temp_dir)

    def _main(
        self, args: List[str], extra: Sequence[str] = ()
    ) -> Tuple[int, str]:
        config = utils.write_config(
            os.path.join(self.temp_dir, "experiment.cfg"),
            self.lines + list(extra),
        )
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(
            io.StringIO()
        ):
            code = cli.main(["--config", config, "--out", self.out] + args)
        return code, stdout.getvalue()

    def test_pipeline(self) -> None:
        code, output = self._main(["pipeline"])
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(output.startswith("pipeline: success"))
        self.assertTrue(
            os.path.exists(os.path.join(self.out, "eval", "manifest.json"))
        )

    def test_partial_stages(self) -> None:
        code, output = self._main(["expert"])
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(output.strip(), "4 expert trajectories")

        code, output = self._main(["--seed", "5", "ddo"])
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(output.startswith("log-likelihood"))

    def test_iterate(self) -> None:
        code, output = self._main(["iterate"])
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(output.startswith("iteration 1: success"))

    def test_config_error(self) -> None:
        code, _ = self._main(["pipeline"], ["ddo.colour = blue"])
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_stage_error(self) -> None:
        code, _ = self._main(["smdp"], ["eval.goal = 0,0"])
        self.assertEqual(code, cli.EXIT_STAGE)
        self.assertTrue(
            os.path.exists(os.path.join(self.out, "ddo", "manifest.json"))
        )

    def test_render(self) -> None:
        target = os.path.join(self.temp_dir, "opt0.svg")
        code, _ = self._main(
            ["render", "--option", "0", "--format", "svg", "--output", target]
        )
        self.assertEqual(code, cli.EXIT_OK)
        with open(target, encoding="utf-8") as f:
            self.assertTrue(f.read().startswith("<svg"))

        code, output = self._main(["render", "--expert"])
        self.assertEqual(code, cli.EXIT_OK)
        rows = output.splitlines()
        self.assertEqual(rows[0], "#########")
        self.assertEqual(rows[3][7], "G")

        code, _ = self._main(["render", "--option", "2"])
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_render_expert_without_convergence(self) -> None:
        code, output = self._main(
            ["render", "--expert"], ["expert.vi_max_iters = 1"]
        )
        self.assertEqual(code, cli.EXIT_STAGE)
        self.assertEqual(output, "")

    def test_verbosity(self) -> None:
        self.assertEqual(cli.parse_arguments(["pipeline"]).verbose, 0)
        self.assertEqual(cli.parse_arguments(["-v", "pipeline"]).verbose, 1)
        self.assertEqual(cli.parse_arguments(["-vvv", "pipeline"]).verbose, 3)
        code, _ = self._main(["-vv", "expert"])
        self.assertEqual(code, cli.EXIT_OK)

    def test_usage_errors(self) -> None:
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                cli.parse_arguments([])
            with self.assertRaises(SystemExit):
                cli.parse_arguments(["render", "--option", "1", "--expert"])
            with self.assertRaises(SystemExit):
                cli.parse_arguments(["--verbose=2", "pipeline"])


# Run unit test.
if __name__ == "__main__":
    utils.configure_test_logging(sys.argv)
    unittest.main()
