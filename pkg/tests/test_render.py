#!/usr/bin/env python

# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Unit tests for 'optforge/pipeline/render.py'."""

import logging
import sys
import unittest
import xml.etree.ElementTree as ET

import numpy as np

from optforge.pipeline.render import ASCII, SVG, render_policy
from tests import utils

logger = logging.getLogger(__name__)

SVG_NS = "{http://www.w3.org/2000/svg}"


class TestRender(unittest.TestCase):
    def setUp(self) -> None:
        self.grid = utils.grid(utils.CORRIDOR)
        self.east = np.zeros((3, 4))
        self.east[:, 1] = 1.0

    def test_ascii(self) -> None:
        self.assertEqual(
            render_policy(self.grid, self.east, ASCII, goal=(1, 3)),
            "#####\n#>>G#\n#####",
        )
        # ties go to the lowest action index
        uniform = np.full((3, 4), 0.25)
        self.assertEqual(
            render_policy(self.grid, uniform), "#####\n#^^^#\n#####"
        )

    def test_svg(self) -> None:
        termination = np.array([0.0, 0.5, 1.0])
        document = render_policy(
            self.grid, self.east, SVG, termination=termination, goal=(1, 3)
        )
        root = ET.fromstring(document)
        self.assertEqual(root.tag, f"{SVG_NS}svg")
        self.assertEqual(len(root.findall(f"{SVG_NS}rect")), 15)
        # one arrow per drawn action, none on the goal
        self.assertEqual(len(root.findall(f"{SVG_NS}line")), 2)

        uniform = render_policy(self.grid, np.full((3, 4), 0.25), SVG)
        self.assertEqual(
            len(ET.fromstring(uniform).findall(f"{SVG_NS}line")), 12
        )

    def test_invalid_input(self) -> None:
        with self.assertRaises(ValueError):
            render_policy(self.grid, self.east, "png")
        with self.assertRaises(ValueError):
            render_policy(self.grid, np.full((2, 4), 0.25))


# Run unit test.
if __name__ == "__main__":
    utils.configure_test_logging(sys.argv)
    unittest.main()
