#!/usr/bin/env python

# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""
<Program Name>
  utils.py

<Purpose>
  Provide common utilities for optforge tests
"""

import argparse
import logging
import os
import unittest
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from optforge.gridworld import GridMap, MdpSpec, parse_map

logger = logging.getLogger(__name__)

# May be used to reliably read other files in tests dir regardless of cwd
TESTS_DIR = os.path.dirname(os.path.realpath(__file__))

# DataSet is only here so type hints can be used.
DataSet = Dict[str, Any]

CORRIDOR = "#####\n#...#\n#####"
TWO_CELLS = "####\n#..#\n####"
SMALL_ROOMS = (
    "#########\n"
    "#...#...#\n"
    "#.......#\n"
    "#...#...#\n"
    "#########"
)


# Test runner decorator: Runs the test as a set of N SubTests,
# (where N is number of items in dataset), feeding the actual test
# function one test case at a time
def run_sub_tests_with_dataset(
    dataset: DataSet,
) -> Callable[[Callable], Callable]:
    """Decorator starting a unittest.TestCase.subtest() for each of the
    cases in dataset"""

    def real_decorator(
        function: Callable[[unittest.TestCase, Any], None]
    ) -> Callable[[unittest.TestCase], None]:
        def wrapper(test_cls: unittest.TestCase) -> None:
            for case, data in dataset.items():
                with test_cls.subTest(case=case):
                    # Save case name for future reference
                    test_cls.case_name = case.replace(" ", "_")
                    function(test_cls, data)

        return wrapper

    return real_decorator


def grid(text: str, name: str = "test") -> GridMap:
    return parse_map(text, name)


def deterministic_spec(
    discount: float = 0.9, max_episode_steps: int = 50
) -> MdpSpec:
    return MdpSpec(
        slip_prob=0.0, discount=discount, max_episode_steps=max_episode_steps
    )


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_distribution(
    generator: np.random.Generator, shape: tuple, axis: int = -1
) -> np.ndarray:
    """Strictly positive distributions normalized along ``axis``."""
    raw = generator.uniform(0.1, 1.0, size=shape)
    return raw / raw.sum(axis=axis, keepdims=True)


def configure_test_logging(argv: List[str]) -> None:
    """Configure logger level for a certain test file"""
    # parse arguments but only handle '-v': argv may contain
    # other things meant for unittest argument parser
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    args, _ = parser.parse_known_args(argv)

    if args.verbose <= 1:
        # 0 and 1 both mean ERROR: this way '-v' makes unittest print test
        # names without increasing log level
        loglevel = logging.ERROR
    elif args.verbose == 2:
        loglevel = logging.WARNING
    elif args.verbose == 3:
        loglevel = logging.INFO
    else:
        loglevel = logging.DEBUG

    logging.basicConfig(level=loglevel)


def write_config(path: str, lines: Optional[List[str]] = None) -> str:
    """Writes an experiment config file and returns its path."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines or []) + "\n")
    return path
