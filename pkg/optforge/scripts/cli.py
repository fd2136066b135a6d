# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Command-line entry point.

Usage::

    optforge --config exp.cfg --seed 7 pipeline
    optforge --config exp.cfg iterate
    optforge --config exp.cfg render --option 2 --format svg --output opt2.svg

The ``expert``, ``ddo``, ``smdp`` and ``eval`` subcommands run the pipeline
up to and including that stage; stages whose stored outputs still verify
are loaded rather than recomputed.

Exit codes: 0 on success, 2 for configuration errors, 3 when a stage fails.
"""

import argparse
import logging
import sys
from typing import List, Optional

from optforge import log
from optforge.api.exceptions import ConfigError, StageError
from optforge.expert import greedy_policy
from optforge.pipeline.config import ExperimentConfig, load_config
from optforge.pipeline.render import FORMATS, render_policy
from optforge.pipeline.runner import ExperimentRunner, PipelineResult

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

_LOG_LEVELS = {
    0: logging.WARNING,
    1: logging.INFO,
    2: logging.DEBUG,
}


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="optforge",
        description="Discover options from expert gridworld trajectories.",
    )
    parser.add_argument(
        "-c", "--config", metavar="<file>", help="Experiment config file."
    )
    parser.add_argument("--seed", type=int, help="Override the root seed.")
    parser.add_argument("--out", metavar="<dir>", help="Output directory.")
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Increase logging verbosity: -v for INFO, -vv for DEBUG.",
    )

    commands = parser.add_subparsers(dest="command", required=True)
    for stage in ("expert", "ddo", "smdp", "eval"):
        commands.add_parser(stage, help=f"Run the pipeline up to '{stage}'.")
    commands.add_parser("pipeline", help="Run every stage.")
    commands.add_parser("iterate", help="Run the iterated discovery loop.")

    render = commands.add_parser("render", help="Render a policy map.")
    target = render.add_mutually_exclusive_group(required=True)
    target.add_argument(
        "--option", type=int, metavar="<h>", help="Render inferred option h."
    )
    target.add_argument(
        "--expert",
        action="store_true",
        help="Render the expert policy for the evaluation goal.",
    )
    render.add_argument("--format", choices=FORMATS, default=FORMATS[0])
    render.add_argument(
        "--output", metavar="<file>", help="Write here instead of stdout."
    )

    return parser.parse_args(argv)


def _summarize(result: PipelineResult) -> str:
    if result.report is not None:
        r = result.report
        return (
            f"{r.label}: success {r.success_rate:.2f}, CE {r.ce_error:.4f}, "
            f"hinge {r.hinge_loss:.4f}, option time "
            f"{r.option_time_fraction:.2f}"
        )
    if result.table is not None:
        return f"meta-policy trained for goal {result.goal}"
    if result.history is not None:
        return (
            f"log-likelihood {result.history.initial_log_likelihood:.4f} -> "
            f"{result.history.final_log_likelihood:.4f}"
        )
    return f"{len(result.trajectories)} expert trajectories"


def _render(runner: ExperimentRunner, arguments: argparse.Namespace) -> str:
    grid = runner.grid
    if arguments.expert:
        goal = runner.evaluation_goal()
        values = runner.expert_values(goal)
        return render_policy(
            grid, greedy_policy(values), arguments.format, goal=goal
        )

    params = runner.run(until="ddo").params
    assert params is not None
    if not 0 <= arguments.option < params.n_options:
        raise ConfigError(
            f"option {arguments.option} out of range, have {params.n_options}"
        )
    return render_policy(
        grid,
        params.pi()[arguments.option],
        arguments.format,
        termination=params.termination()[arguments.option],
    )


def run(arguments: argparse.Namespace) -> int:
    """Runs the parsed command and returns the exit code."""
    try:
        config: ExperimentConfig = load_config(
            arguments.config,
            overrides={"seed": arguments.seed, "out": arguments.out},
        )
        runner = ExperimentRunner(config)
        if arguments.command == "iterate":
            for result in runner.run_iterated().iterations:
                print(_summarize(result))
        elif arguments.command == "render":
            document = _render(runner, arguments)
            if arguments.output:
                with open(arguments.output, "w", encoding="utf-8") as f:
                    f.write(document + "\n")
            else:
                print(document)
        else:
            until: Optional[str] = arguments.command
            if until == "pipeline":
                until = None
            print(_summarize(runner.run(until)))

    except ConfigError as e:
        sys.stderr.write(f"Error: {e}\n")
        return EXIT_CONFIG
    except StageError as e:
        sys.stderr.write(f"Error: {e}\n")
        return EXIT_STAGE

    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    arguments = parse_arguments(argv)
    level = _LOG_LEVELS[min(arguments.verbose, 2)]
    log.set_log_level(level)
    log.add_console_handler(level)
    try:
        return run(arguments)
    finally:
        log.remove_console_handler()


if __name__ == "__main__":
    sys.exit(main())
