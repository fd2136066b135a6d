# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Experiment configuration.

A config file is flat ``key = value`` text. Keys are either top-level
(``map``, ``seed``, ``out``) or dotted ``<section>.<field>`` pairs naming a
field of one of the section dataclasses::

    # four rooms, six options, strong termination scaling
    map = fourroom
    seed = 7
    ddo.n_options = 6
    ddo.alpha = 0.1
    ddo.lambda = 0.3

Environment variables ``OPTFORGE_<SECTION>_<FIELD>`` (``OPTFORGE_DDO_ALPHA``)
or ``OPTFORGE_<FIELD>`` for top-level keys override the file. Explicit
overrides passed to ``load_config()`` (the CLI's ``--seed`` and ``--out``)
override both.
"""

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from optforge import settings
from optforge.api.exceptions import ConfigError
from optforge.ddo.config import TrainConfig
from optforge.expert import ExpertConfig
from optforge.gridworld import BUNDLED_MAPS, MdpSpec, State
from optforge.metrics import DIFFUSION_MODES, EXACT_PRIMITIVES
from optforge.smdp import SmdpConfig

logger = logging.getLogger(__name__)

_IMPLICIT_SECTION = "experiment"

# config-file spellings of fields whose names are Python keywords
_FIELD_ALIASES = {("ddo", "lambda"): "lam"}


@dataclass
class EvalConfig:
    """Used to store evaluation settings.

    Args:
        n_eval_tasks: Meta-policy rollouts (random starts) per evaluation.
        goal: Evaluation goal as "r,c"; empty draws one from the seed. The
            tabular meta-policy is trained for this goal only.
        diffusion_mode: "exact-primitives" or "monte-carlo".
        diffusion_samples: Sampled pairs in monte-carlo mode.
        diffusion_cap: Step cap of one monte-carlo walk.
        held_out_trajectories: Expert trajectories kept aside for the
            held-out log-likelihood; 0 disables it.
    """

    n_eval_tasks: int = 100
    goal: str = ""
    diffusion_mode: str = EXACT_PRIMITIVES
    diffusion_samples: int = 200
    diffusion_cap: int = 10000
    held_out_trajectories: int = 50

    def __post_init__(self) -> None:
        if self.n_eval_tasks < 1:
            raise ValueError("n_eval_tasks must be >= 1")
        if self.diffusion_mode not in DIFFUSION_MODES:
            raise ValueError(
                f"diffusion_mode must be one of {DIFFUSION_MODES}"
            )
        if self.held_out_trajectories < 0:
            raise ValueError("held_out_trajectories must be >= 0")
        if self.goal:
            parse_cell(self.goal)

    def goal_cell(self) -> Optional[State]:
        return parse_cell(self.goal) if self.goal else None


@dataclass
class IterateConfig:
    """Used to store settings of the iterated discovery loop.

    Args:
        n_iterations: Outer iterations N.
        sample_size: Trajectories T drawn from the buffer per iteration;
            0 uses the whole buffer.
        agent_rollouts: Agent trajectories T' appended to the buffer per
            iteration.
        warm_start: Continue from the previous iteration's parameters
            instead of re-initializing.
    """

    n_iterations: int = 3
    sample_size: int = 0
    agent_rollouts: int = 50
    warm_start: bool = True

    def __post_init__(self) -> None:
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.sample_size < 0 or self.agent_rollouts < 0:
            raise ValueError("sample_size and agent_rollouts must be >= 0")


@dataclass
class ExperimentConfig:
    """A complete experiment: map, MDP, every stage's settings and the
    seed that drives all of them.

    Args:
        map: Bundled map name or path to a map file.
        seed: Root seed; each stage derives its own stream from it.
        out: Output directory.
    """

    map: str = "fourroom"
    seed: int = 0
    out: str = "optforge-out"
    mdp: MdpSpec = field(default_factory=MdpSpec)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    ddo: TrainConfig = field(default_factory=TrainConfig)
    smdp: SmdpConfig = field(default_factory=SmdpConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    iterate: IterateConfig = field(default_factory=IterateConfig)


_SECTIONS = {
    f.name: f.type
    for f in dataclasses.fields(ExperimentConfig)
    if dataclasses.is_dataclass(f.type)
}
_TOP_LEVEL = {
    f.name: f.type
    for f in dataclasses.fields(ExperimentConfig)
    if f.name not in _SECTIONS
}


def parse_cell(text: str) -> State:
    """Parses "r,c".

    Raises:
        ValueError: Not two comma-separated integers.
    """
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 'row,col', got {text!r}")
    return int(parts[0].strip()), int(parts[1].strip())


def parse_cells(text: str) -> Tuple[State, ...]:
    """Parses "r,c;r,c"; empty text gives no cells."""
    return tuple(parse_cell(p) for p in text.split(";") if p.strip())


def _coerce(value: str, target: Any, key: str) -> Any:
    try:
        if target is bool:
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if target is int:
            return int(value)
        if target is float:
            return float(value)
        return value.strip()
    except ValueError as e:
        raise ConfigError(f"Invalid value for {key}: {e}") from e


def _split_key(key: str) -> Tuple[Optional[str], str]:
    """Maps a dotted config key to (section, field).

    Raises:
        ConfigError: Unknown key.
    """
    if "." not in key:
        if key not in _TOP_LEVEL:
            raise ConfigError(f"Unknown config key {key!r}")
        return None, key

    section, name = key.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(f"Unknown config section {section!r} in {key!r}")
    name = _FIELD_ALIASES.get((section, name), name)
    if name not in {f.name for f in dataclasses.fields(_SECTIONS[section])}:
        raise ConfigError(f"Unknown config key {key!r}")
    return section, name


def _env_key(var: str) -> str:
    """``OPTFORGE_DDO_N_OPTIONS`` -> ``ddo.n_options``."""
    rest = var[len(settings.ENV_PREFIX) :].lower()
    for section in _SECTIONS:
        if rest.startswith(section + "_"):
            return f"{section}.{rest[len(section) + 1 :]}"
    return rest


def _read_file(path: str) -> Dict[str, str]:
    parser = configparser.ConfigParser(
        interpolation=None,
        comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
    )
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_string(f"[{_IMPLICIT_SECTION}]\n" + f.read(), path)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ConfigError(f"Malformed config file {path}: {e}") from e
    return dict(parser[_IMPLICIT_SECTION])


def load_config(
    path: Optional[str] = None,
    environ: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Builds an ``ExperimentConfig`` from defaults, an optional file, the
    environment and explicit overrides, in increasing precedence.

    Args:
        path: Config file, or None for defaults only.
        environ: Environment to read ``OPTFORGE_*`` variables from. Default
            is ``os.environ``.
        overrides: Already typed values keyed like the file; None values
            are ignored.

    Raises:
        ConfigError: Unknown keys, bad values, a missing map file, or values
            rejected by a section's validation.
    """
    raw: Dict[str, str] = {}
    if path is not None:
        raw.update(_read_file(path))

    if environ is None:
        environ = os.environ
    for var, value in sorted(environ.items()):
        if var.startswith(settings.ENV_PREFIX):
            raw[_env_key(var)] = value

    values: Dict[Optional[str], Dict[str, Any]] = {None: {}}
    values.update({section: {} for section in _SECTIONS})
    for key, value in raw.items():
        section, name = _split_key(key)
        types = (
            _TOP_LEVEL
            if section is None
            else {
                f.name: f.type
                for f in dataclasses.fields(_SECTIONS[section])
            }
        )
        values[section][name] = _coerce(value, types[name], key)

    for key, value in (overrides or {}).items():
        if value is not None:
            section, name = _split_key(key)
            values[section][name] = value

    try:
        sections = {
            section: cls(**values[section])
            for section, cls in _SECTIONS.items()
        }
        config = ExperimentConfig(**values[None], **sections)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid configuration: {e}") from e

    if config.map not in BUNDLED_MAPS and not os.path.isfile(config.map):
        raise ConfigError(
            f"Map {config.map!r} is neither a bundled map {BUNDLED_MAPS} nor "
            "an existing file"
        )
    if config.expert.kind == "hierarchical":
        try:
            parse_cells(config.expert.subgoals)
        except ValueError as e:
            raise ConfigError(f"Invalid expert.subgoals: {e}") from e

    logger.debug("Loaded config: %s", config)
    return config


def config_fields(config: Any) -> Dict[str, Any]:
    """Nested dict of a config dataclass with every leaf as a string, the
    form used in stage digests."""
    result: Dict[str, Any] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if dataclasses.is_dataclass(value):
            result[f.name] = config_fields(value)
        else:
            result[f.name] = repr(value)
    return result
