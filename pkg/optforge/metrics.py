# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Agent-vs-expert similarity and option quality metrics.

With a one-hot expert the "CE-error" and the KL divergence between expert and
agent action distributions coincide, so ``cross_entropy_metric()`` serves as
both.
"""

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from scipy import linalg

from optforge import settings
from optforge.api.artifact import Artifact
from optforge.api.exceptions import (
    DisconnectedError,
    EmptyInputError,
    MismatchedDomainsError,
    UndefinedStateError,
)
from optforge.ddo.params import DdoParams
from optforge.ddo.training import pairwise_option_kl
from optforge.expert import ValueTable, greedy_policy
from optforge.gridworld import (
    N_ACTIONS,
    GridEnv,
    GridMap,
    MdpSpec,
    State,
    Task,
    bfs_distances,
    transition_tensor,
)
from optforge.smdp import (
    OptionSet,
    SegmentedRollout,
    SmdpQTable,
    execute_option,
)

logger = logging.getLogger(__name__)

EXACT_PRIMITIVES = "exact-primitives"
MONTE_CARLO = "monte-carlo"
DIFFUSION_MODES = (EXACT_PRIMITIVES, MONTE_CARLO)


class HasStates(Protocol):
    states: List[State]


def cross_entropy_metric(
    expert_policy: np.ndarray,
    agent_action_dist: Union[np.ndarray, Mapping[int, Sequence[float]]],
    visitation_weights: np.ndarray,
) -> float:
    """``sum_s rho(s) * -log p_agent(a*(s) | s)`` where ``a*`` is the
    expert's argmax action.

    Args:
        expert_policy: Shape ``(n_states, 4)``; ties in the argmax go to the
            lowest action index.
        agent_action_dist: Per-state agent action distributions, as an array
            or a mapping from state index.
        visitation_weights: ``rho``, summing to one.

    Raises:
        ValueError: Weights do not form a distribution.
        UndefinedStateError: No agent distribution on a weighted state.
    """
    weights = np.asarray(visitation_weights, dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("visitation weights must be a distribution")

    if isinstance(agent_action_dist, np.ndarray):
        agent: Mapping[int, Sequence[float]] = dict(
            enumerate(agent_action_dist)
        )
    else:
        agent = agent_action_dist

    expert_actions = np.argmax(expert_policy, axis=1)
    total = 0.0
    for s in map(int, np.flatnonzero(weights)):
        if s not in agent:
            raise UndefinedStateError(f"no agent distribution at state {s}")
        total += weights[s] * -np.log(agent[s][expert_actions[s]])
    return float(total)


def empirical_action_distribution(
    rollouts: Sequence[SegmentedRollout],
    grid: GridMap,
    smoothing: float = settings.ACTION_COUNT_SMOOTHING,
) -> np.ndarray:
    """Per-state action frequencies of ``rollouts`` with additive
    smoothing; unvisited states come out uniform."""
    counts = np.full((grid.n_states, N_ACTIONS), smoothing)
    for rollout in rollouts:
        for state, action in zip(rollout.states, rollout.actions):
            counts[grid.index(state), action] += 1.0
    return counts / counts.sum(axis=1, keepdims=True)


def hinge_value_loss(v_agent: np.ndarray, v_expert: np.ndarray) -> float:
    """``mean_s (min(V(s), V*(s)) - V*(s))**2``; only shortfalls count.

    Raises:
        MismatchedDomainsError: Different state sets.
    """
    v_agent = np.asarray(v_agent, dtype=float)
    v_expert = np.asarray(v_expert, dtype=float)
    if v_agent.shape != v_expert.shape:
        raise MismatchedDomainsError(
            f"agent values {v_agent.shape} vs expert values {v_expert.shape}"
        )
    return float(np.mean((np.minimum(v_agent, v_expert) - v_expert) ** 2))


def termination_stats(
    source: Union[DdoParams, OptionSet]
) -> List[Tuple[float, float]]:
    """Population mean and variance of each option's effective termination
    over the free states."""
    if isinstance(source, DdoParams):
        terminations = list(source.termination())
    else:
        terminations = [o.termination for o in source.options]
    return [(float(np.mean(t)), float(np.var(t))) for t in terminations]


@dataclass(frozen=True)
class UsageStats:
    """Option usage over a set of rollouts.

    Args:
        option_time_fraction: Share of flat steps spent inside options.
        median_duration: Median option segment length.
        mean_duration: Mean option segment length.
        success_rate: Share of rollouts that reached the goal.
        durations_defined: False if no option ran; durations are then 0.
    """

    option_time_fraction: float
    median_duration: float
    mean_duration: float
    success_rate: float
    durations_defined: bool


def usage_stats(rollouts: Sequence[SegmentedRollout]) -> UsageStats:
    """Raises:
    EmptyInputError: No rollouts.
    """
    if not rollouts:
        raise EmptyInputError("usage statistics of zero rollouts")

    total_steps = sum(r.length for r in rollouts)
    durations = [
        seg.duration
        for r in rollouts
        for seg in r.segments
        if seg.choice >= r.n_primitives
    ]
    option_steps = sum(durations)
    return UsageStats(
        option_time_fraction=option_steps / total_steps if total_steps else 0.0,
        median_duration=float(np.median(durations)) if durations else 0.0,
        mean_duration=float(np.mean(durations)) if durations else 0.0,
        success_rate=sum(r.success for r in rollouts) / len(rollouts),
        durations_defined=bool(durations),
    )


@dataclass(frozen=True)
class DiffusionTime:
    """Mean expected hitting time between ordered pairs of free states.

    Args:
        value: The mean, in flat steps.
        standard_error: Monte-carlo standard error; 0 for the exact solve.
        truncation_fraction: Share of sampled walks cut at the step cap.
    """

    value: float
    standard_error: float = 0.0
    truncation_fraction: float = 0.0


def _check_connected(grid: GridMap) -> None:
    reached = bfs_distances(grid, grid.free_states[0])
    if len(reached) != grid.n_states:
        raise DisconnectedError(
            f"{grid.n_states - len(reached)} free cells are unreachable from "
            f"{grid.free_states[0]}"
        )


def _exact_diffusion_time(grid: GridMap, spec: MdpSpec) -> DiffusionTime:
    walk = transition_tensor(grid, spec).mean(axis=1)
    n = grid.n_states
    total = 0.0
    for target in range(n):
        keep = np.arange(n) != target
        transient = walk[np.ix_(keep, keep)]
        hitting = linalg.solve(np.eye(n - 1) - transient, np.ones(n - 1))
        total += float(hitting.sum())
    return DiffusionTime(total / (n * (n - 1)))


def _monte_carlo_diffusion_time(
    grid: GridMap,
    spec: MdpSpec,
    option_set: OptionSet,
    samples: int,
    rng: np.random.Generator,
    cap: int,
    option_max_steps: int,
) -> DiffusionTime:
    capped = dataclasses.replace(spec, max_episode_steps=cap)
    times = np.zeros(samples)
    truncated = 0
    for i in range(samples):
        start, target = rng.choice(grid.n_states, size=2, replace=False)
        env = GridEnv(
            grid,
            capped,
            Task(
                grid.free_states[int(start)],
                grid.free_states[int(target)],
                grid.name,
            ),
        )
        while not env.done:
            choice = int(rng.integers(option_set.n_choices))
            if option_set.is_primitive(choice):
                env.step(choice, rng)
            else:
                execute_option(
                    env, option_set.option(choice), rng, option_max_steps
                )
        times[i] = env.steps
        truncated += int(env.truncated)

    stderr = float(times.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return DiffusionTime(float(times.mean()), stderr, truncated / samples)


def diffusion_time(
    grid: GridMap,
    option_set: Optional[OptionSet] = None,
    mode: str = EXACT_PRIMITIVES,
    samples: int = 200,
    rng: Optional[np.random.Generator] = None,
    spec: Optional[MdpSpec] = None,
    cap: int = 10000,
    option_max_steps: int = settings.DEFAULT_OPTION_MAX_STEPS,
) -> DiffusionTime:
    """Mean hitting time of a uniformly random walk over all ordered pairs
    of free states.

    ``exact-primitives`` solves the hitting-time linear system of the
    uniform primitive walk once per target. ``monte-carlo`` samples pairs
    and walks with uniformly random choices over primitives and the options
    of ``option_set``, counting flat steps up to ``cap``.

    Raises:
        ValueError: Unknown mode or bad sample count.
        DisconnectedError: Some pair of free cells is not connected.
    """
    if mode not in DIFFUSION_MODES:
        raise ValueError(f"mode must be one of {DIFFUSION_MODES}, got {mode}")
    _check_connected(grid)
    spec = spec or MdpSpec()

    if mode == EXACT_PRIMITIVES:
        return _exact_diffusion_time(grid, spec)

    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    result = _monte_carlo_diffusion_time(
        grid,
        spec,
        option_set or OptionSet(),
        samples,
        rng if rng is not None else np.random.default_rng(),
        cap,
        option_max_steps,
    )
    if result.truncation_fraction > 0:
        logger.warning(
            "%.1f%% of diffusion walks hit the %d-step cap",
            100 * result.truncation_fraction,
            cap,
        )
    return result


@dataclass(frozen=True)
class Visitation:
    """State visitation counts and their normalized distribution."""

    counts: Dict[State, int]
    distribution: Dict[State, float]

    def weights(self, grid: GridMap) -> np.ndarray:
        """The distribution as an array over ``grid.free_states``."""
        rho = np.zeros(grid.n_states)
        for state, prob in self.distribution.items():
            rho[grid.index(state)] = prob
        return rho


def visitation_counts(rollouts: Sequence[HasStates]) -> Visitation:
    """Counts over every flat state of every rollout.

    Raises:
        EmptyInputError: No states at all.
    """
    counts: Dict[State, int] = {}
    for rollout in rollouts:
        for state in rollout.states:
            counts[state] = counts.get(state, 0) + 1
    total = sum(counts.values())
    if total == 0:
        raise EmptyInputError("visitation counts of zero rollouts")
    return Visitation(counts, {s: c / total for s, c in counts.items()})


class MetricReport(Artifact):
    """Evaluation summary of one trained agent.

    *All parameters named below are not just constructor arguments but also
    instance attributes.*

    Args:
        label: Run label, e.g. ``"iteration 2"``.
        ce_error: Visitation-weighted cross-entropy against the expert.
        hinge_loss: Hinge value loss against the expert values.
        per_option_termination: ``(mean, variance)`` per option.
        option_time_fraction: Share of evaluation steps spent in options.
        median_option_duration: Median option segment length.
        success_rate: Share of evaluation rollouts reaching the goal.
        diffusion_time: Mean hitting time.
        visitation: Evaluation state visitation counts.
        alpha: Termination scale of the evaluated options.
        lam: Diversity weight the options were trained with.
        pairwise_kl: Mean pairwise KL between option policies.
        log_likelihood: Held-out expert log-likelihood, if measured.
    """

    type = "metric_report"

    # pylint: disable=too-many-arguments,too-many-instance-attributes
    def __init__(
        self,
        label: str,
        ce_error: float,
        hinge_loss: float,
        per_option_termination: Sequence[Tuple[float, float]],
        option_time_fraction: float,
        median_option_duration: float,
        success_rate: float,
        diffusion_time: float,
        visitation: Dict[State, int],
        alpha: float = 1.0,
        lam: float = 0.0,
        pairwise_kl: float = 0.0,
        log_likelihood: Optional[float] = None,
    ):
        for name, value in (
            ("option_time_fraction", option_time_fraction),
            ("success_rate", success_rate),
        ):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if hinge_loss < 0 or ce_error < 0:
            raise ValueError("losses must be non-negative")

        self.label = label
        self.ce_error = ce_error
        self.hinge_loss = hinge_loss
        self.per_option_termination = [
            (float(m), float(v)) for m, v in per_option_termination
        ]
        self.option_time_fraction = option_time_fraction
        self.median_option_duration = median_option_duration
        self.success_rate = success_rate
        self.diffusion_time = diffusion_time
        self.visitation = dict(visitation)
        self.alpha = alpha
        self.lam = lam
        self.pairwise_kl = pairwise_kl
        self.log_likelihood = log_likelihood

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, MetricReport):
            return False
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self._common_fields_to_dict(),
            "label": self.label,
            "ce_error": self.ce_error,
            "hinge_loss": self.hinge_loss,
            "per_option_termination": [
                [m, v] for m, v in self.per_option_termination
            ],
            "option_time_fraction": self.option_time_fraction,
            "median_option_duration": self.median_option_duration,
            "success_rate": self.success_rate,
            "diffusion_time": self.diffusion_time,
            "visitation": [
                [r, c, n] for (r, c), n in sorted(self.visitation.items())
            ],
            "alpha": self.alpha,
            "lam": self.lam,
            "pairwise_kl": self.pairwise_kl,
            "log_likelihood": self.log_likelihood,
        }

    @classmethod
    def from_dict(cls, artifact_dict: Dict[str, Any]) -> "MetricReport":
        cls._check_common_fields(artifact_dict)
        visitation = {
            (int(r), int(c)): int(n) for r, c, n in artifact_dict["visitation"]
        }
        return cls(
            artifact_dict["label"],
            artifact_dict["ce_error"],
            artifact_dict["hinge_loss"],
            [tuple(pair) for pair in artifact_dict["per_option_termination"]],
            artifact_dict["option_time_fraction"],
            artifact_dict["median_option_duration"],
            artifact_dict["success_rate"],
            artifact_dict["diffusion_time"],
            visitation,
            artifact_dict["alpha"],
            artifact_dict["lam"],
            artifact_dict["pairwise_kl"],
            artifact_dict["log_likelihood"],
        )


def build_report(
    label: str,
    grid: GridMap,
    expert_values: ValueTable,
    table: SmdpQTable,
    option_set: OptionSet,
    agent_rollouts: Sequence[SegmentedRollout],
    expert_visitation: Visitation,
    diffusion: DiffusionTime,
    params: Optional[DdoParams] = None,
    lam: float = 0.0,
    log_likelihood: Optional[float] = None,
) -> MetricReport:
    """Assembles every metric for one evaluated agent.

    The CE metric weights states by ``expert_visitation`` and compares the
    expert's greedy action against the agent's empirical action frequencies.
    The goal cell, where the expert never acts, carries no weight.

    Raises:
        EmptyInputError: No agent rollouts, or the expert visited nothing but
            the goal.
    """
    usage = usage_stats(agent_rollouts)
    rho = expert_visitation.weights(grid)
    rho[grid.index(expert_values.goal)] = 0.0
    if rho.sum() <= 0.0:
        raise EmptyInputError("expert visitation has no acting states")
    rho /= rho.sum()
    agent_dist = empirical_action_distribution(agent_rollouts, grid)
    report = MetricReport(
        label=label,
        ce_error=cross_entropy_metric(
            greedy_policy(expert_values), agent_dist, rho
        ),
        hinge_loss=hinge_value_loss(table.values(), expert_values.v),
        per_option_termination=termination_stats(
            params if params is not None else option_set
        ),
        option_time_fraction=usage.option_time_fraction,
        median_option_duration=usage.median_duration,
        success_rate=usage.success_rate,
        diffusion_time=diffusion.value,
        visitation=visitation_counts(agent_rollouts).counts,
        alpha=params.termination_scale if params is not None else 1.0,
        lam=lam,
        pairwise_kl=pairwise_option_kl(params, rho)
        if params is not None
        else 0.0,
        log_likelihood=log_likelihood,
    )
    logger.info(
        "%s: success %.2f, CE %.4f, hinge %.4f, option time %.2f",
        label,
        report.success_rate,
        report.ce_error,
        report.hinge_loss,
        report.option_time_fraction,
    )
    return report


Table = Tuple[List[str], List[List[Any]]]


def metric_tables(reports: Sequence[MetricReport]) -> Dict[str, Table]:
    """The five summary tables (header, rows) keyed by file stem."""
    terminations: List[List[Any]] = []
    for report in reports:
        for h, (mean, var) in enumerate(report.per_option_termination):
            terminations.append([report.label, f"opt{h}", mean, var])

    return {
        "termination_stats": (
            ["run", "option", "mean_termination", "variance"],
            terminations,
        ),
        "ce_error": (
            ["run", "ce_error"],
            [[r.label, r.ce_error] for r in reports],
        ),
        "hinge_error": (
            ["run", "hinge_loss"],
            [[r.label, r.hinge_loss] for r in reports],
        ),
        "alpha": (
            [
                "run",
                "alpha",
                "option_time_fraction",
                "median_option_duration",
                "hinge_loss",
                "success_rate",
            ],
            [
                [
                    r.label,
                    r.alpha,
                    r.option_time_fraction,
                    r.median_option_duration,
                    r.hinge_loss,
                    r.success_rate,
                ]
                for r in reports
            ],
        ),
        "lambda": (
            ["run", "lambda", "pairwise_kl", "hinge_loss", "success_rate"],
            [
                [r.label, r.lam, r.pairwise_kl, r.hinge_loss, r.success_rate]
                for r in reports
            ],
        ),
    }


def format_csv(table: Table) -> str:
    header, rows = table
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_text_table(table: Table) -> str:
    """Columns padded to their widest cell, numbers right-aligned."""
    header, rows = table
    cells = [header] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for n, row in enumerate(cells):
        padded = [
            cell.ljust(width) if n == 0 or i == 0 else cell.rjust(width)
            for i, (cell, width) in enumerate(zip(row, widths))
        ]
        lines.append("  ".join(padded).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
