# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Experiment orchestration.

``run_pipeline()`` runs the stages of one experiment in order::

    expert -> ddo -> smdp -> eval

``expert`` samples the expert dataset (and a held-out set), ``ddo`` infers
options from it, ``smdp`` learns a meta-policy over primitives and the
extracted options for the evaluation goal, and ``eval`` rolls the
meta-policy out and computes the metric report.

``run_iterated()`` wraps the last three stages in the iterated discovery
loop: a trajectory buffer starts as the expert dataset, and every iteration
trains on a sample of it and appends agent trajectories to it.

Every stage draws randomness from its own stream, derived from the root seed
and a fixed per-stage key, so a (config, seed) pair determines every output
byte. Stages write a manifest when they finish; a rerun whose inputs are
unchanged loads verified outputs instead of recomputing them.

A stage that fails raises ``StageError`` naming it; files of the stages
before it stay on disk.
"""

import contextlib
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np

from optforge.api.exceptions import (
    ConfigError,
    MapError,
    PlanningError,
    StageError,
)
from optforge.api.serialization.json import JSONLinesSerializer
from optforge.ddo import (
    DdoParams,
    TrainHistory,
    extract_options,
    index_dataset,
    log_likelihood,
    train,
)
from optforge.expert import (
    ExpertConfig,
    Trajectory,
    ValueTable,
    greedy_policy,
    make_handcoded_option,
    rollout_flat,
    sample_dataset,
    value_iteration,
)
from optforge.gridworld import (
    BUNDLED_MAPS,
    GridMap,
    MdpSpec,
    State,
    find_doorways,
    load_bundled_map,
    load_map,
    sample_start,
)
from optforge.metrics import (
    MetricReport,
    build_report,
    diffusion_time,
    format_csv,
    format_text_table,
    metric_tables,
    visitation_counts,
)
from optforge.pipeline._internal.artifact_store import (
    ArtifactStore,
    digest_bytes,
    digest_canonical,
)
from optforge.pipeline.config import (
    ExperimentConfig,
    config_fields,
    parse_cells,
)
from optforge.smdp import (
    OptionSet,
    SegmentedRollout,
    SmdpConfig,
    SmdpQTable,
    rollout_meta,
    smdp_q_learning,
)

logger = logging.getLogger(__name__)

STAGES = ("expert", "ddo", "smdp", "eval")

# Spawn keys of the per-stage random streams. Changing a value changes every
# result of that stage.
_STREAM_KEYS = {
    "expert": 0,
    "held_out": 1,
    "ddo": 2,
    "goal": 3,
    "smdp": 4,
    "eval": 5,
    "sample": 6,
    "agent": 7,
}


def stage_rng(
    seed: int, stream: str, iteration: int = 0
) -> np.random.Generator:
    """Independent generator for one stage of one iteration."""
    return np.random.default_rng(
        np.random.SeedSequence(
            seed, spawn_key=(_STREAM_KEYS[stream], iteration)
        )
    )


@contextlib.contextmanager
def _stage(name: str) -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error("Stage %s failed: %s", name, e)
        raise StageError(name, e) from e


@dataclass
class _EpochRecord:
    epoch: int
    log_likelihood: float
    regularizer: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, record: Dict[str, Any]) -> "_EpochRecord":
        return cls(
            int(record["epoch"]),
            float(record["log_likelihood"]),
            record["regularizer"],
        )


def _history_records(history: TrainHistory) -> List[_EpochRecord]:
    records = [_EpochRecord(0, history.initial_log_likelihood, None)]
    for epoch, (ll, reg) in enumerate(
        zip(history.log_likelihoods, history.regularizers), 1
    ):
        records.append(_EpochRecord(epoch, ll, reg))
    return records


def _history_from_records(records: Sequence[_EpochRecord]) -> TrainHistory:
    history = TrainHistory(records[0].log_likelihood)
    for record in records[1:]:
        history.log_likelihoods.append(record.log_likelihood)
        history.regularizers.append(float(record.regularizer or 0.0))
    history.progressed = (
        history.final_log_likelihood > history.initial_log_likelihood
    )
    return history


@dataclass
class PipelineResult:
    """Outputs of the stages that ran; later ones stay empty."""

    grid: GridMap
    trajectories: List[Trajectory] = field(default_factory=list)
    held_out: List[Trajectory] = field(default_factory=list)
    params: Optional[DdoParams] = None
    history: Optional[TrainHistory] = None
    option_set: Optional[OptionSet] = None
    goal: Optional[State] = None
    table: Optional[SmdpQTable] = None
    expert_values: Optional[ValueTable] = None
    rollouts: List[SegmentedRollout] = field(default_factory=list)
    report: Optional[MetricReport] = None


@dataclass
class IteratedResult:
    """Per-iteration outputs of ``run_iterated()`` and the final buffer."""

    iterations: List[PipelineResult]
    buffer: List[Trajectory]


def load_experiment_map(config: ExperimentConfig) -> GridMap:
    """Raises:
    ConfigError: The map is neither bundled nor a readable, valid map file.
    """
    try:
        if config.map in BUNDLED_MAPS:
            return load_bundled_map(config.map)
        return load_map(config.map)
    except (OSError, MapError) as e:
        raise ConfigError(f"Cannot load map '{config.map}': {e}") from e


def sample_hierarchical_dataset(
    grid: GridMap,
    spec: MdpSpec,
    config: ExpertConfig,
    smdp_config: SmdpConfig,
    rng: np.random.Generator,
) -> List[Trajectory]:
    """Expert trajectories from hand-coded subgoal options under SMDP
    meta-policies, with per-step choice annotations.

    Tasks draw their goal from a pool of ``config.hierarchical_goals``
    cells; each pooled goal gets its own meta-policy.

    Raises:
        PlanningError: No subgoals are configured and the map has no
            doorways.
    """
    subgoals = parse_cells(config.subgoals) or tuple(find_doorways(grid))
    if not subgoals:
        raise PlanningError(
            f"map {grid.name} has no doorways to use as subgoals"
        )
    option_set = OptionSet([make_handcoded_option(grid, g) for g in subgoals])

    pool_size = min(config.hierarchical_goals, grid.n_states)
    pool = [
        grid.free_states[int(i)]
        for i in rng.choice(grid.n_states, size=pool_size, replace=False)
    ]
    learner_config = dataclasses.replace(
        smdp_config, episodes=config.hierarchical_episodes
    )
    tables = {
        goal: smdp_q_learning(grid, spec, goal, option_set, learner_config, rng)
        for goal in pool
    }

    dataset = []
    for _ in range(config.n_trajectories):
        seed = int(rng.integers(2**31))
        traj_rng = np.random.default_rng(seed)
        goal = pool[int(traj_rng.integers(len(pool)))]
        rollout = rollout_meta(
            grid,
            spec,
            tables[goal],
            option_set,
            sample_start(grid, goal, traj_rng),
            traj_rng,
            option_max_steps=smdp_config.option_max_steps,
        )
        dataset.append(rollout.to_trajectory(seed))

    logger.info(
        "Sampled %d hierarchical expert trajectories with %d subgoal options",
        len(dataset),
        len(option_set),
    )
    return dataset


class ExperimentRunner:
    """Runs the stages of one experiment against an output directory.

    Args:
        config: The experiment.
        store: Output store. Default is an ``ArtifactStore`` at
            ``config.out``.
    """

    def __init__(
        self, config: ExperimentConfig, store: Optional[ArtifactStore] = None
    ):
        self.config = config
        self.store = store or ArtifactStore(config.out)
        self.grid = load_experiment_map(config)

    def _digest(self, stage: str, upstream: str, **extra: Any) -> str:
        return digest_canonical(
            {
                "stage": stage,
                "upstream": upstream,
                "seed": str(self.config.seed),
                "map": self.grid.to_text(),
                "mdp": config_fields(self.config.mdp),
                **extra,
            }
        )

    def evaluation_goal(self) -> State:
        """The configured evaluation goal, or one drawn from the seed."""
        goal = self.config.eval.goal_cell()
        if goal is not None:
            if not self.grid.is_free(goal):
                raise StageError(
                    "smdp", ValueError(f"evaluation goal {goal} is not free")
                )
            return goal
        rng = stage_rng(self.config.seed, "goal")
        return self.grid.free_states[int(rng.integers(self.grid.n_states))]

    def expert_values(self, goal: State) -> ValueTable:
        """Expert values for ``goal``, outside of any stored stage.

        Raises:
            StageError: Value iteration failed.
        """
        cfg = self.config
        with _stage("expert"):
            return value_iteration(
                self.grid,
                cfg.mdp,
                goal,
                cfg.expert.vi_tolerance,
                cfg.expert.vi_max_iters,
            )

    def expert_stage(self, result: PipelineResult) -> str:
        """Samples the expert and held-out datasets. Returns the stage
        manifest digest."""
        cfg = self.config
        stage = "expert"
        digest = self._digest(
            stage,
            "",
            expert=config_fields(cfg.expert),
            smdp=config_fields(cfg.smdp),
            held_out=str(cfg.eval.held_out_trajectories),
        )
        with _stage(stage):
            if self.store.verify_stage(stage, digest):
                result.trajectories = self.store.read_records(
                    stage, "trajectories.jsonl", Trajectory.from_dict
                )
                result.held_out = self.store.read_records(
                    stage, "held_out.jsonl", Trajectory.from_dict
                )
                return self.store.manifest_digest(stage)

            result.trajectories = self._sample_expert(
                cfg.expert, stage_rng(cfg.seed, "expert")
            )
            if cfg.eval.held_out_trajectories > 0:
                result.held_out = self._sample_expert(
                    dataclasses.replace(
                        cfg.expert,
                        n_trajectories=cfg.eval.held_out_trajectories,
                    ),
                    stage_rng(cfg.seed, "held_out"),
                )
            self.store.write_records(
                stage, "trajectories.jsonl", result.trajectories
            )
            self.store.write_records(stage, "held_out.jsonl", result.held_out)
            self.store.write_manifest(stage, digest)
            return self.store.manifest_digest(stage)

    def _sample_expert(
        self, expert_config: ExpertConfig, rng: np.random.Generator
    ) -> List[Trajectory]:
        if expert_config.kind == "hierarchical":
            return sample_hierarchical_dataset(
                self.grid, self.config.mdp, expert_config, self.config.smdp, rng
            )
        return sample_dataset(self.grid, self.config.mdp, expert_config, rng)

    def ddo_stage(
        self,
        result: PipelineResult,
        dataset: Sequence[Trajectory],
        upstream: str,
        prefix: str = "",
        iteration: int = 0,
        init_params: Optional[DdoParams] = None,
    ) -> str:
        cfg = self.config
        stage = f"{prefix}ddo"
        digest = self._digest(
            stage,
            upstream,
            ddo=config_fields(cfg.ddo),
            iteration=str(iteration),
            init=""
            if init_params is None
            else digest_bytes(init_params.to_bytes()),
        )
        with _stage(stage):
            if self.store.verify_stage(stage, digest):
                result.params = DdoParams.from_bytes(
                    self.store.read_bytes(stage, "ddo_params.json")
                )
                result.history = _history_from_records(
                    self.store.read_records(
                        stage, "history.jsonl", _EpochRecord.from_dict
                    )
                )
            else:
                result.params, result.history = train(
                    index_dataset(dataset, self.grid),
                    cfg.ddo,
                    self.grid.n_states,
                    rng=stage_rng(cfg.seed, "ddo", iteration),
                    init_params=init_params,
                    map_id=self.grid.name,
                )
                self.store.write_artifact(
                    stage, "ddo_params.json", result.params
                )
                self.store.write_records(
                    stage, "history.jsonl", _history_records(result.history)
                )
                self.store.write_manifest(stage, digest)

            result.option_set = extract_options(result.params)
            return self.store.manifest_digest(stage)

    def smdp_stage(
        self,
        result: PipelineResult,
        upstream: str,
        prefix: str = "",
        iteration: int = 0,
    ) -> str:
        cfg = self.config
        stage = f"{prefix}smdp"
        assert result.option_set is not None
        with _stage(stage):
            result.goal = self.evaluation_goal()
            digest = self._digest(
                stage,
                upstream,
                smdp=config_fields(cfg.smdp),
                goal=repr(result.goal),
                iteration=str(iteration),
            )
            if self.store.verify_stage(stage, digest):
                result.table = SmdpQTable.from_bytes(
                    self.store.read_bytes(stage, "smdp_q_table.json")
                )
            else:
                result.table = smdp_q_learning(
                    self.grid,
                    cfg.mdp,
                    result.goal,
                    result.option_set,
                    cfg.smdp,
                    stage_rng(cfg.seed, "smdp", iteration),
                )
                self.store.write_artifact(
                    stage, "smdp_q_table.json", result.table
                )
                self.store.write_manifest(stage, digest)
            return self.store.manifest_digest(stage)

    def eval_stage(
        self,
        result: PipelineResult,
        upstream: str,
        prefix: str = "",
        iteration: int = 0,
        label: str = "pipeline",
    ) -> str:
        cfg = self.config
        stage = f"{prefix}eval"
        assert result.table is not None and result.goal is not None
        assert result.option_set is not None and result.params is not None
        digest = self._digest(
            stage,
            upstream,
            eval=config_fields(cfg.eval),
            label=label,
            iteration=str(iteration),
        )
        with _stage(stage):
            if self.store.verify_stage(stage, digest):
                result.expert_values = ValueTable.from_bytes(
                    self.store.read_bytes(stage, "expert_values.json")
                )
                result.rollouts = self.store.read_records(
                    stage, "rollouts.jsonl", SegmentedRollout.from_dict
                )
                result.report = MetricReport.from_bytes(
                    self.store.read_bytes(stage, "metric_report.json")
                )
                return self.store.manifest_digest(stage)

            self._evaluate(
                result, stage_rng(cfg.seed, "eval", iteration), label
            )
            assert result.expert_values is not None
            assert result.report is not None
            self.store.write_artifact(
                stage, "expert_values.json", result.expert_values
            )
            self.store.write_records(stage, "rollouts.jsonl", result.rollouts)
            self.store.write_artifact(
                stage, "metric_report.json", result.report
            )
            self._write_tables(stage, [result.report])
            self.store.write_manifest(stage, digest)
            return self.store.manifest_digest(stage)

    def _evaluate(
        self, result: PipelineResult, rng: np.random.Generator, label: str
    ) -> None:
        cfg = self.config
        grid, mdp = self.grid, cfg.mdp
        assert result.goal is not None and result.table is not None
        assert result.option_set is not None and result.params is not None

        result.expert_values = value_iteration(
            grid,
            mdp,
            result.goal,
            cfg.expert.vi_tolerance,
            cfg.expert.vi_max_iters,
        )
        tasks = [
            sample_start(grid, result.goal, rng)
            for _ in range(cfg.eval.n_eval_tasks)
        ]
        result.rollouts = [
            rollout_meta(
                grid,
                mdp,
                result.table,
                result.option_set,
                task,
                rng,
                option_max_steps=cfg.smdp.option_max_steps,
            )
            for task in tasks
        ]
        expert_policy = greedy_policy(result.expert_values)
        expert_rollouts = [
            rollout_flat(
                grid, mdp, task, expert_policy, rng, mdp.max_episode_steps
            )
            for task in tasks
        ]
        diffusion = diffusion_time(
            grid,
            result.option_set,
            mode=cfg.eval.diffusion_mode,
            samples=cfg.eval.diffusion_samples,
            rng=rng,
            spec=mdp,
            cap=cfg.eval.diffusion_cap,
            option_max_steps=cfg.smdp.option_max_steps,
        )
        held_out_ll = (
            log_likelihood(result.params, index_dataset(result.held_out, grid))
            if result.held_out
            else None
        )
        result.report = build_report(
            label,
            grid,
            result.expert_values,
            result.table,
            result.option_set,
            result.rollouts,
            visitation_counts(expert_rollouts),
            diffusion,
            params=result.params,
            lam=cfg.ddo.lam,
            log_likelihood=held_out_ll,
        )

    def _write_tables(
        self, stage: str, reports: Sequence[MetricReport]
    ) -> None:
        for name, table in metric_tables(reports).items():
            self.store.write_text(stage, f"{name}.csv", format_csv(table))
            self.store.write_text(
                stage, f"{name}.txt", format_text_table(table)
            )

    def run(self, until: Optional[str] = None) -> PipelineResult:
        """Runs the stages up to and including ``until`` (default: all).

        Raises:
            ValueError: Unknown stage name.
            StageError: A stage failed.
        """
        if until is not None and until not in STAGES:
            raise ValueError(f"unknown stage {until}, have {STAGES}")
        last = STAGES.index(until) if until is not None else len(STAGES) - 1

        result = PipelineResult(self.grid)
        digest = self.expert_stage(result)
        if last >= 1:
            digest = self.ddo_stage(result, result.trajectories, digest)
        if last >= 2:
            digest = self.smdp_stage(result, digest)
        if last >= 3:
            self.eval_stage(result, digest)
        return result

    def agent_stage(
        self,
        result: PipelineResult,
        upstream: str,
        prefix: str,
        iteration: int,
    ) -> List[Trajectory]:
        """Rolls out the trained meta-policy to extend the replay buffer."""
        cfg = self.config
        if cfg.iterate.agent_rollouts == 0:
            return []

        stage = f"{prefix}agent"
        digest = self._digest(
            stage,
            upstream,
            smdp=config_fields(cfg.smdp),
            agent_rollouts=str(cfg.iterate.agent_rollouts),
            iteration=str(iteration),
        )
        with _stage(stage):
            if self.store.verify_stage(stage, digest):
                return self.store.read_records(
                    stage, "agent_trajectories.jsonl", Trajectory.from_dict
                )

            trajectories = self._agent_trajectories(result, iteration)
            self.store.write_records(
                stage, "agent_trajectories.jsonl", trajectories
            )
            self.store.write_manifest(stage, digest)
            return trajectories

    def _agent_trajectories(
        self, result: PipelineResult, iteration: int
    ) -> List[Trajectory]:
        cfg = self.config
        assert result.table is not None and result.goal is not None
        assert result.option_set is not None
        rng = stage_rng(cfg.seed, "agent", iteration)
        trajectories = []
        for _ in range(cfg.iterate.agent_rollouts):
            seed = int(rng.integers(2**31))
            traj_rng = np.random.default_rng(seed)
            rollout = rollout_meta(
                self.grid,
                cfg.mdp,
                result.table,
                result.option_set,
                sample_start(self.grid, result.goal, traj_rng),
                traj_rng,
                greedy=False,
                epsilon=cfg.smdp.eval_epsilon,
                option_max_steps=cfg.smdp.option_max_steps,
            )
            trajectories.append(rollout.to_trajectory(seed))
        return trajectories

    def run_iterated(self) -> IteratedResult:
        """Runs the iterated discovery loop.

        Raises:
            StageError: A stage failed.
        """
        cfg = self.config
        seed_result = PipelineResult(self.grid)
        digest = self.expert_stage(seed_result)
        buffer = list(seed_result.trajectories)

        iterations: List[PipelineResult] = []
        params: Optional[DdoParams] = None
        for i in range(cfg.iterate.n_iterations):
            prefix = f"iter_{i + 1}/"
            result = PipelineResult(
                self.grid,
                trajectories=self._sample_buffer(buffer, i),
                held_out=seed_result.held_out,
            )
            init = params if cfg.iterate.warm_start else None
            ddo_digest = self.ddo_stage(
                result,
                result.trajectories,
                digest_bytes(
                    JSONLinesSerializer().serialize(result.trajectories)
                ),
                prefix,
                i,
                init,
            )
            smdp_digest = self.smdp_stage(result, ddo_digest, prefix, i)
            self.eval_stage(
                result, smdp_digest, prefix, i, label=f"iteration {i + 1}"
            )
            params = result.params
            iterations.append(result)

            buffer.extend(self.agent_stage(result, smdp_digest, prefix, i))
            logger.info(
                "Iteration %d/%d done, buffer holds %d trajectories",
                i + 1,
                cfg.iterate.n_iterations,
                len(buffer),
            )

        reports = [r.report for r in iterations if r.report is not None]
        with _stage("summary"):
            self._write_tables("summary", reports)
            self.store.write_manifest(
                "summary",
                digest_canonical([r.label for r in reports]),
            )
        return IteratedResult(iterations, buffer)

    def _sample_buffer(
        self, buffer: List[Trajectory], iteration: int
    ) -> List[Trajectory]:
        size = self.config.iterate.sample_size
        if size == 0 or size >= len(buffer):
            return list(buffer)
        rng = stage_rng(self.config.seed, "sample", iteration)
        chosen = np.sort(rng.choice(len(buffer), size=size, replace=False))
        return [buffer[int(i)] for i in chosen]


def run_pipeline(
    config: ExperimentConfig, until: Optional[str] = None
) -> PipelineResult:
    """Runs expert, ddo, smdp and eval in order, up to ``until``.

    Raises:
        StageError: A stage failed.
    """
    return ExperimentRunner(config).run(until)


def run_iterated(config: ExperimentConfig) -> IteratedResult:
    """Runs the iterated discovery loop for ``config.iterate.n_iterations``
    iterations.

    Raises:
        StageError: A stage failed.
    """
    return ExperimentRunner(config).run_iterated()
