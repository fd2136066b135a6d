# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Experiment configuration, orchestration and rendering."""

from optforge.pipeline.config import (
    EvalConfig,
    ExperimentConfig,
    IterateConfig,
    load_config,
)
from optforge.pipeline.render import render_policy
from optforge.pipeline.runner import (
    STAGES,
    ExperimentRunner,
    IteratedResult,
    PipelineResult,
    run_iterated,
    run_pipeline,
    stage_rng,
)
