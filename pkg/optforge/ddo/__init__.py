# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Deep discovery of options for tabular gridworlds.

Infers H options (meta-policy, option policies and terminations) from flat
trajectories by maximizing their dynamics-free likelihood::

    params, history = train(index_dataset(trajectories, grid), TrainConfig(),
                            grid.n_states)
    options = extract_options(params)
"""

from optforge.ddo.config import TrainConfig
from optforge.ddo.inference import (
    IndexedTrajectory,
    PosteriorTables,
    brute_force_posteriors,
    forward_backward,
    index_dataset,
    log_likelihood,
)
from optforge.ddo.params import DdoParams, initialize_params, scale_termination
from optforge.ddo.training import (
    ParamGradient,
    TrainHistory,
    extract_options,
    gradient,
    objective,
    pairwise_option_kl,
    regularizer,
    state_weights,
    train,
)
