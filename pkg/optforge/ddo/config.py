# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Configuration options for DDO training
"""

from dataclasses import dataclass

from optforge.api.exceptions import BadAlphaError

RHO_MODES = ("expert-visitation", "uniform")


@dataclass
class TrainConfig:
    """Used to store DDO training configuration.

    Args:
        n_options: Number of options H to infer.
        learning_rate: Gradient-ascent step size. Full-batch steps that would
            lower the objective are halved.
        epochs: Passes over the dataset.
        minibatch: Trajectories per gradient step; 0 uses the whole dataset.
        lam: Weight of the pairwise-KL option diversity regularizer.
        alpha: Termination scale applied to the trained options.
        seed: Seed for initialization and minibatch shuffling when training
            is run on its own; the pipeline passes its own stage stream.
        init_scale: Standard deviation of the Normal logit initialization.
        rho: State weighting of the regularizer, "expert-visitation" or
            "uniform".

    Raises:
        BadAlphaError: ``alpha`` outside (0, 1].
        ValueError: Any other invalid value.
    """

    n_options: int = 6
    learning_rate: float = 1.0
    epochs: int = 100
    minibatch: int = 0
    lam: float = 0.0
    alpha: float = 1.0
    seed: int = 0
    init_scale: float = 0.1
    rho: str = "expert-visitation"

    def __post_init__(self) -> None:
        if self.n_options < 1:
            raise ValueError(f"n_options must be >= 1, got {self.n_options}")
        if self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if self.epochs < 0 or self.minibatch < 0:
            raise ValueError("epochs and minibatch must be >= 0")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 < self.alpha <= 1.0:
            raise BadAlphaError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.init_scale < 0:
            raise ValueError(f"init_scale must be >= 0, got {self.init_scale}")
        if self.rho not in RHO_MODES:
            raise ValueError(f"rho must be one of {RHO_MODES}, got {self.rho}")
