# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""DDO parameters: option logits and their probability readouts.

``DdoParams`` holds three logit tables over the free states of one map:

* ``eta_logits[s, h]``: meta-policy, ``eta(h|s) = softmax_h``
* ``pi_logits[h, s, a]``: option policies, ``pi_h(a|s) = softmax_a``
* ``psi_logits[h, s]``: terminations, ``psi_h(s) = logistic``

A ``termination_scale`` factor multiplies the termination readout of
executable options. It never touches the logits, so inference and training
always see the unscaled terminations.
"""

from typing import Any, Dict, Optional

import numpy as np
from scipy.special import expit, softmax

from optforge.api.artifact import Artifact
from optforge.api.exceptions import BadAlphaError
from optforge.ddo.config import TrainConfig
from optforge.gridworld import N_ACTIONS


class DdoParams(Artifact):
    """Logits of an H-option DDO model.

    *All parameters named below are not just constructor arguments but also
    instance attributes.*

    Args:
        eta_logits: Shape ``(n_states, n_options)``.
        pi_logits: Shape ``(n_options, n_states, 4)``.
        psi_logits: Shape ``(n_options, n_states)``.
        termination_scale: Factor in (0, 1] applied to terminations of
            extracted options.
        map_id: Name of the map whose free states index the tables.

    Raises:
        ValueError: Inconsistent shapes.
        BadAlphaError: ``termination_scale`` outside (0, 1].
    """

    type = "ddo_params"

    def __init__(
        self,
        eta_logits: np.ndarray,
        pi_logits: np.ndarray,
        psi_logits: np.ndarray,
        termination_scale: float = 1.0,
        map_id: str = "",
    ):
        n_states, n_options = eta_logits.shape
        if pi_logits.shape != (n_options, n_states, N_ACTIONS):
            raise ValueError(
                f"pi_logits has shape {pi_logits.shape}, expected "
                f"{(n_options, n_states, N_ACTIONS)}"
            )
        if psi_logits.shape != (n_options, n_states):
            raise ValueError(
                f"psi_logits has shape {psi_logits.shape}, expected "
                f"{(n_options, n_states)}"
            )
        if not 0.0 < termination_scale <= 1.0:
            raise BadAlphaError(
                f"termination scale must be in (0, 1], got {termination_scale}"
            )

        self.eta_logits = eta_logits
        self.pi_logits = pi_logits
        self.psi_logits = psi_logits
        self.termination_scale = termination_scale
        self.map_id = map_id

    @property
    def n_options(self) -> int:
        return self.eta_logits.shape[1]

    @property
    def n_states(self) -> int:
        return self.eta_logits.shape[0]

    def eta(self) -> np.ndarray:
        """Meta-policy ``eta(h|s)``, shape ``(n_states, n_options)``."""
        return softmax(self.eta_logits, axis=1)

    def pi(self) -> np.ndarray:
        """Option policies ``pi_h(a|s)``, shape ``(n_options, n_states, 4)``."""
        return softmax(self.pi_logits, axis=2)

    def psi(self) -> np.ndarray:
        """Unscaled terminations ``psi_h(s)``, shape
        ``(n_options, n_states)``."""
        return expit(self.psi_logits)

    def termination(self) -> np.ndarray:
        """Effective terminations ``termination_scale * psi_h(s)``."""
        return self.termination_scale * self.psi()

    def copy(
        self, termination_scale: Optional[float] = None
    ) -> "DdoParams":
        return DdoParams(
            self.eta_logits.copy(),
            self.pi_logits.copy(),
            self.psi_logits.copy(),
            self.termination_scale
            if termination_scale is None
            else termination_scale,
            self.map_id,
        )

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, DdoParams):
            return False

        return (
            np.array_equal(self.eta_logits, other.eta_logits)
            and np.array_equal(self.pi_logits, other.pi_logits)
            and np.array_equal(self.psi_logits, other.psi_logits)
            and self.termination_scale == other.termination_scale
            and self.map_id == other.map_id
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            **self._common_fields_to_dict(),
            "map_id": self.map_id,
            "n_options": self.n_options,
            "n_states": self.n_states,
            "n_actions": N_ACTIONS,
            "eta_logits": self.eta_logits.tolist(),
            "pi_logits": self.pi_logits.tolist(),
            "psi_logits": self.psi_logits.tolist(),
            "termination_scale": self.termination_scale,
        }

    @classmethod
    def from_dict(cls, artifact_dict: Dict[str, Any]) -> "DdoParams":
        """Creates ``DdoParams`` from its dict representation.

        Raises:
            ValueError, KeyError: Invalid arguments.
        """
        cls._check_common_fields(artifact_dict)
        params = cls(
            np.array(artifact_dict["eta_logits"], dtype=float),
            np.array(artifact_dict["pi_logits"], dtype=float),
            np.array(artifact_dict["psi_logits"], dtype=float),
            float(artifact_dict["termination_scale"]),
            artifact_dict["map_id"],
        )
        if (
            params.n_options != artifact_dict["n_options"]
            or params.n_states != artifact_dict["n_states"]
            or artifact_dict["n_actions"] != N_ACTIONS
        ):
            raise ValueError("shape metadata does not match the logit tables")

        return params


def scale_termination(params: DdoParams, alpha: float) -> DdoParams:
    """Returns a copy whose effective terminations are ``alpha`` times the
    input's. Scales compose multiplicatively; logits are untouched.

    Raises:
        BadAlphaError: ``alpha`` outside (0, 1].
    """
    if not 0.0 < alpha <= 1.0:
        raise BadAlphaError(f"alpha must be in (0, 1], got {alpha}")

    return params.copy(termination_scale=params.termination_scale * alpha)


def initialize_params(
    n_states: int,
    config: TrainConfig,
    rng: np.random.Generator,
    map_id: str = "",
) -> DdoParams:
    """Draws every logit from ``Normal(0, config.init_scale)``."""
    h = config.n_options
    return DdoParams(
        rng.normal(0.0, config.init_scale, size=(n_states, h)),
        rng.normal(0.0, config.init_scale, size=(h, n_states, N_ACTIONS)),
        rng.normal(0.0, config.init_scale, size=(h, n_states)),
        map_id=map_id,
    )
