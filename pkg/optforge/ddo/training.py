# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Expectation-gradient training of DDO parameters.

The gradient of the dynamics-free log-likelihood is a posterior-weighted sum
of log-probability gradients, each pushed through its softmax or logistic in
closed form:

* ``v_t(h)`` weights ``grad log eta(h|s_t)``
* ``u_t(h)`` weights ``grad log pi_h(a_t|s_t)``
* ``u_t(h) - w_t(h)`` weights ``grad log psi_h(s_{t+1})`` and ``w_t(h)``
  weights ``grad log (1 - psi_h(s_{t+1}))``

An optional diversity term ``lam * E_rho sum_{i != j} KL(pi_i || pi_j)``
pushes option policies apart. ``train()`` runs gradient ascent on the mean
per-trajectory log-likelihood plus that term. Full-batch steps are halved
while they would lower the objective, so its value never drops between
epochs.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from optforge import settings
from optforge.ddo.config import TrainConfig
from optforge.ddo.inference import (
    IndexedTrajectory,
    forward_backward,
    log_likelihood,
)
from optforge.ddo.params import DdoParams, initialize_params, scale_termination
from optforge.expert import OptionDefinition
from optforge.gridworld import N_ACTIONS
from optforge.smdp import OptionSet

logger = logging.getLogger(__name__)


@dataclass
class ParamGradient:
    """Gradient with the shapes of the ``DdoParams`` logit tables."""

    eta: np.ndarray
    pi: np.ndarray
    psi: np.ndarray


@dataclass
class TrainHistory:
    """Per-epoch training record.

    Args:
        initial_log_likelihood: Dataset log-likelihood before training.
        log_likelihoods: Dataset log-likelihood after each epoch.
        regularizers: Diversity term value after each epoch.
        progressed: False if training did not raise the log-likelihood.
    """

    initial_log_likelihood: float
    log_likelihoods: List[float] = field(default_factory=list)
    regularizers: List[float] = field(default_factory=list)
    progressed: bool = False

    @property
    def final_log_likelihood(self) -> float:
        if not self.log_likelihoods:
            return self.initial_log_likelihood
        return self.log_likelihoods[-1]


def _pairwise_kl(params: DdoParams) -> np.ndarray:
    """``KL(pi_i(.|s) || pi_j(.|s))``, shape ``(H, H, n_states)``."""
    logp = log_softmax(params.pi_logits, axis=2)
    p = np.exp(logp)
    entropy_term = np.einsum("isa,isa->is", p, logp)
    cross = np.einsum("isa,jsa->ijs", p, logp)
    kl = entropy_term[:, None, :] - cross
    idx = np.arange(params.n_options)
    kl[idx, idx, :] = 0.0
    return kl


def regularizer(params: DdoParams, rho: np.ndarray) -> float:
    """``E_rho sum_{i != j} KL(pi_i(.|s) || pi_j(.|s))`` over ordered
    pairs."""
    return float(_pairwise_kl(params).sum(axis=(0, 1)) @ rho)


def pairwise_option_kl(params: DdoParams, rho: np.ndarray) -> float:
    """Mean ``rho``-weighted KL over ordered option pairs; 0 for one
    option."""
    h = params.n_options
    if h < 2:
        return 0.0
    return regularizer(params, rho) / (h * (h - 1))


def _regularizer_gradient(params: DdoParams, rho: np.ndarray) -> np.ndarray:
    """Gradient of ``regularizer()`` with respect to ``pi_logits``."""
    h = params.n_options
    logp = log_softmax(params.pi_logits, axis=2)
    p = np.exp(logp)
    kl_rows = _pairwise_kl(params).sum(axis=1)
    grad = p * (
        h * logp - logp.sum(axis=0)[None] - kl_rows[:, :, None]
    ) + (h * p - p.sum(axis=0)[None])
    return grad * rho[None, :, None]


def gradient(
    params: DdoParams,
    dataset: Sequence[IndexedTrajectory],
    lam: float = 0.0,
    rho: Optional[np.ndarray] = None,
) -> ParamGradient:
    """Gradient of ``sum_xi log P(xi) + lam * regularizer(params, rho)``.

    Trajectory contributions are accumulated in dataset order.

    Raises:
        ValueError: ``lam < 0``, or ``lam > 0`` without ``rho``.
        DegenerateLikelihoodError: Propagated from ``forward_backward()``.
    """
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")

    eta = params.eta()
    pi = params.pi()
    psi = params.psi()
    # state-major accumulators, transposed at the end
    g_eta = np.zeros_like(params.eta_logits)
    g_pi = np.zeros((params.n_states, params.n_options, N_ACTIONS))
    g_psi = np.zeros((params.n_states, params.n_options))

    for xi in dataset:
        post = forward_backward(params, xi)
        visited = xi.states[:-1]

        eta_term = post.v - post.v.sum(axis=1, keepdims=True) * eta[visited]
        np.add.at(g_eta, visited, eta_term)

        chosen = np.eye(N_ACTIONS)[xi.actions]
        pi_term = post.u[:, :, None] * (
            chosen[:, None, :] - pi[:, visited, :].transpose(1, 0, 2)
        )
        np.add.at(g_pi, visited, pi_term)

        if xi.length > 1:
            arrived = xi.states[1:-1]
            u, w = post.u[:-1], post.w[:-1]
            psi_term = (u - w) - u * psi[:, arrived].T
            np.add.at(g_psi, arrived, psi_term)

    grad = ParamGradient(g_eta, g_pi.transpose(1, 0, 2), g_psi.T)
    if lam > 0:
        if rho is None:
            raise ValueError("the diversity term needs state weights rho")
        grad.pi = grad.pi + lam * _regularizer_gradient(params, rho)
    return grad


def objective(
    params: DdoParams,
    dataset: Sequence[IndexedTrajectory],
    lam: float = 0.0,
    rho: Optional[np.ndarray] = None,
) -> float:
    """``log_likelihood + lam * regularizer``, the quantity ``gradient()``
    differentiates."""
    value = log_likelihood(params, dataset)
    if lam > 0:
        if rho is None:
            raise ValueError("the diversity term needs state weights rho")
        value += lam * regularizer(params, rho)
    return value


def state_weights(
    dataset: Sequence[IndexedTrajectory], n_states: int, mode: str
) -> np.ndarray:
    """Regularizer state weights: visitation frequency of the states where
    the dataset acts, or uniform."""
    if mode == "uniform":
        return np.full(n_states, 1.0 / n_states)

    counts = np.zeros(n_states)
    for xi in dataset:
        np.add.at(counts, xi.states[:-1], 1.0)
    return counts / counts.sum()


def _apply(params: DdoParams, grad: ParamGradient, step: float) -> DdoParams:
    return DdoParams(
        params.eta_logits + step * grad.eta,
        params.pi_logits + step * grad.pi,
        params.psi_logits + step * grad.psi,
        params.termination_scale,
        params.map_id,
    )


def _full_batch_step(
    params: DdoParams,
    dataset: Sequence[IndexedTrajectory],
    config: TrainConfig,
    rho: np.ndarray,
    current: float,
) -> Tuple[DdoParams, float]:
    """Takes the largest of ``lr, lr/2, lr/4, ...`` that does not lower the
    objective from ``current``. Returns the new parameters and objective."""
    lam = config.lam * len(dataset)
    grad = gradient(params, dataset, lam, rho)
    step = config.learning_rate / len(dataset)
    for halvings in range(settings.MAX_STEP_HALVINGS + 1):
        candidate = _apply(params, grad, step)
        value = objective(candidate, dataset, lam, rho)
        if value >= current:
            if halvings:
                logger.debug("Step halved %d times", halvings)
            return candidate, value
        step /= 2

    logger.debug("No ascent step found, parameters unchanged")
    return params, current


def train(
    dataset: Sequence[IndexedTrajectory],
    config: TrainConfig,
    n_states: int,
    rng: Optional[np.random.Generator] = None,
    init_params: Optional[DdoParams] = None,
    map_id: str = "",
) -> Tuple[DdoParams, TrainHistory]:
    """Fits DDO parameters by gradient ascent.

    Each step follows the gradient of the minibatch's mean log-likelihood
    plus ``config.lam`` times the diversity term. Without minibatches the
    step is halved until that objective does not drop. The returned parameters
    carry ``config.alpha`` as their termination scale.

    Args:
        dataset: Training trajectories.
        config: Training settings.
        n_states: Free states of the map.
        rng: Stream for initialization and shuffling; defaults to
            ``default_rng(config.seed)``.
        init_params: Warm start. Only the logits are used.
        map_id: Recorded on freshly initialized parameters.

    Raises:
        ValueError: Empty dataset or mismatching ``init_params``.
        DegenerateLikelihoodError: Propagated from inference.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    if init_params is not None:
        if (
            init_params.n_states != n_states
            or init_params.n_options != config.n_options
        ):
            raise ValueError(
                f"warm start has {init_params.n_options} options over "
                f"{init_params.n_states} states, expected {config.n_options} "
                f"over {n_states}"
            )
        params = init_params.copy(termination_scale=1.0)
    else:
        params = initialize_params(n_states, config, rng, map_id)

    rho = state_weights(dataset, n_states, config.rho)
    history = TrainHistory(log_likelihood(params, dataset))
    batch_size = config.minibatch or len(dataset)
    full_batch = batch_size >= len(dataset)
    current = objective(params, dataset, config.lam * len(dataset), rho)

    for epoch in range(config.epochs):
        if full_batch:
            params, current = _full_batch_step(
                params, dataset, config, rho, current
            )
        else:
            order = rng.permutation(len(dataset))
            for start in range(0, len(dataset), batch_size):
                batch = [dataset[i] for i in order[start : start + batch_size]]
                grad = gradient(params, batch, config.lam * len(batch), rho)
                params = _apply(
                    params, grad, config.learning_rate / len(batch)
                )

        history.log_likelihoods.append(log_likelihood(params, dataset))
        history.regularizers.append(regularizer(params, rho))
        logger.debug(
            "Epoch %d/%d: log-likelihood %.6f, diversity %.6f",
            epoch + 1,
            config.epochs,
            history.log_likelihoods[-1],
            history.regularizers[-1],
        )

    history.progressed = (
        history.final_log_likelihood > history.initial_log_likelihood
    )
    if config.epochs > 0 and not history.progressed:
        logger.warning(
            "NoProgress: log-likelihood %.6f after %d epochs did not improve "
            "on the initial %.6f",
            history.final_log_likelihood,
            config.epochs,
            history.initial_log_likelihood,
        )
    else:
        logger.info(
            "Trained %d options for %d epochs: log-likelihood %.6f -> %.6f",
            config.n_options,
            config.epochs,
            history.initial_log_likelihood,
            history.final_log_likelihood,
        )

    if config.alpha != 1.0:
        params = scale_termination(params, config.alpha)
    return params, history


def extract_options(params: DdoParams) -> OptionSet:
    """One option per ``h`` labelled ``opt{h}``, with policy ``pi_h`` and the
    scaled termination."""
    pi = params.pi()
    termination = params.termination()
    return OptionSet(
        [
            OptionDefinition(f"opt{h}", pi[h], termination[h])
            for h in range(params.n_options)
        ]
    )
