# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""Latent option posteriors of a flat trajectory.

For a trajectory ``s_0, a_0, ..., s_T`` the hidden variables are, per step,
the active option ``h_t`` and a switch bit ``b_t`` (``b_0`` is always 1).
Environment dynamics cancel out of every posterior, so all likelihoods here
are dynamics-free: only meta-policy, option-policy and termination factors
appear.

``forward_backward()`` runs the scaled recursion. Forward values are
renormalized at every step by ``c_t`` (so each row of ``phi_scaled`` sums to
one) and backward values share the same normalizers, which makes the
posteriors plain products and ``log P(xi) = sum_t log c_t``.

``brute_force_posteriors()`` enumerates every latent sequence instead and
exists to check the recursion on small cases.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from optforge import settings
from optforge.api.exceptions import DegenerateLikelihoodError, TooLargeError
from optforge.ddo.params import DdoParams
from optforge.expert import Trajectory
from optforge.gridworld import GridMap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndexedTrajectory:
    """A trajectory with states replaced by free-state indices.

    Args:
        states: ``T + 1`` state indices.
        actions: ``T`` action indices.
    """

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self) -> None:
        if len(self.actions) < 1:
            raise ValueError("a trajectory needs at least one action")
        if len(self.states) != len(self.actions) + 1:
            raise ValueError(
                f"{len(self.states)} states for {len(self.actions)} actions"
            )

    @property
    def length(self) -> int:
        return len(self.actions)

    @classmethod
    def from_trajectory(
        cls, trajectory: Trajectory, grid: GridMap
    ) -> "IndexedTrajectory":
        return cls(
            trajectory.state_indices(grid),
            np.array(trajectory.actions, dtype=np.int64),
        )


def index_dataset(
    trajectories: Sequence[Trajectory], grid: GridMap
) -> List[IndexedTrajectory]:
    """``IndexedTrajectory.from_trajectory`` over a dataset."""
    return [IndexedTrajectory.from_trajectory(t, grid) for t in trajectories]


@dataclass
class PosteriorTables:
    """Scaled forward/backward values and option posteriors.

    All tables have shape ``(T, n_options)``.

    Args:
        phi_scaled: Forward values, each row normalized to sum to one.
        omega_scaled: Backward values divided by the matching suffix of
            normalizers.
        normalizers: ``c_t``, shape ``(T,)``.
        u: ``P(h_t = h | xi)``.
        v: ``P(b_t = 1, h_t = h | xi)``; ``v[0] == u[0]``.
        w: ``P(b_{t+1} = 0, h_t = h | xi)``; the last row is zero.
        log_likelihood: Dynamics-free ``log P(xi)``.
    """

    phi_scaled: np.ndarray
    omega_scaled: np.ndarray
    normalizers: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    log_likelihood: float


def _step_factors(params: DdoParams, xi: IndexedTrajectory):
    """Per-step readouts along the trajectory.

    Returns ``(eta_t, pi_t, psi_t)`` where ``eta_t[t] = eta(.|s_t)`` for
    ``t <= T``, ``pi_t[t, h] = pi_h(a_t|s_t)`` and
    ``psi_t[t, h] = psi_h(s_t)`` for ``t <= T``.
    """
    eta_t = params.eta()[xi.states]
    pi = params.pi()
    pi_t = pi[:, xi.states[:-1], xi.actions].T
    psi_t = params.psi()[:, xi.states].T
    return eta_t, pi_t, psi_t


def forward_backward(
    params: DdoParams, xi: IndexedTrajectory
) -> PosteriorTables:
    """Computes option posteriors with the scaled forward-backward
    recursion.

    Termination uses the unscaled ``psi``; ``termination_scale`` only
    affects extracted options.

    Raises:
        ValueError: A state index is outside the parameter tables.
        DegenerateLikelihoodError: A normalizer underflowed to zero.
    """
    if xi.states.max() >= params.n_states or xi.states.min() < 0:
        raise ValueError("trajectory state outside the parameter tables")

    n_steps = xi.length
    eta_t, pi_t, psi_t = _step_factors(params, xi)

    phi = np.zeros((n_steps, params.n_options))
    norm = np.zeros(n_steps)
    phi[0] = eta_t[0]
    for t in range(n_steps):
        emitted = phi[t] * pi_t[t]
        norm[t] = emitted.sum()
        if norm[t] <= 0.0 or not np.isfinite(norm[t]):
            raise DegenerateLikelihoodError(
                f"normalizer underflow at step {t} of {n_steps}"
            )
        if t + 1 < n_steps:
            switch = (emitted * psi_t[t + 1]).sum()
            phi[t + 1] = (
                switch * eta_t[t + 1] + emitted * (1.0 - psi_t[t + 1])
            ) / norm[t]

    omega = np.zeros_like(phi)
    omega[-1] = pi_t[-1] / norm[-1]
    for t in range(n_steps - 2, -1, -1):
        restart = (eta_t[t + 1] * omega[t + 1]).sum()
        omega[t] = (
            pi_t[t]
            * (
                psi_t[t + 1] * restart
                + (1.0 - psi_t[t + 1]) * omega[t + 1]
            )
            / norm[t]
        )

    u = phi * omega
    v = np.zeros_like(u)
    w = np.zeros_like(u)
    v[0] = u[0]
    for t in range(1, n_steps):
        switch = (phi[t - 1] * pi_t[t - 1] * psi_t[t]).sum()
        v[t] = switch * eta_t[t] * omega[t] / norm[t - 1]
    for t in range(n_steps - 1):
        w[t] = phi[t] * pi_t[t] * (1.0 - psi_t[t + 1]) * omega[t + 1] / norm[t]

    return PosteriorTables(
        phi_scaled=phi,
        omega_scaled=omega,
        normalizers=norm,
        u=u,
        v=v,
        w=w,
        log_likelihood=float(np.sum(np.log(norm))),
    )


def brute_force_posteriors(
    params: DdoParams, xi: IndexedTrajectory
) -> PosteriorTables:
    """Posteriors by enumerating every latent ``(b, h)`` sequence.

    Forward and backward tables are not defined here and are returned as
    ``u`` and ones; ``normalizers`` holds the single value ``P(xi)``.

    Raises:
        TooLargeError: More than ``MAX_BRUTE_FORCE_SEQUENCES`` option
            sequences.
        DegenerateLikelihoodError: The trajectory has zero probability.
    """
    n_steps = xi.length
    n_options = params.n_options
    n_sequences = n_options**n_steps
    if n_sequences > settings.MAX_BRUTE_FORCE_SEQUENCES:
        raise TooLargeError(
            f"{n_options}^{n_steps} option sequences exceed the limit of "
            f"{settings.MAX_BRUTE_FORCE_SEQUENCES}"
        )

    logger.debug("Enumerating %d option sequences", n_sequences)
    eta_t, pi_t, psi_t = _step_factors(params, xi)
    u = np.zeros((n_steps, n_options))
    v = np.zeros_like(u)
    w = np.zeros_like(u)
    total = 0.0

    for options in itertools.product(range(n_options), repeat=n_steps):
        # b_t is forced to 1 wherever the option changes
        free_bits = [
            t for t in range(1, n_steps) if options[t] == options[t - 1]
        ]
        for bits in itertools.product((0, 1), repeat=len(free_bits)):
            switches = np.ones(n_steps, dtype=bool)
            switches[free_bits] = np.array(bits, dtype=bool)

            h0 = options[0]
            prob = eta_t[0, h0] * pi_t[0, h0]
            for t in range(1, n_steps):
                prev, cur = options[t - 1], options[t]
                if switches[t]:
                    prob *= psi_t[t, prev] * eta_t[t, cur]
                else:
                    prob *= 1.0 - psi_t[t, prev]
                prob *= pi_t[t, cur]

            total += prob
            for t, h in enumerate(options):
                u[t, h] += prob
                if switches[t]:
                    v[t, h] += prob
                if t + 1 < n_steps and not switches[t + 1]:
                    w[t, h] += prob

    if total <= 0.0:
        raise DegenerateLikelihoodError("trajectory has zero probability")

    u /= total
    return PosteriorTables(
        phi_scaled=u.copy(),
        omega_scaled=np.ones_like(u),
        normalizers=np.array([total]),
        u=u,
        v=v / total,
        w=w / total,
        log_likelihood=float(np.log(total)),
    )


def log_likelihood(
    params: DdoParams, dataset: Sequence[IndexedTrajectory]
) -> float:
    """Sum of dynamics-free log-likelihoods over ``dataset``.

    Raises:
        ValueError: Empty dataset.
        DegenerateLikelihoodError: Propagated from ``forward_backward()``.
    """
    if not dataset:
        raise ValueError("log-likelihood of an empty dataset")

    return float(
        sum(forward_backward(params, xi).log_likelihood for xi in dataset)
    )
