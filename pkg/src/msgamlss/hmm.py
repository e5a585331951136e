"""State-process machinery for the hidden Markov chain.

Everything operates on a ``T x N`` table of log-densities
``logdens[t, i] = log f(y_t | S_t = i)``.  Recursions run in log space with
a per-step max shift, so long series do not underflow.

A masked observation (used by cross validation) is simply a row of zeros
in the log-density table: its density matrix becomes the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import xlogy

from msgamlss.errors import DegeneracyError

ROW_TOL = 1e-12


@dataclass
class StateModel:
    """Transition matrix ``gamma``, initial distribution ``delta``."""

    gamma: np.ndarray
    delta: np.ndarray
    stationary: bool = False

    def __post_init__(self):
        self.gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        self.delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        N = self.gamma.shape[0]
        if self.gamma.shape != (N, N) or self.delta.shape != (N,):
            raise ValueError("gamma must be N x N and delta length N")
        if np.any(self.gamma < 0) or np.any(np.abs(self.gamma.sum(axis=1) - 1) > ROW_TOL):
            raise ValueError("gamma rows must be probability vectors")
        if np.any(self.delta < 0) or abs(self.delta.sum() - 1) > ROW_TOL:
            raise ValueError("delta must be a probability vector")

    @property
    def N(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def initial(cls, N: int, persistence: float = 0.9, stationary: bool = False) -> StateModel:
        """Uniform ``delta`` and ``persistence`` on the diagonal of ``gamma``."""
        if N == 1:
            return cls(np.ones((1, 1)), np.ones(1), stationary)
        gamma = np.full((N, N), (1 - persistence) / (N - 1))
        np.fill_diagonal(gamma, persistence)
        return cls(gamma, np.full(N, 1.0 / N), stationary)

    def dwell_times(self) -> np.ndarray:
        """Mean sojourn ``1 / (1 - gamma_ii)`` in each state."""
        with np.errstate(divide="ignore"):
            return 1.0 / (1.0 - np.diag(self.gamma))

    def permuted(self, order) -> StateModel:
        order = np.asarray(order)
        return StateModel(self.gamma[np.ix_(order, order)], self.delta[order], self.stationary)


class PosteriorWeights(NamedTuple):
    """Smoothed state probabilities ``u`` (T x N) and pairwise ``v`` ((T-1) x N x N).

    ``v[t - 1, i, j]`` is ``P(S_{t-1} = i, S_t = j | data)`` for time ``t``.
    """

    u: np.ndarray
    v: np.ndarray


def stationary_distribution(gamma) -> np.ndarray:
    """Solve ``delta @ gamma = delta`` with ``sum(delta) = 1``.

    Uses the augmented system ``(I - gamma + 1)^T delta = 1``.
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    N = gamma.shape[0]
    A = (np.eye(N) - gamma + 1.0).T
    try:
        if np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError("singular")
        delta = np.linalg.solve(A, np.ones(N))
    except np.linalg.LinAlgError:
        raise DegeneracyError(
            "transition matrix is reducible; the stationary distribution is not unique"
        ) from None
    delta = np.clip(delta, 0.0, None)
    return delta / delta.sum()


def _check(logdens, model):
    logdens = np.atleast_2d(np.asarray(logdens, dtype=float))
    if logdens.shape[1] != model.N:
        raise ValueError(f"log-density table has {logdens.shape[1]} columns, model has {model.N} states")
    return logdens


def forward(logdens, model: StateModel) -> tuple[float, np.ndarray]:
    """Log forward probabilities and the observed-data log-likelihood."""
    logdens = _check(logdens, model)
    T, N = logdens.shape
    gamma = model.gamma
    la = np.empty((T, N))
    with np.errstate(divide="ignore"):
        la[0] = np.log(model.delta) + logdens[0]
        for t in range(1, T):
            prev = la[t - 1]
            m = prev.max()
            la[t] = np.log(np.exp(prev - m) @ gamma) + m + logdens[t]
    m = la[-1].max()
    ll = float(m + np.log(np.exp(la[-1] - m).sum()))
    return ll, la


def backward(logdens, model: StateModel) -> np.ndarray:
    """Log backward probabilities; the last row is zero."""
    logdens = _check(logdens, model)
    T, N = logdens.shape
    gamma = model.gamma
    lb = np.zeros((T, N))
    with np.errstate(divide="ignore"):
        for t in range(T - 2, -1, -1):
            nxt = logdens[t + 1] + lb[t + 1]
            m = nxt.max()
            lb[t] = np.log(gamma @ np.exp(nxt - m)) + m
    return lb


def posteriors(log_alpha, log_beta, logdens, model: StateModel, loglik: float | None = None) -> PosteriorWeights:
    """Posterior state weights from the forward/backward tables."""
    logdens = _check(logdens, model)
    if loglik is None:
        last = log_alpha[-1]
        m = last.max()
        loglik = float(m + np.log(np.exp(last - m).sum()))
    u = np.exp(log_alpha + log_beta - loglik)
    u /= u.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        log_gamma = np.log(model.gamma)
    v = np.exp(
        log_alpha[:-1, :, None]
        + log_gamma[None, :, :]
        + (logdens[1:] + log_beta[1:])[:, None, :]
        - loglik
    )
    return PosteriorWeights(u, v)


def e_step(logdens, model: StateModel) -> tuple[float, PosteriorWeights]:
    """Forward, backward and posterior weights in one call."""
    ll, la = forward(logdens, model)
    lb = backward(logdens, model)
    return ll, posteriors(la, lb, logdens, model, ll)


def update_initial(weights: PosteriorWeights) -> np.ndarray:
    u1 = weights.u[0]
    return u1 / u1.sum()


def update_transitions(weights: PosteriorWeights) -> np.ndarray:
    """Closed-form transition update from the pairwise posteriors."""
    counts = weights.v.sum(axis=0)
    totals = counts.sum(axis=1)
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        raise DegeneracyError(
            f"state {int(empty[0]) + 1} receives no transition mass; consider fewer states"
        )
    gamma = counts / totals[:, None]
    return gamma / gamma.sum(axis=1, keepdims=True)


def decode_local(weights: PosteriorWeights | np.ndarray) -> np.ndarray:
    """Most probable state per time point (0-based); ties go to the lowest index."""
    u = weights.u if isinstance(weights, PosteriorWeights) else np.asarray(weights)
    return np.argmax(u, axis=1)


def chain_loglik_terms(weights: PosteriorWeights, model: StateModel) -> tuple[float, float]:
    """Initial and transition summands of the complete-data log-likelihood.

    Zero weights contribute zero even where the probability is zero.
    """
    init = float(xlogy(weights.u[0], model.delta).sum())
    trans = float(xlogy(weights.v.sum(axis=0), model.gamma).sum()) if len(weights.v) else 0.0
    return init, trans
