"""Weighted, non-cyclical component-wise boosting for one hidden state.

Each iteration computes the weighted gradients of the state's share of the
complete-data log-likelihood, picks the best base-learner per distribution
parameter by residual sum of squares, and then commits only the parameter
whose provisional update yields the highest weighted log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from msgamlss.baselearners import BaseLearnerFit, LearnerBank, predict
from msgamlss.errors import NoCandidateError
from msgamlss.families import ResponseFamily

RSS_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class BoostConfig:
    n_stop: int
    step_length: float = 0.1
    reject_decrease: bool = True

    def __post_init__(self):
        if self.n_stop < 0:
            raise ValueError("n_stop must be non-negative")
        if not 0 < self.step_length < 1:
            raise ValueError("step length must lie in (0, 1)")


@dataclass
class PredictorEnsemble:
    """Offset plus an ordered list of ``(learner index, coefficients, step)`` updates."""

    state: int
    parameter: int
    offset: float
    updates: list[tuple[int, np.ndarray, float]] = field(default_factory=list)

    def training_eta(self, bank: LearnerBank) -> np.ndarray:
        eta = np.full(bank.T, self.offset)
        for j, coef, step in self.updates:
            eta = eta + step * bank.fitted_values(j, coef)
        return eta

    def evaluate(self, X, learners: list[tuple]) -> np.ndarray:
        """Predictor at new covariates.

        ``learners`` holds ``(spec, basis)`` per learner index, as stored on a
        fitted model.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = np.full(X.shape[0], self.offset)
        designs: dict[int, np.ndarray] = {}
        for j, coef, step in self.updates:
            spec, basis = learners[j][:2]
            if spec.kind == "pspline":
                if j not in designs:
                    designs[j] = basis.design(X[:, spec.covariate])
                h = designs[j] @ coef
            else:
                h = predict(BaseLearnerFit(spec, coef, np.nan, basis), X)
            eta = eta + step * h
        return eta

    def selection_counts(self, n_learners: int) -> np.ndarray:
        counts = np.zeros(n_learners, dtype=int)
        for j, _, _ in self.updates:
            counts[j] += 1
        return counts

    def selection_frequency(self, n_learners: int) -> np.ndarray:
        counts = self.selection_counts(n_learners)
        return counts / max(len(self.updates), 1)

    def aggregate_coefficients(self) -> dict[int, np.ndarray]:
        """Sum of step-scaled coefficients per learner; the ensemble is affine in them."""
        agg: dict[int, np.ndarray] = {}
        for j, coef, step in self.updates:
            agg[j] = agg.get(j, 0.0) + step * np.asarray(coef)
        return agg


def weighted_loglik(family: ResponseFamily, y, eta, w, validate: bool = True) -> float:
    """``sum_t w_t log f(y_t; theta_t)``; ``-inf`` if the predictors leave the domain."""
    theta = family.theta_from_eta(eta)
    if not validate:
        with np.errstate(all="ignore"):
            val = float(np.dot(w, family.log_density(y, theta, validate=False)))
        return val if np.isfinite(val) else -np.inf
    return float(np.dot(w, family.log_density(y, theta)))


def weighted_gradients(family: ResponseFamily, y, eta, w, validate: bool = True) -> np.ndarray:
    """``K x T`` table ``w_t * d log f(y_t) / d eta_k``."""
    theta = family.theta_from_eta(eta)
    return np.asarray(w, dtype=float)[None, :] * family.gradients(y, theta, validate)


def select_within_parameter(rss) -> int:
    """Index of the smallest RSS; near-ties go to the lowest index."""
    rss = np.asarray(rss, dtype=float)
    finite = np.isfinite(rss)
    if not finite.any():
        raise NoCandidateError("all candidate base-learners are degenerate")
    best = rss[finite].min()
    tol = RSS_TIE_RTOL * max(abs(best), 1e-300)
    return int(np.flatnonzero(finite & (rss <= best + tol))[0])


def select_across_parameters(candidate_ll) -> int:
    """Argmax of provisional weighted log-likelihoods; ``None`` entries are skipped."""
    vals = np.array([-np.inf if v is None else v for v in candidate_ll], dtype=float)
    if not np.any(vals > -np.inf):
        raise NoCandidateError("no parameter has an admissible update")
    return int(np.argmax(vals))


@dataclass
class BoostResult:
    ensembles: list[PredictorEnsemble]
    eta: np.ndarray
    loglik: float
    iterations: int
    stopped_early: bool


def offsets_for(family: ResponseFamily, y, w) -> np.ndarray:
    return np.array([float(e) for e in family.eta_from_theta(family.initial_parameters(y, w))])


def boost_state(
    state: int,
    family: ResponseFamily,
    y,
    w,
    banks: list[LearnerBank],
    config: BoostConfig,
    offsets=None,
) -> BoostResult:
    """Run up to ``config.n_stop`` boosting iterations for one state.

    Predictors start at ``offsets`` (link scale; weighted moment estimates
    when omitted).  With ``reject_decrease`` the loop stops as soon as the
    best provisional update would lower the weighted log-likelihood.
    """
    y = family.check_y(y)
    w = np.asarray(w, dtype=float)
    K = family.K
    if len(banks) != K:
        raise ValueError(f"need {K} learner banks, got {len(banks)}")
    if offsets is None:
        offsets = offsets_for(family, y, w)
    ensembles = [PredictorEnsemble(state, k, float(offsets[k])) for k in range(K)]
    eta = np.array([np.full(y.shape[0], float(o)) for o in offsets])
    current = weighted_loglik(family, y, eta, w)
    sl = config.step_length
    stopped = False
    done = 0
    for _ in range(config.n_stop):
        grads = weighted_gradients(family, y, eta, w, validate=False)
        proposals: list[tuple[int, np.ndarray, np.ndarray] | None] = []
        cand_ll: list[float | None] = []
        for k in range(K):
            rss, coefs = banks[k].fit_all(grads[k])
            try:
                j = select_within_parameter(rss)
            except NoCandidateError:
                proposals.append(None)
                cand_ll.append(None)
                continue
            h = banks[k].fitted_values(j, coefs[j])
            trial = eta.copy()
            trial[k] = eta[k] + sl * h
            ll = weighted_loglik(family, y, trial, w, validate=False)
            proposals.append((j, coefs[j], trial[k]))
            cand_ll.append(ll if np.isfinite(ll) else None)
        try:
            k_star = select_across_parameters(cand_ll)
        except NoCandidateError:
            stopped = True
            break
        if config.reject_decrease and cand_ll[k_star] < current:
            stopped = True
            break
        j, coef, new_eta = proposals[k_star]
        eta[k_star] = new_eta
        ensembles[k_star].updates.append((j, np.array(coef, dtype=float), sl))
        current = cand_ll[k_star]
        done += 1
    return BoostResult(ensembles, eta, current, done, stopped)

