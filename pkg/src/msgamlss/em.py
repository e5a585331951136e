"""EM outer cycle: posterior state weights alternate with per-state boosting.

Each M-step updates ``delta`` and ``Gamma`` in closed form and re-runs the
boosting loop of every state from fresh weighted offsets.  Unless
``exact_paper`` is set, an M-step never accepts a state ensemble that has a
lower weighted log-likelihood than the one it replaces, which together with
the rejection rule inside boosting makes the procedure a generalized EM
with a non-decreasing observed-data likelihood.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from msgamlss import hmm
from msgamlss.baselearners import (
    BaseLearnerSpec,
    LearnerBank,
    PSplineBasis,
    default_specs,
    learner_from_description,
)
from msgamlss.boosting import (
    BoostConfig,
    PredictorEnsemble,
    boost_state,
    offsets_for,
    weighted_loglik,
)
from msgamlss.errors import DataError, DegeneracyError, DomainError
from msgamlss.families import ResponseFamily, get_family

log = logging.getLogger(__name__)

MIN_STATE_MASS = 1e-8
START_PERSISTENCE = 0.9


@dataclass
class FitConfig:
    """Settings for one MS-gamboostLSS fit.

    ``learners`` holds one list of base-learner specs per distribution
    parameter (shared by all states).  ``n_stop`` has one entry per state.
    ``n_starts`` initializations each run ``start_iter`` EM iterations
    before the best one is continued (see :func:`fit`).
    """

    n_states: int = 2
    family: str = "normal"
    learners: list[list[BaseLearnerSpec]] = field(default_factory=list)
    n_stop: tuple[int, ...] = (100, 100)
    step_length: float = 0.1
    stationary: bool = False
    tol: float = 1e-6
    max_iter: int = 100
    seed: int = 0
    exact_paper: bool = False
    n_starts: int = 5
    start_iter: int = 5

    def __post_init__(self):
        self.n_stop = tuple(int(n) for n in np.broadcast_to(self.n_stop, (self.n_states,)))
        if self.n_states < 1:
            raise ValueError("need at least one state")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.n_starts < 1 or self.start_iter < 1:
            raise ValueError("n_starts and start_iter must be at least 1")
        for n in self.n_stop:
            BoostConfig(n, self.step_length)

    @classmethod
    def build(cls, kinds: str | Sequence[str], n_covariates: int, pspline: dict | None = None,
              **kwargs) -> FitConfig:
        """Config with one learner of the given kind per covariate and parameter."""
        family = get_family(kwargs.get("family", "normal"))
        if isinstance(kinds, str):
            kinds = [kinds] * family.K
        learners = [default_specs(kind, n_covariates, **(pspline or {})) for kind in kinds]
        return cls(learners=learners, **kwargs)

    def with_n_stop(self, n_stop) -> FitConfig:
        return replace(self, n_stop=tuple(n_stop))


@dataclass
class FittedModel:
    family: ResponseFamily
    states: hmm.StateModel
    ensembles: list[list[PredictorEnsemble]]
    learners: list[list[tuple[BaseLearnerSpec, PSplineBasis | None, float | None]]]
    diagnostics: dict
    n_covariates: int
    weights: hmm.PosteriorWeights | None = None

    @property
    def N(self) -> int:
        return self.states.N

    # -- prediction --------------------------------------------------------
    def predict_eta(self, X) -> np.ndarray:
        """Predictors with shape ``(N, K, T)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_covariates:
            raise DataError(f"expected {self.n_covariates} covariates, got {X.shape[1]}")
        return np.array([[ens.evaluate(X, self.learners[k]) for k, ens in enumerate(row)]
                         for row in self.ensembles])

    def predict_parameters(self, X) -> np.ndarray:
        """Natural-scale parameters with shape ``(N, K, T)``."""
        eta = self.predict_eta(X)
        return np.array([self.family.theta_from_eta(e) for e in eta])

    def log_density_table(self, y, X) -> np.ndarray:
        theta = self.predict_parameters(X)
        return np.column_stack([self.family.log_density(y, th) for th in theta])

    def posteriors(self, y, X) -> tuple[float, hmm.PosteriorWeights]:
        return hmm.e_step(self.log_density_table(y, X), self.states)

    def loglik(self, y, X) -> float:
        return hmm.forward(self.log_density_table(y, X), self.states)[0]

    def decode(self, y, X) -> np.ndarray:
        return hmm.decode_local(self.posteriors(y, X)[1])

    # -- summaries ---------------------------------------------------------
    def selected(self) -> np.ndarray:
        """Boolean ``(N, K, P)``: covariate appears in at least one committed update."""
        out = np.zeros((self.N, self.family.K, self.n_covariates), dtype=bool)
        for i, row in enumerate(self.ensembles):
            for k, ens in enumerate(row):
                for j, _, _ in ens.updates:
                    cov = self.learners[k][j][0].covariate
                    if cov is not None:
                        out[i, k, cov] = True
        return out

    def linear_effects(self) -> np.ndarray:
        """Aggregated slopes ``(N, K, P)`` of linear learners (zero when unselected)."""
        out = np.zeros((self.N, self.family.K, self.n_covariates))
        for i, row in enumerate(self.ensembles):
            for k, ens in enumerate(row):
                for j, coef in ens.aggregate_coefficients().items():
                    spec = self.learners[k][j][0]
                    if spec.kind == "linear":
                        out[i, k, spec.covariate] += coef[1]
        return out

    def permuted(self, order) -> FittedModel:
        """Relabel states so that new state ``i`` is old state ``order[i]``."""
        order = [int(o) for o in order]
        ensembles = []
        for new, old in enumerate(order):
            row = []
            for ens in self.ensembles[old]:
                row.append(PredictorEnsemble(new, ens.parameter, ens.offset, list(ens.updates)))
            ensembles.append(row)
        weights = None
        if self.weights is not None:
            u, v = self.weights
            weights = hmm.PosteriorWeights(u[:, order], v[:, order][:, :, order])
        return FittedModel(self.family, self.states.permuted(order), ensembles, self.learners,
                           self.diagnostics, self.n_covariates, weights)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        learners = []
        for row in self.learners:
            descr = []
            for spec, basis, lam in row:
                d = spec.to_dict()
                if basis is not None:
                    d.update(xmin=basis.xmin, xmax=basis.xmax, lam=lam)
                descr.append(d)
            learners.append(descr)
        return {
            "family": self.family.name,
            "n_states": self.N,
            "n_covariates": self.n_covariates,
            "gamma": self.states.gamma.tolist(),
            "delta": self.states.delta.tolist(),
            "stationary": self.states.stationary,
            "learners": learners,
            "ensembles": [
                [
                    {
                        "state": ens.state,
                        "parameter": ens.parameter,
                        "offset": ens.offset,
                        "updates": [
                            {"learner": int(j), "coefficients": np.asarray(c).tolist(), "step": s}
                            for j, c, s in ens.updates
                        ],
                    }
                    for ens in row
                ]
                for row in self.ensembles
            ],
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> FittedModel:
        family = get_family(d["family"])
        states = hmm.StateModel(np.array(d["gamma"]), np.array(d["delta"]), d.get("stationary", False))
        learners = [[learner_from_description(x) for x in row] for row in d["learners"]]
        ensembles = [
            [
                PredictorEnsemble(
                    e["state"], e["parameter"], e["offset"],
                    [(u["learner"], np.array(u["coefficients"], dtype=float), u["step"])
                     for u in e["updates"]],
                )
                for e in row
            ]
            for row in d["ensembles"]
        ]
        return cls(family, states, ensembles, learners, d.get("diagnostics", {}), d["n_covariates"])

    @classmethod
    def from_json(cls, text: str) -> FittedModel:
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def complete_data_loglik(logdens, model: hmm.StateModel, weights: hmm.PosteriorWeights,
                         obs_weights=None) -> float:
    """Sum of the initial, transition and state-dependent summands.

    ``obs_weights`` (length ``T``) scales the density summand per time
    point; held-out observations get zero.
    """
    init, trans = hmm.chain_loglik_terms(weights, model)
    u = weights.u if obs_weights is None else weights.u * np.asarray(obs_weights)[:, None]
    logdens = np.asarray(logdens, dtype=float)
    dens = float(np.sum(np.where(u > 0, u * logdens, 0.0)))
    return init + trans + dens


def _validate(family: ResponseFamily, y, X):
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise DataError(f"response has {y.shape[0]} rows, covariates {X.shape[0]}")
    if y.shape[0] < 2:
        raise DataError("need at least two observations")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise DataError(f"non-finite covariate at t={bad[0] + 1}, column {bad[1] + 1}")
    try:
        family.check_y(y)
    except DomainError:
        bad = np.flatnonzero(~_in_support(family, y))
        raise DomainError(f"response outside the {family.name} support at t={bad[0] + 1}") from None
    return y, X


def _in_support(family, y):
    ok = np.isfinite(y)
    if family.support == "nonnegative-integers":
        ok &= (y >= 0) & (y == np.floor(y))
    return ok


def initial_offsets(family: ResponseFamily, y, n_states: int, keep) -> np.ndarray:
    """State offsets from the moments of consecutive response quantile slices."""
    obs = np.flatnonzero(keep)
    order = obs[np.argsort(y[obs], kind="stable")]
    out = []
    for chunk in np.array_split(order, n_states):
        w = np.zeros_like(y)
        w[chunk] = 1.0
        out.append(offsets_for(family, y, w))
    return np.array(out)


def _logdens(family, y, eta_states, mask):
    cols = []
    for eta in eta_states:
        cols.append(family.log_density(y, family.theta_from_eta(eta)))
    L = np.column_stack(cols)
    if mask is not None:
        L[mask] = 0.0
    if not np.all(np.isfinite(L)):
        t = int(np.argwhere(~np.isfinite(L))[0][0])
        raise DomainError(f"non-finite log-density at t={t + 1}")
    return L


@dataclass
class _Context:
    family: ResponseFamily
    y: np.ndarray
    banks: list[LearnerBank]
    boost: list[BoostConfig]
    keep: np.ndarray
    mask: np.ndarray | None
    config: FitConfig


@dataclass
class _Run:
    """Mutable EM state of one start."""

    ensembles: list[list[PredictorEnsemble]]
    eta: np.ndarray
    states: hmm.StateModel
    weights: hmm.PosteriorWeights
    loglik: float
    initial_loglik: float
    trace: list[float] = field(default_factory=list)
    cdll: list[float] = field(default_factory=list)
    boost: list[list[int]] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def _offset_ensembles(offsets, T):
    N, K = offsets.shape
    ensembles = [[PredictorEnsemble(i, k, float(offsets[i, k])) for k in range(K)] for i in range(N)]
    eta = np.array([[np.full(T, offsets[i, k]) for k in range(K)] for i in range(N)])
    return ensembles, eta


def _m_step(ctx: _Context, weights, ensembles, eta):
    """Chain update plus per-state boosting; returns the new model pieces."""
    config, family, y = ctx.config, ctx.family, ctx.y
    N = config.n_states
    gamma = hmm.update_transitions(weights) if N > 1 else np.ones((1, 1))
    delta = hmm.stationary_distribution(gamma) if config.stationary else hmm.update_initial(weights)
    states = hmm.StateModel(gamma, delta, config.stationary)
    ensembles, eta = list(ensembles), eta.copy()
    done = []
    for i in range(N):
        w = weights.u[:, i] * ctx.keep
        if w.sum() < MIN_STATE_MASS:
            raise DegeneracyError(f"state {i + 1} has posterior mass {w.sum():.3g}; consider fewer states")
        res = boost_state(i, family, y, w, ctx.banks, ctx.boost[i])
        if not config.exact_paper and res.loglik < weighted_loglik(family, y, eta[i], w):
            done.append(-1)
            continue
        ensembles[i] = res.ensembles
        eta[i] = res.eta
        done.append(res.iterations)
    return states, ensembles, eta, done


def _iterate(ctx: _Context, run: _Run, n: int) -> None:
    """Up to ``n`` further EM iterations, stopping at convergence."""
    for _ in range(n):
        if run.converged:
            return
        states, run.ensembles, run.eta, done = _m_step(ctx, run.weights, run.ensembles, run.eta)
        run.states = states
        run.boost.append(done)
        L = _logdens(ctx.family, ctx.y, run.eta, ctx.mask)
        run.cdll.append(complete_data_loglik(L, states, run.weights, ctx.keep))
        new_ll, run.weights = hmm.e_step(L, states)
        run.trace.append(new_ll)
        change = abs(new_ll - run.loglik)
        run.loglik = new_ll
        run.n_iter += 1
        log.debug("EM iteration %d: loglik %.10g", run.n_iter, new_ll)
        run.converged = change <= ctx.config.tol * abs(new_ll)


def _quantile_start(ctx: _Context) -> _Run:
    N = ctx.config.n_states
    offsets = initial_offsets(ctx.family, ctx.y, N, ctx.keep)
    ensembles, eta = _offset_ensembles(offsets, len(ctx.y))
    states = hmm.StateModel.initial(N, stationary=ctx.config.stationary)
    ll, weights = hmm.e_step(_logdens(ctx.family, ctx.y, eta, ctx.mask), states)
    return _Run(ensembles, eta, states, weights, ll, ll)


def _path_start(ctx: _Context, seed) -> _Run:
    """Start from hard weights of a random persistent state path.

    One M-step on these weights gives the initial model, so covariate
    effects can differ between states from the first E-step on.
    """
    N, T = ctx.config.n_states, len(ctx.y)
    init = hmm.StateModel.initial(N, START_PERSISTENCE)
    rng = np.random.default_rng(seed)
    path = np.empty(T, dtype=int)
    path[0] = rng.integers(N)
    for t in range(1, T):
        path[t] = rng.choice(N, p=init.gamma[path[t - 1]])
    u = np.eye(N)[path]
    v = u[:-1, :, None] * u[1:, None, :]
    weights = hmm.PosteriorWeights(u, v)
    offsets = np.array([offsets_for(ctx.family, ctx.y, u[:, i] * ctx.keep) for i in range(N)])
    ensembles, eta = _offset_ensembles(offsets, T)
    states, ensembles, eta, _ = _m_step(ctx, weights, ensembles, eta)
    ll, weights = hmm.e_step(_logdens(ctx.family, ctx.y, eta, ctx.mask), states)
    return _Run(ensembles, eta, states, weights, ll, ll)


def fit(y, X, config: FitConfig, mask=None) -> FittedModel:
    """Fit an MS-GAMLSS by MS-gamboostLSS.

    ``mask`` (boolean, length ``T``) marks held-out observations: their
    densities are replaced by one in the recursions and their gradient
    weights are zero.

    Start 0 splits the response at its quantiles.  With ``n_starts > 1``
    the remaining starts begin from random persistent state paths (seeded
    by ``config.seed``); every start runs ``start_iter`` EM iterations and
    the one with the highest log-likelihood is continued.
    """
    family = get_family(config.family)
    y, X = _validate(family, y, X)
    T, P = X.shape
    N = config.n_states
    if len(config.learners) != family.K:
        raise ValueError(f"{family.name} needs {family.K} learner lists, got {len(config.learners)}")
    keep = np.ones(T, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    mask = None if mask is None else ~keep
    banks = [LearnerBank(list(specs), X) for specs in config.learners]
    boost_cfgs = [BoostConfig(n, config.step_length, reject_decrease=not config.exact_paper)
                  for n in config.n_stop]
    ctx = _Context(family, y, banks, boost_cfgs, keep, mask, config)

    runs = [_quantile_start(ctx)]
    if N > 1 and config.n_starts > 1:
        seeds = np.random.SeedSequence(config.seed).spawn(config.n_starts - 1)
        for s in seeds:
            try:
                runs.append(_path_start(ctx, s))
            except DegeneracyError as exc:
                log.debug("start skipped: %s", exc)
        for run in runs:
            _iterate(ctx, run, min(config.start_iter, config.max_iter))
    start = int(np.argmax([r.loglik for r in runs]))
    run = runs[start]
    _iterate(ctx, run, config.max_iter - run.n_iter)

    diagnostics = {
        "initial_loglik": run.initial_loglik,
        "loglik": run.trace,
        "cdll": run.cdll,
        "boost_iterations": run.boost,
        "n_iter": run.n_iter,
        "converged": run.converged,
        "start": start,
        "start_logliks": [r.loglik for r in runs] if len(runs) > 1 else [],
        "excluded_learners": [sorted(bank.excluded) for bank in banks],
    }
    learners = [bank.definitions() for bank in banks]
    model = FittedModel(family, run.states, run.ensembles, learners, diagnostics, P, run.weights)
    order = np.argsort([row[0].offset for row in run.ensembles], kind="stable")
    if not np.array_equal(order, np.arange(N)):
        model = model.permuted(order)
    return model
