"""Data generators for the two simulation designs and a replication runner."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from msgamlss.em import FitConfig, fit
from msgamlss.errors import MSGamlssError
from msgamlss.families import get_family
from msgamlss.modelselect import CvPlan, cross_validate, grid_product

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2


def simulate_chain(gamma, delta, T: int, seed=None) -> np.ndarray:
    """Sample a state path (0-based labels) from a first-order Markov chain."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    delta = np.asarray(delta, dtype=float)
    N = gamma.shape[0]
    if (gamma.shape != (N, N) or delta.shape != (N,) or np.any(gamma < 0) or np.any(delta < 0)
            or not np.allclose(gamma.sum(axis=1), 1) or not np.isclose(delta.sum(), 1)):
        raise ValueError("invalid transition matrix or initial distribution")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(gamma, axis=1)
    draws = rng.random(T)
    states = np.empty(T, dtype=int)
    states[0] = min(np.searchsorted(np.cumsum(delta), draws[0], side="right"), N - 1)
    for t in range(1, T):
        states[t] = min(np.searchsorted(cum[states[t - 1]], draws[t], side="right"), N - 1)
    return states


def linear_nbinom_predictors(x1) -> np.ndarray:
    """True predictors ``(N=2, K=2, T)`` of the linear negative-binomial design."""
    x1 = np.asarray(x1, dtype=float)
    return np.array([
        [2 + 2 * x1, 2 * x1],
        [2 - 2 * x1, -2 * x1],
    ])


def nonlinear_normal_predictors(x1) -> np.ndarray:
    """True predictors ``(N=2, K=2, T)`` of the nonlinear normal design."""
    s = np.sin(np.pi * (np.asarray(x1, dtype=float) - 0.5))
    return np.array([
        [2 + 2 * s, s],
        [-2 - s, -2 * s],
    ])


@dataclass
class ExperimentDesign:
    name: str
    family: str
    predictors: Callable[[np.ndarray], np.ndarray]
    learner: str
    n_stop: tuple[int, ...]
    cv_grid: tuple[tuple[int, ...], ...]
    T: int = 500
    n_covariates: int = 100
    informative: tuple[int, ...] = (0,)
    gamma: np.ndarray = field(default_factory=lambda: np.array([[0.95, 0.05], [0.05, 0.95]]))
    delta: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))

    @property
    def n_states(self) -> int:
        return len(self.delta)

    def fit_config(self, **overrides) -> FitConfig:
        kwargs = dict(family=self.family, n_states=self.n_states, n_stop=self.n_stop)
        kwargs.update(overrides)
        return FitConfig.build(self.learner, self.n_covariates, **kwargs)

    def sample_covariates(self, rng) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(self.T, self.n_covariates))


DESIGNS = {
    "linear-nbinom": lambda: ExperimentDesign(
        "linear-nbinom", "nbinom", linear_nbinom_predictors, "linear",
        n_stop=(435, 468), cv_grid=((100, 200, 400, 800), (100, 200, 400, 800))),
    "nonlinear-normal": lambda: ExperimentDesign(
        "nonlinear-normal", "normal", nonlinear_normal_predictors, "pspline",
        n_stop=(142, 177), cv_grid=((25, 50, 100, 200), (25, 50, 100, 200))),
}


def get_design(name: str, **overrides) -> ExperimentDesign:
    try:
        design = DESIGNS[name]()
    except KeyError:
        raise ValueError(f"unknown design {name!r}; choose from {sorted(DESIGNS)}") from None
    return replace(design, **overrides) if overrides else design


def true_parameters(design: ExperimentDesign, X) -> np.ndarray:
    """Natural-scale parameters ``(N, K, T)`` implied by the design."""
    family = get_family(design.family)
    eta = design.predictors(np.asarray(X)[:, 0])
    return np.array([family.theta_from_eta(e) for e in eta])


def simulate_response(design: ExperimentDesign, states, X, seed=None) -> np.ndarray:
    """Draw ``y_t`` from the family at the state's true parameters."""
    family = get_family(design.family)
    rng = np.random.default_rng(seed)
    theta = true_parameters(design, X)
    states = np.asarray(states)
    t = np.arange(len(states))
    return family.sample([theta[states, k, t] for k in range(family.K)], rng)


def simulate_dataset(design: ExperimentDesign, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(y, X, states)`` for one replication of the design."""
    ss = np.random.SeedSequence(seed)
    s_chain, s_cov, s_resp = ss.spawn(3)
    states = simulate_chain(design.gamma, design.delta, design.T, s_chain)
    X = design.sample_covariates(np.random.default_rng(s_cov))
    y = simulate_response(design, states, X, s_resp)
    return y, X, states


@dataclass
class ReplicationReport:
    design: str
    runs: list[dict]
    failures: list[dict]
    informative: tuple[int, ...]

    @property
    def gammas(self) -> np.ndarray:
        return np.array([r["gamma"] for r in self.runs])

    @property
    def selection(self) -> np.ndarray:
        """Boolean ``(runs, N, K, P)``."""
        return np.array([r["selected"] for r in self.runs], dtype=bool)

    def off_diagonal(self) -> np.ndarray:
        """``(runs, N*(N-1))`` off-diagonal transition estimates in row-major order."""
        g = self.gammas
        N = g.shape[1]
        return g[:, ~np.eye(N, dtype=bool)]

    def selection_rates(self) -> dict:
        S = self.selection
        P = S.shape[-1]
        info = np.zeros(P, dtype=bool)
        info[list(self.informative)] = True
        rates = {
            "informative": float(S[..., info].mean()),
            "noise": float(S[..., ~info].mean()) if (~info).any() else float("nan"),
        }
        for k in range(S.shape[2]):
            rates[f"informative_param{k + 1}"] = float(S[:, :, k][..., info].mean())
            if (~info).any():
                rates[f"noise_param{k + 1}"] = float(S[:, :, k][..., ~info].mean())
        return rates

    def summary(self) -> dict:
        off = self.off_diagonal()
        N = self.gammas.shape[1]
        names = [f"gamma_{i + 1}{j + 1}" for i in range(N) for j in range(N) if i != j]
        return {
            "design": self.design,
            "runs": len(self.runs),
            "failures": len(self.failures),
            "gamma_mean": dict(zip(names, off.mean(axis=0).tolist())),
            "gamma_sd": dict(zip(names, off.std(axis=0, ddof=1).tolist() if len(off) > 1 else [float("nan")] * len(names))),
            "selection_rates": self.selection_rates(),
            "n_stop_mean": np.mean([r["n_stop"] for r in self.runs], axis=0).tolist(),
            "converged": int(sum(r["converged"] for r in self.runs)),
        }

    def to_csv(self, path) -> None:
        S = self.selection
        N, K = S.shape[1], S.shape[2]
        info = list(self.informative)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["replication", "seed"]
            header += [f"gamma_{i + 1}{j + 1}" for i in range(N) for j in range(N)]
            header += [f"n_stop_{i + 1}" for i in range(N)]
            header += [f"informative_s{i + 1}_p{k + 1}" for i in range(N) for k in range(K)]
            header += [f"noise_selected_s{i + 1}_p{k + 1}" for i in range(N) for k in range(K)]
            header += ["n_iter", "converged"]
            w.writerow(header)
            for r, sel in zip(self.runs, S):
                noise = np.delete(sel, info, axis=-1)
                row = [r["replication"], r["seed"]]
                row += [repr(float(g)) for g in np.ravel(r["gamma"])]
                row += list(r["n_stop"])
                row += [int(sel[i, k, info].all()) for i in range(N) for k in range(K)]
                row += [int(noise[i, k].sum()) for i in range(N) for k in range(K)]
                row += [r["n_iter"], int(r["converged"])]
                w.writerow(row)

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "failures": self.failures}, indent=1)


def _replicate_one(args):
    design, config, rep, seed, full_cv, plan = args
    y, X, states = simulate_dataset(design, [seed, rep])
    n_stop = config.n_stop
    if full_cv:
        cv = cross_validate(y, X, config, grid_product(design.cv_grid), plan)
        n_stop = cv.chosen
    try:
        model = fit(y, X, replace(config, n_stop=n_stop))
    except MSGamlssError as exc:
        return {"replication": rep, "error": f"{type(exc).__name__}: {exc}"}
    return {
        "replication": rep,
        "seed": seed,
        "gamma": model.states.gamma.tolist(),
        "selected": model.selected().tolist(),
        "n_stop": list(n_stop),
        "n_iter": model.diagnostics["n_iter"],
        "converged": model.diagnostics["converged"],
        "loglik": [model.diagnostics["initial_loglik"]] + list(model.diagnostics["loglik"]),
        "model": model,
    }


def run_experiment(design: ExperimentDesign, config: FitConfig | None = None, replications: int = 100,
                   seed: int = 0, workers: int = 1, full_cv: bool = False,
                   plan: CvPlan | None = None, keep_models: bool = False) -> ReplicationReport:
    """Simulate, fit and summarize ``replications`` independent runs."""
    config = config or design.fit_config()
    plan = plan or CvPlan(20, seed)
    jobs = [(design, config, rep, seed, full_cv, plan) for rep in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_one, jobs))
    else:
        results = [_replicate_one(job) for job in jobs]
    runs, failures = [], []
    for r in sorted(results, key=lambda r: r["replication"]):
        if "error" in r:
            log.warning("replication %d failed: %s", r["replication"], r["error"])
            failures.append(r)
            continue
        if not keep_models:
            r.pop("model")
        runs.append(r)
    if len(failures) > MAX_FAILURE_RATE * replications:
        raise MSGamlssError(f"{len(failures)} of {replications} replications failed")
    return ReplicationReport(design.name, runs, failures, design.informative)
