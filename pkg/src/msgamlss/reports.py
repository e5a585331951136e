"""Plot-ready summaries of fitted models: decoding, dwell times, fitted quantiles."""

from __future__ import annotations

import numpy as np

from msgamlss import hmm
from msgamlss.em import FitConfig, FittedModel, fit

QUANTILE_LEVELS = (0.05, 0.15, 0.25, 0.75, 0.85, 0.95)


def decode_rows(weights: hmm.PosteriorWeights) -> tuple[list[str], list[list]]:
    """Header and rows ``t, u_1..u_N, state`` (1-based time and state labels)."""
    u = weights.u
    states = hmm.decode_local(weights)
    header = ["t"] + [f"u_{i + 1}" for i in range(u.shape[1])] + ["state"]
    rows = [[t + 1, *map(float, u[t]), int(states[t]) + 1] for t in range(u.shape[0])]
    return header, rows


def run_lengths(states) -> dict[int, list[int]]:
    """Lengths of consecutive runs of each state (0-based keys)."""
    states = np.asarray(states)
    out: dict[int, list[int]] = {}
    start = 0
    for t in range(1, len(states) + 1):
        if t == len(states) or states[t] != states[start]:
            out.setdefault(int(states[start]), []).append(t - start)
            start = t
    return out


def dwell_summary(model: FittedModel, states=None) -> dict:
    """Implied mean dwell times, plus empirical run lengths of a decoded path."""
    out = {"implied_mean_dwell": model.states.dwell_times().tolist()}
    if states is not None:
        runs = run_lengths(states)
        out["decoded_mean_run"] = [float(np.mean(runs[i])) if i in runs else None for i in range(model.N)]
        out["decoded_runs"] = [len(runs.get(i, [])) for i in range(model.N)]
    return out


def covariate_grid(X, covariate: int = 0, n_points: int = 101, lo=None, hi=None) -> np.ndarray:
    """Vary one covariate over its range; hold the others at their means."""
    X = np.asarray(X, dtype=float)
    lo = X[:, covariate].min() if lo is None else lo
    hi = X[:, covariate].max() if hi is None else hi
    grid = np.tile(X.mean(axis=0), (n_points, 1))
    grid[:, covariate] = np.linspace(lo, hi, n_points)
    return grid


def quantile_rows(model: FittedModel, grid, covariate: int = 0,
                  levels=QUANTILE_LEVELS) -> tuple[list[str], list[list]]:
    """Per-state mean and quantiles of the fitted distributions along ``grid``."""
    theta = model.predict_parameters(grid)
    header = ["x", "state", "mean"] + [f"q{p:g}" for p in levels]
    rows = []
    for i in range(model.N):
        mean = np.asarray(model.family.moments(theta[i])[0]) * np.ones(len(grid))
        qs = [model.family.quantile(theta[i], p) for p in levels]
        for t in range(len(grid)):
            rows.append([float(grid[t, covariate]), i + 1, float(mean[t])] + [float(q[t]) for q in qs])
    return header, rows


def energy_config(kind: str, n_stop, **overrides) -> FitConfig:
    """Two-state normal model with one oil-price covariate, as in the energy study."""
    kwargs = dict(family="normal", n_states=2, n_stop=tuple(n_stop))
    kwargs.update(overrides)
    return FitConfig.build(kind, 1, **kwargs)


ENERGY_EXPERIMENTS = {
    "energy-linear": ("linear", (100, 200)),
    "energy-nonlinear": ("pspline", (1600, 200)),
}


def energy_study(y, X, kind: str = "linear", n_stop=(100, 200), **overrides) -> tuple[FittedModel, dict]:
    """Fit the energy-price model and collect the quantities the study reports."""
    model = fit(y, X, energy_config(kind, n_stop, **overrides))
    ll, weights = model.posteriors(y, X)
    states = hmm.decode_local(weights)
    summary = {
        "gamma": model.states.gamma.tolist(),
        "gamma_12": float(model.states.gamma[0, 1]),
        "gamma_21": float(model.states.gamma[1, 0]),
        "loglik": ll,
        **dwell_summary(model, states),
    }
    if kind == "linear":
        summary["mean_slope"] = model.linear_effects()[:, 0, 0].tolist()
        summary["sd_log_slope"] = model.linear_effects()[:, 1, 0].tolist()
    return model, summary
