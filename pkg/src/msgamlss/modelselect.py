"""Cross validation of stopping iterations and of the number of states.

Folds are sets of time points.  A held-out point stays in the chain but
its density is replaced by one during training; its out-of-sample score
is the difference between the full-data forward log-likelihood and the
forward log-likelihood with held-out densities masked.
"""

from __future__ import annotations

import csv
import itertools
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from msgamlss import hmm
from msgamlss.em import FitConfig, fit
from msgamlss.errors import DegeneracyError

log = logging.getLogger(__name__)

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class CvPlan:
    n_folds: int = 20
    seed: int = 0
    scheme: str = "random"

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("need at least two folds")
        if self.scheme not in ("random", "contiguous"):
            raise ValueError(f"unknown fold scheme {self.scheme!r}")

    def assign(self, T: int) -> np.ndarray:
        """Fold label (0-based) per time point; every fold is non-empty."""
        if T < self.n_folds:
            raise ValueError(f"cannot split {T} observations into {self.n_folds} folds")
        if self.scheme == "contiguous":
            return np.repeat(np.arange(self.n_folds), np.diff(np.linspace(0, T, self.n_folds + 1).astype(int)))
        labels = np.empty(T, dtype=int)
        perm = np.random.default_rng(self.seed).permutation(T)
        labels[perm] = np.arange(T) % self.n_folds
        return labels


@dataclass
class CvResult:
    grid: list[tuple[int, ...]]
    fold_scores: np.ndarray  # (G, n_folds); nan where a fold was skipped
    scores: np.ndarray
    chosen: tuple[int, ...]

    @property
    def best_score(self) -> float:
        return float(self.scores[self.grid.index(self.chosen)])

    def to_csv(self, path) -> None:
        G, F = self.fold_scores.shape
        N = len(self.grid[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"n_stop_{i + 1}" for i in range(N)] + [f"fold_{f + 1}" for f in range(F)] + ["mean"])
            for g, tup in enumerate(self.grid):
                w.writerow(list(tup) + [repr(float(s)) for s in self.fold_scores[g]] + [repr(float(self.scores[g]))])


def grid_product(per_state: Sequence[Iterable[int]]) -> list[tuple[int, ...]]:
    """Cartesian grid of stopping iterations, one axis per state."""
    return [tuple(int(n) for n in t) for t in itertools.product(*per_state)]


def choose(grid: Sequence[tuple[int, ...]], scores) -> tuple[int, ...]:
    """Grid point with the highest score; ties go to the smallest total iterations."""
    scores = np.asarray(scores, dtype=float)
    finite = np.isfinite(scores)
    if not finite.any():
        raise DegeneracyError("no grid point could be scored on any fold")
    best = scores[finite].max()
    tied = [g for g, s in zip(grid, scores) if np.isfinite(s) and s >= best - TIE_RTOL * abs(best)]
    return min(tied, key=lambda t: (sum(t), t))


def out_of_sample_loglik(model, y, X, held_out) -> float:
    """Held-out contribution: full forward log-likelihood minus the masked one."""
    L = model.log_density_table(y, X)
    full = hmm.forward(L, model.states)[0]
    L = L.copy()
    L[np.asarray(held_out, dtype=bool)] = 0.0
    return full - hmm.forward(L, model.states)[0]


def _fold_job(args):
    y, X, config, held_out = args
    try:
        model = fit(y, X, config, mask=held_out)
    except DegeneracyError as exc:
        return np.nan, str(exc)
    return out_of_sample_loglik(model, y, X, held_out), None


def cross_validate(y, X, config: FitConfig, grid: Sequence[Sequence[int]], plan: CvPlan = CvPlan(),
                   workers: int = 1) -> CvResult:
    """Exhaustive K-fold search over ``grid`` (a list of per-state ``n_stop`` tuples)."""
    grid = [tuple(int(n) for n in g) for g in grid]
    if not grid:
        raise ValueError("grid must not be empty")
    y = np.asarray(y, dtype=float)
    labels = plan.assign(len(y))
    jobs = []
    for tup in grid:
        cfg = replace(config, n_stop=tup)
        for f in range(plan.n_folds):
            jobs.append((y, X, cfg, labels == f))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(job) for job in jobs]
    fold_scores = np.array([r[0] for r in results]).reshape(len(grid), plan.n_folds)
    for (score, msg), job in zip(results, jobs):
        if msg is not None:
            warnings.warn(f"fold skipped for n_stop={job[2].n_stop}: {msg}", RuntimeWarning)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scores = np.nanmean(fold_scores, axis=1)
    chosen = choose(grid, scores)
    log.info("cross validation chose n_stop=%s", chosen)
    return CvResult(grid, fold_scores, scores, chosen)


@dataclass
class StateSelection:
    chosen: int
    scores: dict[int, float]
    results: dict[int, CvResult]


def select_states(y, X, config: FitConfig, candidates: dict[int, Sequence[Sequence[int]]],
                  plan: CvPlan = CvPlan(), workers: int = 1) -> StateSelection:
    """Pick the state count with the best cross-validated likelihood.

    ``candidates`` maps each ``N`` to its own grid of ``n_stop`` tuples.
    """
    if not candidates:
        raise ValueError("need at least one candidate state count")
    results = {}
    for N, grid in candidates.items():
        cfg = replace(config, n_states=N, n_stop=tuple(grid[0]))
        results[N] = cross_validate(y, X, cfg, grid, plan, workers)
    scores = {N: r.best_score for N, r in results.items()}
    chosen = max(scores, key=lambda n: (scores[n], -n))
    return StateSelection(chosen, scores, results)
