"""Command-line interface.

Every command reads a flat JSON config (``--config``); ``--seed``,
``--workers``, ``--out`` and ``--exact-paper`` override it.  Results are
written as CSV/JSON into the output directory.  Failures exit non-zero and
print a JSON error record on stderr (also written to ``error.json``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from msgamlss import reports
from msgamlss.baselearners import default_specs
from msgamlss.data import Dataset, ingest_csv, write_dataset, write_table
from msgamlss.em import FitConfig, FittedModel, fit
from msgamlss.errors import ConfigError, MSGamlssError
from msgamlss.families import get_family
from msgamlss.modelselect import CvPlan, cross_validate, grid_product, select_states
from msgamlss.simulate import get_design, run_experiment, simulate_dataset

log = logging.getLogger("msgamlss")


@dataclass
class RunConfig:
    data: str | None = None
    model: str | None = None
    family: str = "normal"
    n_states: int = 2
    n_stop: list[int] = field(default_factory=lambda: [100, 100])
    step_length: float = 0.1
    learner: str | list[str] = "linear"
    pspline_degree: int = 3
    pspline_knots: int = 20
    pspline_penalty_order: int = 2
    pspline_df: float = 4.0
    stationary: bool = False
    tol: float = 1e-6
    max_iter: int = 100
    exact_paper: bool = False
    n_starts: int = 5
    start_iter: int = 5
    seed: int = 0
    workers: int = 1
    folds: int = 20
    fold_scheme: str = "random"
    grid: list[list[int]] | None = None
    state_candidates: list[int] | None = None
    quantiles: list[float] = field(default_factory=lambda: list(reports.QUANTILE_LEVELS))
    grid_covariate: int = 1
    grid_points: int = 101
    design: str = "linear-nbinom"
    experiment: str | None = None
    T: int | None = None
    n_covariates: int | None = None
    replications: int = 1
    full_cv: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.n_states < 1:
            raise ConfigError("n_states must be >= 1")
        if not 0 < self.step_length < 1:
            raise ConfigError("step_length must lie in (0, 1)")
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("tol must be > 0 and max_iter >= 1")
        if self.n_starts < 1 or self.start_iter < 1:
            raise ConfigError("n_starts and start_iter must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(not 0 < q < 1 for q in self.quantiles):
            raise ConfigError("quantile levels must lie in (0, 1)")
        if self.fold_scheme not in ("random", "contiguous"):
            raise ConfigError("fold_scheme must be 'random' or 'contiguous'")
        try:
            get_family(self.family)
        except MSGamlssError as exc:
            raise ConfigError(str(exc)) from None

    def fit_config(self, n_covariates: int) -> FitConfig:
        family = get_family(self.family)
        kinds = [self.learner] * family.K if isinstance(self.learner, str) else list(self.learner)
        if len(kinds) != family.K:
            raise ConfigError(f"learner list needs {family.K} entries for {family.name}")
        opts = dict(degree=self.pspline_degree, n_knots=self.pspline_knots,
                    penalty_order=self.pspline_penalty_order, df=self.pspline_df)
        try:
            learners = [default_specs(k, n_covariates, **opts) for k in kinds]
            return FitConfig(
                n_states=self.n_states, family=self.family, learners=learners,
                n_stop=tuple(self.n_stop), step_length=self.step_length,
                stationary=self.stationary, tol=self.tol, max_iter=self.max_iter,
                seed=self.seed, exact_paper=self.exact_paper,
                n_starts=self.n_starts, start_iter=self.start_iter,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dataset(self) -> Dataset:
        if not self.data:
            raise ConfigError("config key 'data' (CSV path) is required for this command")
        return ingest_csv(self.data)

    def fitted_model(self) -> FittedModel:
        if not self.model:
            raise ConfigError("config key 'model' (fitted model JSON) is required for this command")
        return FittedModel.from_json(Path(self.model).read_text())


# -- commands -----------------------------------------------------------------


def _write_fit(model: FittedModel, out: Path) -> None:
    (out / "model.json").write_text(model.to_json())
    d = model.diagnostics
    rows = [[0, d["initial_loglik"], ""]]
    rows += [[m + 1, ll, c] for m, (ll, c) in enumerate(zip(d["loglik"], d["cdll"]))]
    write_table(out / "diagnostics.csv", ["iteration", "loglik", "cdll"], rows)


def cmd_fit(cfg: RunConfig, out: Path) -> dict:
    ds = cfg.dataset()
    model = fit(ds.y, ds.X, cfg.fit_config(ds.P))
    _write_fit(model, out)
    summary = {
        "gamma": model.states.gamma.tolist(),
        "delta": model.states.delta.tolist(),
        "loglik": model.diagnostics["loglik"][-1] if model.diagnostics["loglik"] else None,
        "n_iter": model.diagnostics["n_iter"],
        "converged": model.diagnostics["converged"],
        "implied_mean_dwell": model.states.dwell_times().tolist(),
        "selected": {ds.names[j + 1]: model.selected()[:, :, j].tolist()
                     for j in range(ds.P) if model.selected()[:, :, j].any()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def cmd_cv(cfg: RunConfig, out: Path) -> dict:
    ds = cfg.dataset()
    plan = CvPlan(cfg.folds, cfg.seed, cfg.fold_scheme)
    base = cfg.fit_config(ds.P)
    if cfg.state_candidates:
        axis = (cfg.grid or [[100, 200, 400, 800]])[0]
        candidates = {N: grid_product([axis] * N) for N in cfg.state_candidates}
        sel = select_states(ds.y, ds.X, base, candidates, plan, cfg.workers)
        for N, res in sel.results.items():
            res.to_csv(out / f"cv_N{N}.csv")
        summary = {"chosen_n_states": sel.chosen, "scores": {str(k): v for k, v in sel.scores.items()},
                   "chosen_n_stop": {str(N): list(r.chosen) for N, r in sel.results.items()}}
    else:
        if not cfg.grid:
            raise ConfigError("config key 'grid' (one list of n_stop values per state) is required")
        if len(cfg.grid) != cfg.n_states:
            raise ConfigError("grid needs one axis per state")
        res = cross_validate(ds.y, ds.X, base, grid_product(cfg.grid), plan, cfg.workers)
        res.to_csv(out / "cv.csv")
        summary = {"chosen_n_stop": list(res.chosen), "best_score": res.best_score}
    (out / "cv.json").write_text(json.dumps(summary, indent=1))
    return summary


def cmd_decode(cfg: RunConfig, out: Path) -> dict:
    ds = cfg.dataset()
    model = cfg.fitted_model()
    ll, weights = model.posteriors(ds.y, ds.X)
    header, rows = reports.decode_rows(weights)
    write_table(out / "decode.csv", header, rows)
    summary = {"loglik": ll, **reports.dwell_summary(model, [r[-1] - 1 for r in rows])}
    (out / "dwell.json").write_text(json.dumps(summary, indent=1))
    return summary


def cmd_predict_quantiles(cfg: RunConfig, out: Path) -> dict:
    ds = cfg.dataset()
    model = cfg.fitted_model()
    j = cfg.grid_covariate - 1
    if not 0 <= j < ds.P:
        raise ConfigError(f"grid_covariate must be in 1..{ds.P}")
    grid = reports.covariate_grid(ds.X, j, cfg.grid_points)
    header, rows = reports.quantile_rows(model, grid, j, cfg.quantiles)
    write_table(out / "quantiles.csv", header, rows)
    return {"rows": len(rows), "levels": cfg.quantiles}


def _design(cfg: RunConfig):
    overrides = {}
    if cfg.T is not None:
        overrides["T"] = cfg.T
    if cfg.n_covariates is not None:
        overrides["n_covariates"] = cfg.n_covariates
    try:
        return get_design(cfg.design, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    design = _design(cfg)
    y, X, states = simulate_dataset(design, [cfg.seed, 0])
    write_dataset(out / "data.csv", y, X)
    write_table(out / "states.csv", ["t", "state"], [[t + 1, int(s) + 1] for t, s in enumerate(states)])
    return {"design": design.name, "T": design.T, "P": design.n_covariates}


def cmd_replicate(cfg: RunConfig, out: Path) -> dict:
    name = cfg.experiment or cfg.design
    if name in reports.ENERGY_EXPERIMENTS:
        kind, n_stop = reports.ENERGY_EXPERIMENTS[name]
        ds = cfg.dataset()
        model, summary = reports.energy_study(ds.y, ds.X[:, :1], kind, n_stop,
                                              exact_paper=cfg.exact_paper, max_iter=cfg.max_iter,
                                              seed=cfg.seed, n_starts=cfg.n_starts,
                                              start_iter=cfg.start_iter)
        _write_fit(model, out)
        _, weights = model.posteriors(ds.y, ds.X[:, :1])
        write_table(out / "decode.csv", *reports.decode_rows(weights))
        grid = reports.covariate_grid(ds.X[:, :1], 0, cfg.grid_points)
        write_table(out / "quantiles.csv", *reports.quantile_rows(model, grid, 0, cfg.quantiles))
        (out / "summary.json").write_text(json.dumps(summary, indent=1))
        return summary
    cfg.design = name
    design = _design(cfg)
    fit_cfg = design.fit_config(exact_paper=cfg.exact_paper, max_iter=cfg.max_iter, seed=cfg.seed,
                                n_starts=cfg.n_starts, start_iter=cfg.start_iter)
    report = run_experiment(design, fit_cfg, cfg.replications, cfg.seed, cfg.workers, cfg.full_cv,
                            CvPlan(cfg.folds, cfg.seed, cfg.fold_scheme))
    report.to_csv(out / "report.csv")
    (out / "report.json").write_text(report.to_json())
    return report.summary()


COMMANDS = {
    "fit": cmd_fit,
    "cv": cmd_cv,
    "decode": cmd_decode,
    "predict-quantiles": cmd_predict_quantiles,
    "simulate": cmd_simulate,
    "replicate": cmd_replicate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgamlss", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--exact-paper", action="store_true",
                        help="disable the monotonicity safeguards in boosting and EM")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        nested = [k for k, v in raw.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"config must be flat; nested objects under {nested}")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.exact_paper:
        raw["exact_paper"] = True
    try:
        return RunConfig.from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg = load_config(args)
        result = COMMANDS[args.command](cfg, out)
    except MSGamlssError as exc:
        return _fail(out, exc.record())
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        return _fail(out, {"error": "internal", "type": type(exc).__name__, "message": str(exc)})
    print(json.dumps(result, indent=1))
    return 0


def _fail(out: Path, record: dict) -> int:
    text = json.dumps(record)
    print(text, file=sys.stderr)
    try:
        (out / "error.json").write_text(text)
    except OSError:
        pass
    return 1


if __name__ == "__main__":
    sys.exit(main())
