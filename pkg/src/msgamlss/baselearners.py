"""Least-squares base-learners fitted to gradient vectors.

Three kinds are available:

``intercept``
    The mean of the gradient.
``linear``
    Unpenalized least squares on ``(1, x)``.
``pspline``
    Cubic B-splines on equidistant knots with a difference penalty.  The
    smoothing parameter is calibrated once so that the trace of the hat
    matrix equals the requested degrees of freedom.

:func:`fit` and :func:`predict` handle one learner at a time.  The boosting
loop instead uses :class:`LearnerBank`, which precomputes the (fixed) hat
operators of every candidate learner for one design matrix and fits all of
them to a gradient vector in a few matrix products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from msgamlss.errors import DegenerateLearnerError

KINDS = ("intercept", "linear", "pspline")
LAMBDA_BRACKET = (1e-8, 1e8)
DF_TOL = 1e-10
MIN_DISTINCT_PSPLINE = 2


@dataclass(frozen=True)
class BaseLearnerSpec:
    kind: str
    covariate: int | None = None
    degree: int = 3
    n_knots: int = 20
    penalty_order: int = 2
    df: float = 4.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown base-learner kind {self.kind!r}")
        if self.kind == "intercept":
            if self.covariate is not None:
                raise ValueError("intercept-only learners take no covariate")
        elif self.covariate is None or self.covariate < 0:
            raise ValueError(f"{self.kind} learner needs a covariate index")
        if self.kind == "pspline":
            if not self.df > self.penalty_order:
                raise ValueError("pspline df must exceed the penalty order")
            if self.n_knots < self.penalty_order + 1:
                raise ValueError("pspline needs at least penalty_order + 1 interior knots")

    @property
    def n_coef(self) -> int:
        return {"intercept": 1, "linear": 2}.get(self.kind, self.n_knots + self.degree + 1)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "covariate": self.covariate}
        if self.kind == "pspline":
            d.update(degree=self.degree, n_knots=self.n_knots,
                     penalty_order=self.penalty_order, df=self.df)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BaseLearnerSpec:
        return cls(**d)


@dataclass(frozen=True)
class PSplineBasis:
    """B-spline basis with ``n_knots`` equidistant interior knots on ``[xmin, xmax]``."""

    xmin: float
    xmax: float
    degree: int = 3
    n_knots: int = 20

    @property
    def knots(self) -> np.ndarray:
        h = (self.xmax - self.xmin) / (self.n_knots + 1)
        t = self.xmin + h * np.arange(-self.degree, self.n_knots + 2 + self.degree)
        # boundary knots must equal the data range exactly
        t[self.degree] = self.xmin
        t[self.degree + self.n_knots + 1] = self.xmax
        return t

    def design(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.xmin, self.xmax)
        return BSpline.design_matrix(x, self.knots, self.degree).toarray()


def difference_penalty(n_coef: int, order: int) -> np.ndarray:
    D = np.diff(np.eye(n_coef), n=order, axis=0)
    return D.T @ D


def _df(btb, pen, lam):
    return float(np.trace(np.linalg.solve(btb + lam * pen, btb)))


def calibrate_lambda(btb: np.ndarray, pen: np.ndarray, target_df: float) -> float:
    """Bisection on ``log(lambda)`` so that ``trace(S) = target_df``."""
    lo, hi = np.log(LAMBDA_BRACKET[0]), np.log(LAMBDA_BRACKET[1])
    df_lo, df_hi = _df(btb, pen, np.exp(lo)), _df(btb, pen, np.exp(hi))
    if not df_hi < target_df < df_lo:
        raise DegenerateLearnerError(
            f"df {target_df} not attainable in lambda bracket {LAMBDA_BRACKET} "
            f"(df range {df_hi:.4g}..{df_lo:.4g})"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        d = _df(btb, pen, np.exp(mid))
        if abs(d - target_df) < DF_TOL:
            break
        if d > target_df:
            lo = mid
        else:
            hi = mid
    return float(np.exp(mid))


@dataclass
class PSplineOperator:
    """Everything needed to fit one P-spline learner to a gradient vector."""

    basis: PSplineBasis
    lam: float
    B: np.ndarray
    solver: np.ndarray  # (BtB + lam P)^-1 Bt, shape (n_coef, T)

    @classmethod
    def build(cls, spec: BaseLearnerSpec, x) -> PSplineOperator:
        x = np.asarray(x, dtype=float)
        if np.unique(x).size < MIN_DISTINCT_PSPLINE or not np.all(np.isfinite(x)):
            raise DegenerateLearnerError(f"covariate {spec.covariate} has too few distinct values")
        basis = PSplineBasis(float(x.min()), float(x.max()), spec.degree, spec.n_knots)
        B = basis.design(x)
        btb = B.T @ B
        pen = difference_penalty(B.shape[1], spec.penalty_order)
        lam = calibrate_lambda(btb, pen, spec.df)
        solver = np.linalg.solve(btb + lam * pen, B.T)
        return cls(basis, lam, B, solver)

    def effective_df(self) -> float:
        return float(np.trace(self.solver @ self.B))


@dataclass
class BaseLearnerFit:
    spec: BaseLearnerSpec
    coefficients: np.ndarray
    rss: float
    basis: PSplineBasis | None = None
    lam: float | None = None


def _column(spec, X):
    X = np.asarray(X, dtype=float)
    return X if X.ndim == 1 else X[:, spec.covariate]


def fit(spec: BaseLearnerSpec, x, g) -> BaseLearnerFit:
    """Fit one base-learner to the gradient ``g``.

    ``x`` is the covariate column (a full design matrix is also accepted,
    in which case ``spec.covariate`` picks the column).
    """
    g = np.asarray(g, dtype=float)
    if g.size < 2:
        raise DegenerateLearnerError("need at least two observations")
    if spec.kind == "intercept":
        coef = np.array([g.mean()])
        return BaseLearnerFit(spec, coef, float(np.sum((g - coef[0]) ** 2)))
    x = _column(spec, x)
    if spec.kind == "linear":
        xc = x - x.mean()
        sxx = float(xc @ xc)
        if sxx <= 1e-12 * max(1.0, float(x @ x)):
            raise DegenerateLearnerError(f"covariate {spec.covariate} is constant")
        slope = float(xc @ g) / sxx
        coef = np.array([g.mean() - slope * x.mean(), slope])
        resid = g - (coef[0] + coef[1] * x)
        return BaseLearnerFit(spec, coef, float(resid @ resid))
    op = PSplineOperator.build(spec, x)
    coef = op.solver @ g
    resid = g - op.B @ coef
    return BaseLearnerFit(spec, coef, float(resid @ resid), op.basis, op.lam)


def predict(fitted: BaseLearnerFit, x_new) -> np.ndarray:
    """Evaluate a fitted learner; P-spline inputs are clamped to the training range."""
    spec, c = fitted.spec, fitted.coefficients
    if spec.kind == "intercept":
        n = np.asarray(x_new).shape[0] if np.ndim(x_new) else 1
        return np.full(n, float(c[0]))
    x = _column(spec, x_new)
    if spec.kind == "linear":
        return c[0] + c[1] * x
    return fitted.basis.design(x) @ c


def effective_df(spec: BaseLearnerSpec, x) -> float:
    if spec.kind == "intercept":
        return 1.0
    if spec.kind == "linear":
        return 2.0
    return PSplineOperator.build(spec, _column(spec, x)).effective_df()


@dataclass
class LearnerBank:
    """All candidate learners for one additive predictor, on fixed covariates.

    Hat operators depend only on the covariates, so they are built once.
    Degenerate learners are recorded in ``excluded`` and never selected.
    """

    specs: list[BaseLearnerSpec]
    X: np.ndarray
    excluded: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.X = X
        self.T = X.shape[0]
        self._intercept: list[int] = []
        lin, psp = [], []
        self._ops: dict[int, PSplineOperator] = {}
        for j, spec in enumerate(self.specs):
            if spec.kind == "intercept":
                self._intercept.append(j)
                continue
            if spec.covariate >= X.shape[1]:
                raise ValueError(f"covariate index {spec.covariate} out of range for P={X.shape[1]}")
            x = X[:, spec.covariate]
            if spec.kind == "linear":
                xc = x - x.mean()
                if xc @ xc <= 1e-12 * max(1.0, float(x @ x)):
                    self.excluded[j] = "constant covariate"
                    continue
                lin.append(j)
            else:
                try:
                    self._ops[j] = PSplineOperator.build(spec, x)
                except DegenerateLearnerError as exc:
                    self.excluded[j] = str(exc)
                    continue
                psp.append(j)
        self._lin = np.array(lin, dtype=int)
        self._pos = {j: p for p, j in enumerate(lin)}
        self._pos.update({j: p for p, j in enumerate(psp)})
        if lin:
            cols = X[:, [self.specs[j].covariate for j in lin]]
            self._lin_mean = cols.mean(axis=0)
            self._lin_xc = cols - self._lin_mean
            self._lin_sxx = np.einsum("ij,ij->j", self._lin_xc, self._lin_xc)
        self._psp = np.array(psp, dtype=int)
        if psp:
            self._psp_B = np.stack([self._ops[j].B for j in psp])
            self._psp_S = np.stack([self._ops[j].solver for j in psp])

    def __len__(self):
        return len(self.specs)

    @property
    def covariates(self) -> list[int | None]:
        return [s.covariate for s in self.specs]

    def fit_all(self, g) -> tuple[np.ndarray, BankFits]:
        """RSS of every learner (``inf`` when excluded) and a coefficient lookup."""
        g = np.asarray(g, dtype=float)
        rss = np.full(len(self.specs), np.inf)
        gbar = g.mean()
        gc = g - gbar
        tss = float(gc @ gc)
        fits = BankFits(self, gbar)
        if self._intercept:
            rss[self._intercept] = tss
        if self._lin.size:
            sxy = self._lin_xc.T @ g
            slope = sxy / self._lin_sxx
            rss[self._lin] = np.maximum(tss - sxy * slope, 0.0)
            fits.slope = slope
        if self._psp.size:
            C = self._psp_S @ g
            R = g[None, :] - np.matmul(self._psp_B, C[:, :, None])[:, :, 0]
            rss[self._psp] = np.einsum("jt,jt->j", R, R)
            fits.C = C
        return rss, fits

    def fitted_values(self, j: int, coef) -> np.ndarray:
        """Training-time fitted values of learner ``j``."""
        spec = self.specs[j]
        if spec.kind == "intercept":
            return np.full(self.T, float(coef[0]))
        if spec.kind == "linear":
            return coef[0] + coef[1] * self.X[:, spec.covariate]
        return self._ops[j].B @ coef

    def as_fit(self, j: int, coef, rss: float = np.nan) -> BaseLearnerFit:
        op = self._ops.get(j)
        return BaseLearnerFit(self.specs[j], np.asarray(coef, dtype=float), float(rss),
                              op.basis if op else None, op.lam if op else None)

    def definitions(self) -> list[tuple[BaseLearnerSpec, PSplineBasis | None, float | None]]:
        """``(spec, basis, lambda)`` per learner, enough to evaluate fits on new data."""
        out = []
        for j, spec in enumerate(self.specs):
            op = self._ops.get(j)
            out.append((spec, op.basis if op else None, op.lam if op else None))
        return out

    def describe(self) -> list[dict]:
        out = []
        for j, spec in enumerate(self.specs):
            d = spec.to_dict()
            op = self._ops.get(j)
            if op is not None:
                d.update(xmin=op.basis.xmin, xmax=op.basis.xmax, lam=op.lam)
            if j in self.excluded:
                d["excluded"] = self.excluded[j]
            out.append(d)
        return out


class BankFits:
    """Coefficients of one :meth:`LearnerBank.fit_all` call, extracted on demand."""

    def __init__(self, bank: LearnerBank, gbar: float):
        self.bank = bank
        self.gbar = gbar
        self.slope = None
        self.C = None

    def __getitem__(self, j: int) -> np.ndarray:
        kind = self.bank.specs[j].kind
        if j in self.bank.excluded:
            raise KeyError(j)
        if kind == "intercept":
            return np.array([self.gbar])
        pos = self.bank._pos[j]
        if kind == "linear":
            b = self.slope[pos]
            return np.array([self.gbar - b * self.bank._lin_mean[pos], b])
        return self.C[pos].copy()


def learner_from_description(d: dict) -> tuple[BaseLearnerSpec, PSplineBasis | None, float | None]:
    d = dict(d)
    xmin, xmax, lam = d.pop("xmin", None), d.pop("xmax", None), d.pop("lam", None)
    d.pop("excluded", None)
    spec = BaseLearnerSpec.from_dict(d)
    basis = PSplineBasis(xmin, xmax, spec.degree, spec.n_knots) if xmin is not None else None
    return spec, basis, lam


def default_specs(kind: str, n_covariates: int, **pspline_options) -> list[BaseLearnerSpec]:
    """One learner of ``kind`` per covariate (a single intercept for ``intercept``)."""
    if kind == "intercept":
        return [BaseLearnerSpec("intercept")]
    return [BaseLearnerSpec(kind, j, **pspline_options) for j in range(n_covariates)]
