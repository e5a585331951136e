"""Response distributions with one link function per parameter.

A family describes a ``K``-parameter distribution on its natural scale
together with the link functions that map each parameter onto an additive
predictor.  Parameters are passed around as a sequence ``theta`` of ``K``
arrays (or scalars) that broadcast against the response ``y``.

Two families ship with the package:

* :class:`Normal` -- mean (identity link) and standard deviation (log link).
* :class:`NegativeBinomial` -- mean and dispersion ("size"), both log links,
  with variance ``mu + mu**2 / sigma``.

New families plug in by subclassing :class:`ResponseFamily` and
registering an instance with :func:`register_family`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

from msgamlss.errors import DomainError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LinkFunction:
    """Monotone map from a parameter's natural scale to the real line."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("identity", "log"):
            raise ValueError(f"unknown link {self.kind!r}")

    def apply(self, theta):
        if self.kind == "log":
            return np.log(theta)
        return np.asarray(theta, dtype=float) * 1.0

    def invert(self, eta):
        if self.kind == "log":
            return np.exp(eta)
        return np.asarray(eta, dtype=float) * 1.0

    def dtheta_deta(self, theta):
        """Derivative of the inverse link, expressed through ``theta``."""
        if self.kind == "log":
            return np.asarray(theta, dtype=float)
        return np.ones_like(np.asarray(theta, dtype=float))


IDENTITY = LinkFunction("identity")
LOG = LinkFunction("log")


class ResponseFamily:
    """Interface every response family implements.

    Subclasses set ``name``, ``links``, ``support`` and implement
    :meth:`_log_density`, :meth:`_gradients`, :meth:`_cdf`,
    :meth:`_quantile`, :meth:`sample`, :meth:`moments` and
    :meth:`initial_parameters`.  The public methods validate inputs and
    delegate.
    """

    name: str = ""
    links: tuple[LinkFunction, ...] = ()
    support: str = "reals"

    @property
    def K(self) -> int:
        return len(self.links)

    # -- parameter plumbing ------------------------------------------------
    def theta_from_eta(self, eta: Sequence) -> list[np.ndarray]:
        return [link.invert(e) for link, e in zip(self.links, eta)]

    def eta_from_theta(self, theta: Sequence) -> list[np.ndarray]:
        return [link.apply(t) for link, t in zip(self.links, theta)]

    def check_theta(self, theta: Sequence) -> list[np.ndarray]:
        if len(theta) != self.K:
            raise DomainError(f"{self.name}: expected {self.K} parameters, got {len(theta)}")
        out = [np.asarray(t, dtype=float) for t in theta]
        for k, (link, t) in enumerate(zip(self.links, out)):
            if not np.all(np.isfinite(t)):
                raise DomainError(f"{self.name}: parameter {k + 1} is not finite")
            if link.kind == "log" and not np.all(t > 0):
                raise DomainError(f"{self.name}: parameter {k + 1} must be strictly positive")
        return out

    def check_y(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError(f"{self.name}: response contains non-finite values")
        if self.support == "nonnegative-integers":
            if np.any(y < 0) or np.any(y != np.floor(y)):
                raise DomainError(f"{self.name}: response must be a nonnegative integer")
        return y

    # -- public, validated API ---------------------------------------------
    def log_density(self, y, theta, validate: bool = True):
        """Pointwise ``log f(y; theta)``.

        ``validate=False`` skips the domain checks; callers that have
        already validated ``y`` use it in inner loops.
        """
        if not validate:
            return self._log_density(y, theta)
        return self._log_density(self.check_y(y), self.check_theta(theta))

    def gradients(self, y, theta, validate: bool = True) -> np.ndarray:
        """Derivatives of the log-density w.r.t. every predictor, stacked on axis 0."""
        if not validate:
            return np.stack(self._gradients(y, theta))
        return np.stack(self._gradients(self.check_y(y), self.check_theta(theta)))

    def gradient(self, y, theta, k: int):
        """Derivative of ``log f`` w.r.t. the predictor of parameter ``k`` (0-based)."""
        if not 0 <= k < self.K:
            raise DomainError(f"{self.name}: parameter index {k} out of range")
        return self._gradients(self.check_y(y), self.check_theta(theta))[k]

    def cdf(self, y, theta):
        return self._cdf(np.asarray(y, dtype=float), self.check_theta(theta))

    def quantile(self, theta, p):
        """Smallest ``q`` with ``cdf(q) >= p``."""
        p = np.asarray(p, dtype=float)
        if not np.all((p > 0) & (p < 1)):
            raise DomainError("quantile level must lie strictly between 0 and 1")
        return self._quantile(self.check_theta(theta), p)

    # -- to implement --------------------------------------------------------
    def _log_density(self, y, theta):
        raise NotImplementedError

    def _gradients(self, y, theta) -> list:
        raise NotImplementedError

    def _cdf(self, y, theta):
        raise NotImplementedError

    def _quantile(self, theta, p):
        raise NotImplementedError

    def sample(self, theta, rng: np.random.Generator):
        raise NotImplementedError

    def moments(self, theta) -> tuple:
        """Return ``(mean, variance)``."""
        raise NotImplementedError

    def initial_parameters(self, y, w) -> list[float]:
        """Weighted moment estimates on the natural scale, used as offsets."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


def _weighted_moments(y, w):
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    total = w.sum()
    mean = float(np.dot(w, y) / total)
    var = float(np.dot(w, (y - mean) ** 2) / total)
    return mean, var


class Normal(ResponseFamily):
    name = "normal"
    links = (IDENTITY, LOG)
    support = "reals"

    def _log_density(self, y, theta):
        mu, sigma = theta
        z = (y - mu) / sigma
        return -np.log(sigma) - 0.5 * LOG_2PI - 0.5 * z * z

    def _gradients(self, y, theta):
        mu, sigma = theta
        r = (y - mu) / sigma
        return [r / sigma, r * r - 1.0]

    def _cdf(self, y, theta):
        mu, sigma = theta
        return special.ndtr((y - mu) / sigma)

    def _quantile(self, theta, p):
        mu, sigma = theta
        return mu + sigma * special.ndtri(p)

    def sample(self, theta, rng):
        mu, sigma = self.check_theta(theta)
        return rng.normal(mu, sigma)

    def moments(self, theta):
        mu, sigma = self.check_theta(theta)
        return mu, sigma**2

    def initial_parameters(self, y, w):
        mean, var = _weighted_moments(y, w)
        return [mean, float(np.sqrt(max(var, 1e-12)))]


class NegativeBinomial(ResponseFamily):
    """Negative binomial in mean--dispersion form.

    ``f(y) = G(y+s) / (G(y+1) G(s)) * (s/(s+m))**s * (m/(m+s))**y``.
    """

    name = "nbinom"
    links = (LOG, LOG)
    support = "nonnegative-integers"

    # dispersion offsets are kept inside this range when moments are
    # under-dispersed or nearly Poisson
    dispersion_bounds = (1e-3, 1e3)

    def _log_density(self, y, theta):
        mu, sigma = theta
        log_ms = np.log(mu + sigma)
        return (
            special.gammaln(y + sigma)
            - special.gammaln(y + 1.0)
            - special.gammaln(sigma)
            + sigma * (np.log(sigma) - log_ms)
            + special.xlogy(y, mu)
            - y * log_ms
        )

    def _gradients(self, y, theta):
        mu, sigma = theta
        ms = mu + sigma
        g_mu = sigma * (y - mu) / ms
        g_sigma = sigma * (
            special.digamma(y + sigma)
            - special.digamma(sigma)
            + np.log(sigma / ms)
            + 1.0
            - (sigma + y) / ms
        )
        return [g_mu, g_sigma]

    def _scipy(self, theta):
        mu, sigma = theta
        return stats.nbinom(sigma, sigma / (sigma + mu))

    def _cdf(self, y, theta):
        return self._scipy(theta).cdf(y)

    def _quantile(self, theta, p):
        return self._scipy(theta).ppf(p)

    def sample(self, theta, rng):
        mu, sigma = self.check_theta(theta)
        return rng.negative_binomial(sigma, sigma / (sigma + mu)).astype(float)

    def moments(self, theta):
        mu, sigma = self.check_theta(theta)
        return mu, mu + mu**2 / sigma

    def initial_parameters(self, y, w):
        mean, var = _weighted_moments(y, w)
        mean = max(mean, 1e-8)
        lo, hi = self.dispersion_bounds
        excess = var - mean
        sigma = hi if excess <= 0 else float(np.clip(mean**2 / excess, lo, hi))
        return [mean, sigma]


_FAMILIES: dict[str, Callable[[], ResponseFamily]] = {
    "normal": Normal,
    "nbinom": NegativeBinomial,
    "negative-binomial": NegativeBinomial,
}


def register_family(name: str, factory: Callable[[], ResponseFamily]) -> None:
    _FAMILIES[name] = factory


def get_family(name: str | ResponseFamily) -> ResponseFamily:
    """Resolve a family by name (``"normal"``, ``"nbinom"``) or pass one through."""
    if isinstance(name, ResponseFamily):
        return name
    try:
        return _FAMILIES[name]()
    except KeyError:
        raise DomainError(f"unknown family {name!r}; choose from {sorted(_FAMILIES)}") from None
