"""Exponential-family distributions and links used by the fitting engine.

Dispersion conventions: the gaussian ``phi`` is the variance; the gamma
distribution is simulated with shape ``1/phi`` and scale ``mu * phi``;
poisson and binomial fix ``phi = 1``. Binomial responses are 0/1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

FAMILIES = ("gaussian", "poisson", "binomial", "gamma")
LINKS = ("identity", "log", "logit")
DEFAULT_LINK = {"gaussian": "identity", "poisson": "log", "binomial": "logit", "gamma": "log"}

_ETA_MAX = 700.0


class DomainError(ValueError):
    """A value lies outside the domain of a link, variance or distribution."""


@dataclass(frozen=True)
class Family:
    name: str
    link: str = ""

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown family '{self.name}'; expected one of {FAMILIES}")
        if not self.link:
            object.__setattr__(self, "link", DEFAULT_LINK[self.name])
        if self.link not in LINKS:
            raise ValueError(f"unknown link '{self.link}'; expected one of {LINKS}")

    @property
    def fixed_scale(self) -> bool:
        return self.name in ("poisson", "binomial")

    @property
    def canonical_identity(self) -> bool:
        return self.name == "gaussian" and self.link == "identity"

    def link_eval(self, mu):
        return link_eval(self, mu)

    def inv_link(self, eta):
        return inv_link(self, eta)

    def dmu_deta(self, eta):
        return dmu_deta(self, eta)

    def variance(self, mu):
        return variance(self, mu)


def get_family(name: str, link: str | None = None) -> Family:
    return Family(name, link or "")


def link_eval(f: Family, mu):
    mu = np.asarray(mu, dtype=float)
    if f.link == "identity":
        return mu.copy()
    if f.link == "log":
        if np.any(mu <= 0):
            raise DomainError("log link needs mu > 0")
        return np.log(mu)
    if np.any((mu <= 0) | (mu >= 1)):
        raise DomainError("logit link needs 0 < mu < 1")
    return special.logit(mu)


def inv_link(f: Family, eta):
    eta = np.asarray(eta, dtype=float)
    if f.link == "identity":
        return eta.copy()
    if f.link == "log":
        return np.exp(np.minimum(eta, _ETA_MAX))
    return special.expit(eta)


def dmu_deta(f: Family, eta):
    eta = np.asarray(eta, dtype=float)
    if f.link == "identity":
        return np.ones_like(eta)
    if f.link == "log":
        return np.exp(np.minimum(eta, _ETA_MAX))
    p = special.expit(eta)
    return p * (1.0 - p)


def variance(f: Family, mu):
    mu = np.asarray(mu, dtype=float)
    if f.name == "gaussian":
        return np.ones_like(mu)
    if f.name == "poisson":
        if np.any(mu < 0):
            raise DomainError("poisson mean must be non-negative")
        return mu.copy()
    if f.name == "binomial":
        if np.any((mu < 0) | (mu > 1)):
            raise DomainError("binomial mean must lie in [0, 1]")
        return mu * (1.0 - mu)
    if np.any(mu <= 0):
        raise DomainError("gamma mean must be positive")
    return mu ** 2


def validate_response(f: Family, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("response contains non-finite values")
    if f.name == "poisson" and (np.any(y < 0) or np.any(y != np.round(y))):
        raise DomainError("poisson response must be non-negative integers")
    if f.name == "binomial" and np.any((y != 0) & (y != 1)):
        raise DomainError("binomial response must be 0 or 1")
    if f.name == "gamma" and np.any(y <= 0):
        raise DomainError("gamma response must be positive")
    return y


def _ylogy(y, mu):
    # y * log(y / mu) with the 0 * log(0) = 0 convention
    with np.errstate(divide="ignore", invalid="ignore"):
        out = y * np.log(y / mu)
    return np.where(y > 0, out, 0.0)


def unit_deviance(f: Family, y, mu, check: bool = True) -> np.ndarray:
    y = validate_response(f, y) if check else np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if f.name == "gaussian":
        return (y - mu) ** 2
    if f.name == "poisson":
        return 2.0 * (_ylogy(y, mu) - (y - mu))
    if f.name == "binomial":
        return 2.0 * (_ylogy(y, mu) + _ylogy(1.0 - y, 1.0 - mu))
    return 2.0 * (-np.log(y / mu) + (y - mu) / mu)


def deviance(f: Family, y, mu, weights=None, check: bool = True) -> float:
    d = unit_deviance(f, y, mu, check)
    w = np.ones_like(d) if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(w * d))


def deviance_residuals(f: Family, y, mu, weights=None) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError("y and mu must have equal length")
    d = unit_deviance(f, y, mu)
    if weights is not None:
        d = d * np.asarray(weights, dtype=float)
    return np.sign(y - mu) * np.sqrt(np.maximum(d, 0.0))


def log_likelihood(f: Family, y, mu, phi: float = 1.0, weights=None) -> float:
    """Log likelihood; used for the gaussian restricted likelihood."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if f.name == "gaussian":
        return float(np.sum(-0.5 * np.log(2 * np.pi * phi / w) - w * (y - mu) ** 2 / (2 * phi)))
    if f.name == "poisson":
        return float(np.sum(w * (y * np.log(mu) - mu - special.gammaln(y + 1))))
    if f.name == "binomial":
        return float(np.sum(w * (y * np.log(mu) + (1 - y) * np.log1p(-mu))))
    shape = 1.0 / phi
    return float(np.sum(w * (shape * np.log(shape * y / mu) - shape * y / mu
                             - np.log(y) - special.gammaln(shape))))


def initial_mu(f: Family, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if f.name == "poisson":
        return y + 0.1
    if f.name == "binomial":
        return (y + 0.5) / 2.0
    if f.name == "gamma" or f.link == "log":
        return np.maximum(y, 1e-3 * max(np.mean(np.abs(y)), 1e-8))
    return y.copy()


def simulate_response(f: Family, mu, phi: float, rng: np.random.Generator) -> np.ndarray:
    """Draw responses elementwise from the family at means ``mu``."""
    mu = np.asarray(mu, dtype=float)
    if f.name == "gaussian":
        if phi < 0:
            raise DomainError("gaussian variance phi must be non-negative")
        return mu + np.sqrt(phi) * rng.standard_normal(mu.shape)
    if f.name == "poisson":
        if phi != 1:
            raise DomainError("poisson fixes phi = 1")
        return rng.poisson(mu).astype(float)
    if f.name == "binomial":
        if phi != 1:
            raise DomainError("binomial fixes phi = 1")
        return (rng.random(mu.shape) < mu).astype(float)
    if phi <= 0:
        raise DomainError("gamma phi must be positive")
    return rng.gamma(1.0 / phi, mu * phi)
