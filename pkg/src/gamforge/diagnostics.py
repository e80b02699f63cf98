"""Residual diagnostics: QQ data with reference bands and the four appraisal tables."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
from scipy import stats

from . import family as fam
from .engine import FittedGam

RESIDUAL_TYPES = ("deviance", "pearson", "response")
_QQ_STREAM = 3


def _residuals(f: fam.Family, y, mu, weights, type: str) -> np.ndarray:
    if type == "deviance":
        return fam.deviance_residuals(f, y, mu, weights)
    if type == "pearson":
        w = 1.0 if weights is None else weights
        return (y - mu) * np.sqrt(w / fam.variance(f, mu))
    if type == "response":
        return y - mu
    raise ValueError(f"unknown residual type '{type}'; expected one of {RESIDUAL_TYPES}")


def residuals(model: FittedGam, type: str = "deviance") -> np.ndarray:
    """Model residuals of the given type (deviance by default)."""
    return _residuals(model.family, model.y, model.fitted, model.weights, type)


def qq_normal(resid, level: float = 0.95, scale: float = 1.0) -> pd.DataFrame:
    """Normal QQ table for a residual vector.

    Theoretical quantiles are ``scale * Phi^-1((i - 0.5) / n)``. Bands use
    the exact distribution of normal order statistics: the ``i``-th of
    ``n`` uniforms is Beta(i, n - i + 1).
    """
    r = np.sort(np.asarray(resid, dtype=float))
    n = r.size
    if n == 0:
        raise ValueError("no residuals")
    i = np.arange(1, n + 1)
    theo = scale * stats.norm.ppf((i - 0.5) / n)
    a = (1 - level) / 2
    lo = scale * stats.norm.ppf(stats.beta.ppf(a, i, n - i + 1))
    hi = scale * stats.norm.ppf(stats.beta.ppf(1 - a, i, n - i + 1))
    out = pd.DataFrame({"theoretical": theo, "sample": r, "band_lower": lo, "band_upper": hi})
    out.attrs.update(method="normal", level=level, n_sim=0)
    return out


def simulated_residuals(model: FittedGam, n_sim: int, seed, type: str = "deviance",
                        workers: int = 1) -> np.ndarray:
    """Sorted residuals of ``n_sim`` simulated responses against the fitted mean.

    No refitting: every replicate uses the same ``mu_hat``. Replicate ``j``
    draws from its own seeded stream. Returns shape (n_sim, n).
    """
    f, mu, w = model.family, model.fitted, model.weights
    phi = 1.0 if f.fixed_scale else model.phi

    def one(j):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_QQ_STREAM, j)))
        ys = fam.simulate_response(f, mu, phi, rng)
        return np.sort(_residuals(f, ys, mu, w, type))

    if workers <= 1:
        sims = [one(j) for j in range(n_sim)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sims = list(pool.map(one, range(n_sim)))
    return np.vstack(sims)


def qq_data(model: FittedGam, method: str = "simulate", n_sim: int = 50, level: float = 0.95,
            seed=None, type: str = "deviance", workers: int = 1) -> pd.DataFrame:
    """QQ table with reference bands.

    ``method="simulate"``: theoretical quantiles are the mean order
    statistics of simulated residuals and the bands their pointwise
    ``(1 -/+ level) / 2`` quantiles. ``method="normal"``: normal quantiles
    scaled by ``sqrt(phi)``.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    r = residuals(model, type)
    if method == "normal":
        return qq_normal(r, level, np.sqrt(model.phi))
    if method != "simulate":
        raise ValueError(f"unknown method '{method}'; expected simulate or normal")
    if n_sim < 2:
        raise ValueError("simulation needs n_sim >= 2")
    if seed is None:
        seed = np.random.SeedSequence().entropy
    sims = simulated_residuals(model, n_sim, seed, type, workers)
    a = (1 - level) / 2
    lo, hi = np.quantile(sims, [a, 1 - a], axis=0, method="linear")
    out = pd.DataFrame({
        "theoretical": sims.mean(axis=0),
        "sample": np.sort(r),
        "band_lower": lo,
        "band_upper": hi,
    })
    out.attrs.update(method="simulate", level=level, n_sim=n_sim, seed=seed)
    return out


def band_coverage(qq: pd.DataFrame) -> float:
    """Fraction of sample quantiles inside their reference band."""
    inside = (qq["sample"] >= qq["band_lower"]) & (qq["sample"] <= qq["band_upper"])
    return float(inside.mean())


def residual_histogram(resid, bins: int = 30) -> pd.DataFrame:
    """Equal-width bins over the residual range; bins are right-open except the last."""
    if bins < 1:
        raise ValueError("bins must be positive")
    counts, edges = np.histogram(np.asarray(resid, dtype=float), bins=bins)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts})


def appraise_data(model: FittedGam, method: str = "simulate", n_sim: int = 50, bins: int = 30,
                  seed=None, type: str = "deviance", level: float = 0.95,
                  workers: int = 1) -> dict[str, pd.DataFrame]:
    """The four appraisal tables: ``qq``, ``resid_vs_eta``, ``histogram``, ``obs_vs_fit``."""
    r = residuals(model, type)
    return {
        "qq": qq_data(model, method, n_sim, level, seed, type, workers),
        "resid_vs_eta": pd.DataFrame({".eta": model.linear_predictor, ".residual": r}),
        "histogram": residual_histogram(r, bins),
        "obs_vs_fit": pd.DataFrame({".fitted": model.fitted, ".observed": model.y}),
    }
