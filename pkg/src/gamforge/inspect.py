"""Tidy exploration of fitted models: smooth estimates, slices, fitted values."""
from __future__ import annotations

import itertools

import numpy as np
import pandas as pd
from scipy import stats
from scipy.spatial import Delaunay, QhullError

from . import family as fam
from .engine import (INTERCEPT, FittedGam, edf, inv_link_of, model_constant, model_edf,
                     overview)

__all__ = [
    "INTERCEPT", "evenly", "typical_values", "data_slice", "smooth_estimates", "add_confint",
    "fitted_values", "inv_link_of", "edf", "model_edf", "model_constant", "overview",
]


def evenly(x=None, n: int | None = None, by: float | None = None, lower: float | None = None,
           upper: float | None = None) -> np.ndarray:
    """Evenly spaced grid over ``[lower, upper]`` (bounds default to the range of ``x``).

    Exactly one of ``n`` and ``by`` is used; ``n`` defaults to 100 when
    neither is given. With ``by`` the grid stops at the last point not
    beyond ``upper``.
    """
    if x is not None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size == 0:
            raise ValueError("evenly needs a non-empty vector")
        lower = float(np.min(x)) if lower is None else lower
        upper = float(np.max(x)) if upper is None else upper
    if lower is None or upper is None:
        raise ValueError("give a vector or both lower and upper")
    if not lower < upper:
        raise ValueError("lower must be less than upper")
    if n is not None and by is not None:
        raise ValueError("give only one of n and by")
    if by is not None:
        if by <= 0:
            raise ValueError("by must be positive")
        # tolerate rounding in (upper - lower) / by
        count = int(np.floor((upper - lower) / by + 1e-9)) + 1
        return lower + by * np.arange(count)
    n = 100 if n is None else n
    if int(n) != n or n < 2:
        raise ValueError("n must be an integer >= 2")
    return np.linspace(lower, upper, int(n))


def typical_values(model: FittedGam) -> dict[str, float]:
    """Median of each covariate in the training data."""
    return {v: float(np.median(model.data[v])) for v in model.formula.covariates}


def data_slice(model: FittedGam, grids=None, **kwargs) -> pd.DataFrame:
    """Full crossing of the given grids, other covariates at typical values.

    Crossing is lexicographic in declaration order: the first grid varies
    slowest.
    """
    grids = dict(grids or {}, **kwargs)
    covs = model.formula.covariates
    for name in grids:
        if name not in covs:
            raise KeyError(f"'{name}' is not a model covariate; covariates: {', '.join(covs)}")
    arrays = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in grids.items()}
    rows = list(itertools.product(*arrays.values())) if arrays else [()]
    out = pd.DataFrame(rows, columns=list(arrays)) if arrays else pd.DataFrame(index=[0])
    typical = typical_values(model)
    for v in covs:
        if v not in out:
            out[v] = typical[v]
    return out[covs] if covs else out


def _hull_flags(train: np.ndarray, points: np.ndarray) -> np.ndarray:
    if train.shape[1] == 1:
        return (points[:, 0] < train[:, 0].min()) | (points[:, 0] > train[:, 0].max())
    try:
        tri = Delaunay(np.unique(train, axis=0))
    except QhullError:
        return np.ones(points.shape[0], dtype=bool)
    return tri.find_simplex(points) < 0


def _smooth_grid(model: FittedGam, variables, n: int) -> pd.DataFrame:
    axes = [np.linspace(model.data[v].min(), model.data[v].max(), n) for v in variables]
    return pd.DataFrame(list(itertools.product(*axes)), columns=list(variables))


def smooth_estimates(model: FittedGam, select=None, n: int = 100, data=None) -> pd.DataFrame:
    """Centred smooth functions with standard errors.

    Each smooth is evaluated on an ``n``-point grid over its covariate range
    (``n x n`` crossing for two covariates) or at the rows of ``data``.
    ``.se`` comes from the smooth's block of the posterior covariance.
    """
    labels = model.smooth_labels
    if select is None:
        select = labels
    elif isinstance(select, str):
        select = [select]
    select = [s.replace(" ", "") for s in select]
    for s in select:
        if s not in labels:
            raise KeyError(f"unknown smooth '{s}'; available: {', '.join(labels) or 'none'}")
    if data is not None and not isinstance(data, pd.DataFrame):
        data = pd.DataFrame(data)

    parts = []
    for label in select:
        b = model.smooths[label]
        a, z = model.term_map[label]
        grid = _smooth_grid(model, b.variables, n) if data is None \
            else data[list(b.variables)].astype(float).reset_index(drop=True)
        pts = grid.to_numpy()
        Xb = b.evaluate(pts)
        V = model.vb[a:z, a:z]
        part = grid.copy()
        part.insert(0, ".smooth", label)
        part.insert(1, ".type", b.basis_code)
        part[".estimate"] = Xb @ model.beta[a:z]
        part[".se"] = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Xb, V, Xb), 0.0))
        part[".extrapolated"] = _hull_flags(model.data[list(b.variables)].to_numpy(), pts)
        parts.append(part)
    out = pd.concat(parts, ignore_index=True)
    covs = [c for c in out.columns if not c.startswith(".")]
    return out[[".smooth", ".type"] + covs + [".estimate", ".se", ".extrapolated"]]


def add_confint(t: pd.DataFrame, coverage: float = 0.95) -> pd.DataFrame:
    """Pointwise interval ``.estimate -/+ z * .se``; existing bounds are replaced."""
    missing = [c for c in (".estimate", ".se") if c not in t]
    if missing:
        raise KeyError(f"add_confint needs columns {missing}")
    if not 0 < coverage < 1:
        raise ValueError("coverage must lie in (0, 1)")
    z = stats.norm.ppf((1 + coverage) / 2)
    out = t.copy()
    out[".lower_ci"] = out[".estimate"] - z * out[".se"]
    out[".upper_ci"] = out[".estimate"] + z * out[".se"]
    return out


def fitted_values(model: FittedGam, data=None, terms=None, scale: str = "response",
                  coverage: float = 0.95) -> pd.DataFrame:
    """Predictions with standard errors and pointwise intervals.

    Columns outside ``terms`` contribute nothing to the linear predictor.
    Intervals are formed on the link scale and mapped through the inverse
    link; ``.se`` on the response scale uses the delta method.
    """
    if scale not in ("response", "link"):
        raise ValueError("scale must be 'response' or 'link'")
    if data is None:
        data = model.data[model.formula.covariates]
    elif not isinstance(data, pd.DataFrame):
        data = pd.DataFrame(data)
    mask = model.term_mask(terms)
    Xp = model.predict_matrix(data) * mask
    eta = Xp @ model.beta
    se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Xp, model.vb, Xp), 0.0))
    z = stats.norm.ppf((1 + coverage) / 2)
    lo, hi = eta - z * se, eta + z * se
    out = data.reset_index(drop=True).copy()
    if scale == "link":
        out[".fitted"], out[".se"], out[".lower"], out[".upper"] = eta, se, lo, hi
    else:
        f = model.family
        out[".fitted"] = fam.inv_link(f, eta)
        out[".se"] = np.abs(fam.dmu_deta(f, eta)) * se
        out[".lower"] = fam.inv_link(f, lo)
        out[".upper"] = fam.inv_link(f, hi)
    out[".parameter"] = "location"
    return out


def term_contribution(model: FittedGam, data, term: str) -> np.ndarray:
    """Link-scale contribution of a single term."""
    mask = model.term_mask([term])
    return (model.predict_matrix(data) * mask) @ model.beta

