"""Posterior simulation for fitted GAMs and quantile summaries of draws.

Draws are generated in fixed-size chunks. Chunk ``c`` of stream ``s`` takes
its generator from ``SeedSequence(seed, spawn_key=(s, c))``, so the output
depends on the seed only, never on how many workers process the chunks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg

from . import family as fam
from .engine import FittedGam, criterion_score, pirls_fit

CHUNK = 1000
METHODS = ("gaussian", "mh")

# stream ids
_COEF, _RESPONSE, _LAMBDA = 0, 1, 2


class SamplingError(RuntimeError):
    """Posterior simulation could not proceed."""


@dataclass(frozen=True)
class MHOptions:
    """Random-walk Metropolis settings.

    The proposal is ``N(0, tau^2 vb)``; ``tau`` is tuned in blocks of
    ``adapt_every`` iterations during burn-in toward ``target`` acceptance.
    """

    burnin: int = 1000
    thin: int = 1
    target: float = 0.25
    adapt_every: int = 50
    min_accept: float = 0.05
    tau0: float | None = None

    def __post_init__(self):
        if self.burnin < 0 or self.thin < 1 or self.adapt_every < 1:
            raise ValueError("burnin >= 0, thin >= 1 and adapt_every >= 1 are required")
        if not 0 < self.target < 1:
            raise ValueError("target acceptance must lie in (0, 1)")


def _rng(seed, stream: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, chunk)))


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]


def _run_chunks(fn, n: int, workers: int) -> list:
    spans = list(enumerate(_chunks(n)))
    if workers <= 1 or len(spans) <= 1:
        return [fn(c, a, b) for c, (a, b) in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: fn(t[0], *t[1]), spans))


def _check_n(n: int) -> int:
    if int(n) != n or n < 1:
        raise ValueError("number of draws must be a positive integer")
    return int(n)


def _seed(seed):
    if seed is None:
        return np.random.SeedSequence().entropy
    return int(seed)


def cov_factor(V) -> np.ndarray:
    """Return ``L`` with ``L L' = V``.

    Cholesky first, then a small diagonal jitter, then a symmetric
    eigen-factor (which handles an all-zero ``V``). Fails when ``V`` has a
    clearly negative eigenvalue.
    """
    V = (np.asarray(V, dtype=float) + np.asarray(V, dtype=float).T) / 2.0
    if not np.any(V):
        return np.zeros_like(V)
    try:
        return linalg.cholesky(V, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    jitter = 1e-10 * max(float(np.trace(V)), 1e-300)
    try:
        return linalg.cholesky(V + jitter * np.eye(V.shape[0]), lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    ev, U = np.linalg.eigh(V)
    top = max(float(np.max(np.abs(ev))), 0.0)
    if ev.min() < -1e-8 * max(top, 1e-300):
        raise SamplingError("posterior covariance is not positive semi-definite")
    return U * np.sqrt(np.clip(ev, 0.0, None))


# smoothing-parameter uncertainty ----------------------------------------------------

def _working_system(model: FittedGam):
    """Working weights and response at the fitted coefficients."""
    f = model.family
    eta = model.linear_predictor
    d = fam.dmu_deta(f, eta)
    z = eta + (model.y - model.fitted) / d
    return model.working_weights, z


def lambda_hessian(model: FittedGam, step: float = 0.25) -> np.ndarray:
    """Central-difference Hessian in ``log(lambda)`` of the Laplace criterion.

    The criterion is evaluated at fixed ``model.phi``; ``step`` is in
    natural-log units.
    """
    J = model.lam.size
    rho0 = np.log(model.lam)
    cache: dict[tuple, float] = {}

    def score(rho):
        key = tuple(np.round(rho, 12))
        if key not in cache:
            st = pirls_fit(model.X, model.penalties, np.exp(rho), model.family, model.y,
                           model.control, model.weights)
            cache[key] = criterion_score("laml", st, phi=model.phi)
        return cache[key]

    H = np.zeros((J, J))
    e = np.eye(J) * step
    f0 = score(rho0)
    for i in range(J):
        H[i, i] = (score(rho0 + e[i]) - 2 * f0 + score(rho0 - e[i])) / step ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (score(rho0 + e[i] + e[j]) - score(rho0 + e[i] - e[j])
                                 - score(rho0 - e[i] + e[j]) + score(rho0 - e[i] - e[j])) / (4 * step ** 2)
    return H


def lambda_covariance(model: FittedGam, floor: float = 0.1) -> np.ndarray:
    """Covariance of ``log(lambda)``: inverse Hessian with eigenvalues floored."""
    H = lambda_hessian(model)
    ev, U = np.linalg.eigh((H + H.T) / 2.0)
    ev = np.maximum(ev, floor)
    return (U / ev) @ U.T


# coefficient draws ---------------------------------------------------------------

def coef_draws(model: FittedGam, n: int, method: str = "gaussian", unconditional: bool = False,
               seed=None, mh_opts: MHOptions | None = None, workers: int = 1) -> np.ndarray:
    """Draw ``n`` coefficient vectors from the approximate posterior.

    Parameters
    ----------
    method : {"gaussian", "mh"}
        Gaussian approximation ``N(beta_hat, vb)`` or random-walk Metropolis
        on the penalized likelihood.
    unconditional : bool
        Gaussian only. Each draw first perturbs ``log(lambda)`` around its
        estimate and rebuilds the posterior at the perturbed value.

    Returns
    -------
    ndarray of shape (n, p)
    """
    n = _check_n(n)
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}'; expected one of {METHODS}")
    seed = _seed(seed)
    if method == "mh":
        if unconditional:
            raise ValueError("unconditional sampling is only available with method='gaussian'")
        return mh_draws(model, n, seed, mh_opts or MHOptions())[0]

    beta = model.beta
    p = beta.size
    if not unconditional or model.lam.size == 0:
        L = cov_factor(model.vb)

        def chunk(c, a, b):
            z = _rng(seed, _COEF, c).standard_normal((b - a, p))
            return beta + z @ L.T

        return np.vstack(_run_chunks(chunk, n, workers))

    R = cov_factor(lambda_covariance(model))
    rho_hat = np.log(model.lam)
    lo = model.control.lambda_lower * np.log(10.0)
    hi = model.control.lambda_upper * np.log(10.0)
    w, z_work = _working_system(model)
    XtW = model.X.T * w
    XtWX = XtW @ model.X
    XtWz = XtW @ z_work

    def chunk(c, a, b):
        rng = _rng(seed, _COEF, c)
        m = b - a
        rho = np.clip(rho_hat + _rng(seed, _LAMBDA, c).standard_normal((m, rho_hat.size)) @ R.T,
                      lo, hi)
        z = rng.standard_normal((m, p))
        out = np.empty((m, p))
        for i in range(m):
            A = XtWX.copy()
            for pen, lj in zip(model.penalties, np.exp(rho[i])):
                A[pen.start:pen.stop, pen.start:pen.stop] += lj * pen.S
            try:
                cf = linalg.cho_factor(A, check_finite=False)
            except linalg.LinAlgError as exc:
                raise SamplingError(f"penalized system singular at perturbed lambda: {exc}") from exc
            mean = linalg.cho_solve(cf, XtWz, check_finite=False)
            # upper factor: A = C'C, so C^-1 z has covariance A^-1
            dev = linalg.solve_triangular(np.triu(cf[0]), z[i], check_finite=False)
            out[i] = mean + np.sqrt(model.phi) * dev
        return out

    return np.vstack(_run_chunks(chunk, n, workers))


def _log_target(model: FittedGam, Sl):
    f = model.family
    X, y, w, phi = model.X, model.y, model.weights, model.phi

    def logp(beta):
        eta = np.clip(X @ beta, -700.0, 700.0)
        mu = fam.inv_link(f, eta)
        if f.name == "binomial":
            mu = np.clip(mu, 1e-12, 1 - 1e-12)
        elif f.link == "log":
            mu = np.maximum(mu, 1e-300)
        dev = fam.deviance(f, y, mu, w, check=False)
        return -0.5 * (dev + float(beta @ Sl @ beta)) / phi

    return logp


def mh_draws(model: FittedGam, n: int, seed, opts: MHOptions) -> tuple[np.ndarray, float, float]:
    """Random-walk Metropolis chain started at ``beta_hat``.

    Returns ``(draws, acceptance_rate, tau)``; the rate is measured after
    burn-in.
    """
    rng = _rng(seed, _COEF, 0)
    p = model.beta.size
    Sl = np.zeros((p, p))
    for pen, lj in zip(model.penalties, model.lam):
        Sl[pen.start:pen.stop, pen.start:pen.stop] += lj * pen.S
    logp = _log_target(model, Sl)
    L = cov_factor(model.vb)
    tau = opts.tau0 if opts.tau0 is not None else 2.38 / np.sqrt(p)

    beta = model.beta.copy()
    lp = logp(beta)
    accepted = 0
    for it in range(opts.burnin):
        prop = beta + tau * (L @ rng.standard_normal(p))
        lq = logp(prop)
        if np.log(rng.random()) < lq - lp:
            beta, lp = prop, lq
            accepted += 1
        if (it + 1) % opts.adapt_every == 0:
            rate = accepted / opts.adapt_every
            tau *= np.exp(rate - opts.target)
            accepted = 0

    total = n * opts.thin
    out = np.empty((n, p))
    accepted = 0
    for it in range(total):
        prop = beta + tau * (L @ rng.standard_normal(p))
        lq = logp(prop)
        if np.log(rng.random()) < lq - lp:
            beta, lp = prop, lq
            accepted += 1
        if (it + 1) % opts.thin == 0:
            out[(it + 1) // opts.thin - 1] = beta
    rate = accepted / total
    if rate < opts.min_accept:
        raise SamplingError(
            f"Metropolis acceptance rate {rate:.3f} is below {opts.min_accept}; "
            "consider re-parameterizing the model or using method='gaussian'"
        )
    return out, rate, float(tau)


# draws on prediction rows --------------------------------------------------------------

def _draw_table(values: np.ndarray, column: str, meta: dict) -> pd.DataFrame:
    """Long table from an (n_draws, n_rows) array, ordered by row then draw."""
    n_draws, n_rows = values.shape
    out = pd.DataFrame({
        ".row": np.repeat(np.arange(1, n_rows + 1), n_draws),
        ".draw": np.tile(np.arange(1, n_draws + 1), n_rows),
        ".parameter": "location",
        column: values.T.reshape(-1),
    })
    out.attrs.update(meta)
    return out


def _prediction_data(model: FittedGam, data):
    if data is None:
        return model.data
    if not isinstance(data, pd.DataFrame):
        data = pd.DataFrame(data)
    return data


def fitted_samples(model: FittedGam, data=None, terms=None, n: int = 1, method: str = "gaussian",
                   unconditional: bool = False, seed=None, workers: int = 1,
                   scale: str = "response", mh_opts: MHOptions | None = None) -> pd.DataFrame:
    """Expected values under coefficient uncertainty.

    Columns outside ``terms`` are zeroed before mapping each coefficient
    draw through the design; ``scale="link"`` returns the linear predictor.
    """
    if scale not in ("response", "link"):
        raise ValueError("scale must be 'response' or 'link'")
    mask = model.term_mask(terms)
    n = _check_n(n)
    seed = _seed(seed)
    Xp = model.predict_matrix(_prediction_data(model, data)) * mask
    B = coef_draws(model, n, method, unconditional, seed, mh_opts, workers)
    eta = B @ Xp.T
    values = eta if scale == "link" else fam.inv_link(model.family, eta)
    return _draw_table(values, ".fitted", {"seed": seed, "method": method, "n_draws": n})


def _simulate(model: FittedGam, mu: np.ndarray, seed, workers: int) -> np.ndarray:
    """One response vector per row of ``mu`` (shape (n_draws, n_rows))."""
    f, phi = model.family, model.phi
    if f.fixed_scale:
        phi = 1.0

    def chunk(c, a, b):
        return fam.simulate_response(f, mu[a:b], phi, _rng(seed, _RESPONSE, c))

    return np.vstack(_run_chunks(chunk, mu.shape[0], workers))


def predicted_samples(model: FittedGam, data=None, n: int = 1, seed=None,
                      workers: int = 1) -> pd.DataFrame:
    """Responses drawn at the point estimate of the mean."""
    n = _check_n(n)
    seed = _seed(seed)
    Xp = model.predict_matrix(_prediction_data(model, data))
    mu = fam.inv_link(model.family, Xp @ model.beta)
    values = _simulate(model, np.broadcast_to(mu, (n, mu.size)), seed, workers)
    return _draw_table(values, ".response", {"seed": seed, "method": "predictive", "n_draws": n})


def posterior_samples(model: FittedGam, data=None, n: int = 1, method: str = "gaussian",
                      unconditional: bool = False, seed=None, workers: int = 1,
                      mh_opts: MHOptions | None = None) -> pd.DataFrame:
    """Responses drawn at means that themselves carry coefficient uncertainty."""
    n = _check_n(n)
    seed = _seed(seed)
    Xp = model.predict_matrix(_prediction_data(model, data))
    B = coef_draws(model, n, method, unconditional, seed, mh_opts, workers)
    mu = fam.inv_link(model.family, B @ Xp.T)
    values = _simulate(model, mu, seed, workers)
    return _draw_table(values, ".response", {"seed": seed, "method": method, "n_draws": n})


# summaries -----------------------------------------------------------------------

def median_qi(values, width: float = 0.95, name: str | None = None) -> pd.DataFrame:
    """Median with an equal-tailed quantile interval.

    Quantiles interpolate linearly between order statistics. The value
    column takes ``name``, else the Series name, else ``"value"``.
    """
    if name is None:
        name = values.name if isinstance(values, pd.Series) and values.name is not None else "value"
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("median_qi needs at least one value")
    if not 0 < width < 1:
        raise ValueError("width must lie in (0, 1)")
    lo, mid, hi = np.quantile(v, [(1 - width) / 2, 0.5, (1 + width) / 2], method="linear")
    return pd.DataFrame({
        name: [mid], ".lower": [lo], ".upper": [hi], ".width": [width],
        ".point": ["median"], ".interval": ["qi"],
    })


def draw_means(draws: pd.DataFrame, column: str = ".fitted") -> pd.Series:
    """Mean of ``column`` across rows, one value per draw."""
    return draws.groupby(".draw", sort=True)[column].mean()
