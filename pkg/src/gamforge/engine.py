"""Penalized-likelihood fitting: design assembly, PIRLS, smoothness selection."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg

from . import family as fam
from .basis import (BasisSystem, UnsupportedBasisError, apply_constraint, build_smooth,
                    penalty_rank)
from .formula import ModelFormula, parse_formula

log = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class DataError(ValueError):
    """Input data cannot be used with the formula."""


class FitError(RuntimeError):
    """Model fitting failed."""


@dataclass(frozen=True)
class FitControl:
    """Tuning knobs for the inner and outer fitting loops.

    ``lambda_lower``/``lambda_upper`` bound log10 of each smoothing parameter;
    ``grid_size`` points are scanned per coordinate before ``refine_iters``
    golden-section steps.
    """

    pirls_tol: float = 1e-8
    pirls_max_iter: int = 200
    lambda_lower: float = -6.0
    lambda_upper: float = 6.0
    grid_size: int = 13
    refine_iters: int = 30
    max_cycles: int = 10
    cycle_tol: float = 1e-7
    max_halvings: int = 10
    rescale: bool = True
    seed: int | None = None

    def __post_init__(self):
        if self.pirls_tol <= 0:
            raise ValueError("pirls_tol must be positive")
        if self.pirls_max_iter < 1:
            raise ValueError("pirls_max_iter must be at least 1")
        if self.grid_size < 2 or self.lambda_upper <= self.lambda_lower:
            raise ValueError("invalid lambda grid")


@dataclass(frozen=True, eq=False)
class PenaltyBlock:
    """A smooth's penalty, normalized and placed at ``start:stop``."""

    S: np.ndarray
    start: int
    stop: int
    label: str
    rank: int
    log_det: float
    scale: float = 1.0

    def embed(self, p: int) -> np.ndarray:
        out = np.zeros((p, p))
        out[self.start:self.stop, self.start:self.stop] = self.S
        return out


def make_penalty(S, start: int, label: str = "", scale: float = 1.0) -> PenaltyBlock:
    S = np.asarray(S, dtype=float)
    ev = np.linalg.eigvalsh(S)
    r = penalty_rank(S)
    pos = np.sort(ev)[::-1][:r]
    return PenaltyBlock(S, start, start + S.shape[0], label, r, float(np.sum(np.log(pos))), scale)


def total_penalty(penalties, lam, p: int) -> np.ndarray:
    Sl = np.zeros((p, p))
    for pen, lj in zip(penalties, lam):
        Sl[pen.start:pen.stop, pen.start:pen.stop] += lj * pen.S
    return Sl


@dataclass
class Assembled:
    formula: ModelFormula
    X: np.ndarray
    penalties: list[PenaltyBlock]
    term_map: dict[str, tuple[int, int]]
    smooths: dict[str, BasisSystem]
    coef_names: list[str]

    def predict_matrix(self, data) -> np.ndarray:
        return predict_matrix(self.formula, self.term_map, self.smooths, data)


def _column(data, name: str) -> np.ndarray:
    if name not in data:
        raise DataError(f"missing column '{name}'")
    try:
        x = np.asarray(data[name], dtype=float)
    except (TypeError, ValueError):
        raise DataError(f"column '{name}' is not numeric") from None
    if not np.all(np.isfinite(x)):
        raise DataError(f"column '{name}' contains missing or non-finite values")
    return x


def predict_matrix(formula: ModelFormula, term_map, smooths, data) -> np.ndarray:
    """Model matrix for new covariate values."""
    cols = []
    if formula.intercept:
        n = len(next(iter(data.values()))) if isinstance(data, dict) else len(data)
        cols.append(np.ones((n, 1)))
    for name in formula.parametric:
        cols.append(_column(data, name)[:, None])
    for s in formula.smooths:
        b = smooths[s.label]
        X = np.column_stack([_column(data, v) for v in s.variables])
        cols.append(b.evaluate(X))
    return np.hstack(cols)


def _normalize_penalty(Xb, S) -> float:
    # largest eigenvalue of (Xb'Xb)^+ S: invariant to reparameterizing the block
    G = Xb.T @ Xb
    try:
        ev = linalg.eigh(S, G, eigvals_only=True)
    except linalg.LinAlgError:
        ev = np.linalg.eigvals(np.linalg.pinv(G) @ S).real
    top = float(np.max(ev))
    return top if top > 0 else 1.0


def assemble_design(f: ModelFormula, data, rescale: bool = True) -> Assembled:
    """Intercept, parametric columns, then one centred block per smooth."""
    if isinstance(f, str):
        f = parse_formula(f)
    for name in [f.response] + f.covariates:
        _column(data, name)
    n = len(_column(data, f.response))

    blocks = []
    names: list[str] = []
    term_map: dict[str, tuple[int, int]] = {}
    smooths: dict[str, BasisSystem] = {}
    penalties: list[PenaltyBlock] = []
    col = 0
    if f.intercept:
        blocks.append(np.ones((n, 1)))
        names.append(INTERCEPT)
        term_map[INTERCEPT] = (0, 1)
        col = 1
    for name in f.parametric:
        blocks.append(_column(data, name)[:, None])
        names.append(name)
        term_map[name] = (col, col + 1)
        col += 1
    for s in f.smooths:
        b = build_smooth(s, data, rescale=rescale)
        if f.intercept:
            b = apply_constraint(b)
        K = b.k
        smooths[s.label] = b
        blocks.append(b.design)
        names.extend(f"{s.label}.{i + 1}" for i in range(K))
        term_map[s.label] = (col, col + K)
        scale = _normalize_penalty(b.design, b.penalty)
        penalties.append(make_penalty(b.penalty / scale, col, s.label, scale))
        col += K

    if col == 0:
        raise DataError("model has no coefficients")
    X = np.hstack(blocks)
    if n < col:
        raise DataError(f"fewer rows ({n}) than coefficients ({col})")
    return Assembled(f, X, penalties, term_map, smooths, names)


@dataclass
class PirlsResult:
    beta: np.ndarray
    weights: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    deviance: float
    pen_deviance: float
    converged: bool
    iterations: int
    singular: bool
    XtWX: np.ndarray
    A: np.ndarray
    lam: np.ndarray
    penalties: list[PenaltyBlock]
    family: fam.Family
    y: np.ndarray
    prior_weights: np.ndarray
    history: list[float] = field(default_factory=list)
    _edf: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def edf_per_coef(self) -> np.ndarray:
        if self._edf is None:
            F = _solve(self.A, self.XtWX)
            self._edf = np.diag(F).copy()
        return self._edf

    @property
    def edf_total(self) -> float:
        return float(np.sum(self.edf_per_coef))


def _solve(A, B):
    try:
        c = linalg.cho_factor(A, check_finite=False)
        return linalg.cho_solve(c, B, check_finite=False)
    except linalg.LinAlgError:
        return np.linalg.lstsq(A, B, rcond=None)[0]


def solve_penalized(A, rhs):
    """Solve ``A x = rhs`` by Cholesky, with ridge and least-squares fallbacks.

    Returns ``(x, singular)``.
    """
    try:
        c = linalg.cho_factor(A, check_finite=False)
        return linalg.cho_solve(c, rhs, check_finite=False), False
    except linalg.LinAlgError:
        pass
    jitter = 1e-10 * max(np.trace(A), 1e-300)
    try:
        c = linalg.cho_factor(A + jitter * np.eye(A.shape[0]), check_finite=False)
        return linalg.cho_solve(c, rhs, check_finite=False), True
    except linalg.LinAlgError:
        return np.linalg.lstsq(A, rhs, rcond=None)[0], True


def _working(f: fam.Family, y, eta, prior_w):
    mu = fam.inv_link(f, eta)
    if f.name == "binomial":
        mu = np.clip(mu, 1e-12, 1 - 1e-12)
    elif f.link == "log":
        mu = np.maximum(mu, 1e-300)
    d = np.maximum(np.abs(fam.dmu_deta(f, eta)), 1e-300)
    V = np.maximum(fam.variance(f, mu), 1e-300)
    z = eta + (y - mu) / d
    w = prior_w * d ** 2 / V
    return mu, z, w


def pirls_fit(X, penalties, lam, family, y, control: FitControl | None = None,
              weights=None) -> PirlsResult:
    """Penalized IRLS for fixed smoothing parameters.

    Each step solves ``(X'WX + sum_j lam_j S_j) beta = X'Wz``. A step that
    increases the penalized deviance is halved back toward the previous
    iterate (at most ``control.max_halvings`` times).
    """
    control = control or FitControl()
    f = family if isinstance(family, fam.Family) else fam.Family(family)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != len(penalties):
        raise ValueError("one smoothing parameter per penalty is required")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("smoothing parameters must be finite and non-negative")
    prior_w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    Sl = total_penalty(penalties, lam, p)

    def penalized(beta):
        eta = np.clip(X @ beta, -700.0, 700.0)
        mu = fam.inv_link(f, eta)
        if f.name == "binomial":
            mu = np.clip(mu, 1e-12, 1 - 1e-12)
        dev = fam.deviance(f, y, mu, prior_w, check=False)
        return eta, mu, dev, dev + float(beta @ Sl @ beta)

    if f.canonical_identity:
        XtW = X.T * prior_w
        XtWX = XtW @ X
        A = XtWX + Sl
        beta, singular = solve_penalized(A, XtW @ y)
        eta, mu, dev, pdev = penalized(beta)
        return PirlsResult(beta, prior_w.copy(), y.copy(), eta, mu, dev, pdev, True, 1,
                           singular, XtWX, A, lam, list(penalties), f, y, prior_w, [pdev])

    mu = fam.initial_mu(f, y)
    eta = fam.link_eval(f, mu)
    beta = None
    pdev_old = np.inf
    history = []
    converged = False
    singular = False
    it = 0
    for it in range(1, control.pirls_max_iter + 1):
        mu, z, w = _working(f, y, eta, prior_w)
        XtW = X.T * w
        XtWX = XtW @ X
        A = XtWX + Sl
        beta_new, sing = solve_penalized(A, XtW @ z)
        singular = singular or sing
        eta_new, mu_new, dev, pdev = penalized(beta_new)
        if beta is not None:
            halvings = 0
            while (not np.isfinite(pdev) or pdev > pdev_old * (1 + 1e-12)) \
                    and halvings < control.max_halvings:
                beta_new = (beta + beta_new) / 2.0
                eta_new, mu_new, dev, pdev = penalized(beta_new)
                halvings += 1
        history.append(pdev)
        beta, eta = beta_new, eta_new
        if np.isfinite(pdev_old) and abs(pdev - pdev_old) < control.pirls_tol * (abs(pdev) + 0.1):
            converged = True
            pdev_old = pdev
            break
        pdev_old = pdev
    if not converged:
        warnings.warn(f"PIRLS did not converge in {control.pirls_max_iter} iterations",
                      RuntimeWarning, stacklevel=2)
    # weights and system at the final iterate
    mu, z, w = _working(f, y, eta, prior_w)
    XtWX = (X.T * w) @ X
    A = XtWX + Sl
    eta, mu, dev, pdev = penalized(beta)
    return PirlsResult(beta, w, z, eta, mu, dev, pdev, converged, it, singular,
                       XtWX, A, lam, list(penalties), f, y, prior_w, history)


def _logdet(A) -> float:
    try:
        c = linalg.cholesky(A, lower=True, check_finite=False)
        return 2.0 * float(np.sum(np.log(np.diag(c))))
    except linalg.LinAlgError:
        sign, ld = np.linalg.slogdet(A)
        return float(ld) if sign > 0 else np.inf


def _log_pdet_penalty(state: PirlsResult) -> tuple[float, int]:
    total, rank = 0.0, 0
    for pen, lj in zip(state.penalties, state.lam):
        if pen.rank == 0:
            continue
        if lj <= 0:
            return -np.inf, 0
        total += pen.rank * np.log(lj) + pen.log_det
        rank += pen.rank
    return total, rank


def criterion_score(method: str, state: PirlsResult, phi: float | None = None) -> float:
    """Smoothness-selection criterion at a converged PIRLS state (lower is better).

    ``gcv``: ``n D / (n - edf)^2``. ``reml``: gaussian restricted negative
    log-likelihood with the scale profiled out. ``laml``: the Laplace
    approximate negative log marginal likelihood at fixed scale ``phi``
    (any family; up to a constant).
    """
    n = state.n
    if method == "gcv":
        edf = state.edf_total
        if edf >= n:
            return np.inf
        return n * state.deviance / (n - edf) ** 2
    p = state.A.shape[0]
    log_s, rank = _log_pdet_penalty(state)
    log_a = _logdet(state.A)
    if method == "reml":
        if state.family.name != "gaussian":
            raise ValueError("REML is implemented for the gaussian family only")
        mp = p - rank
        dof = n - mp
        if dof <= 0:
            return np.inf
        rss = state.pen_deviance
        phi_hat = rss / dof
        if phi_hat <= 0:
            return -np.inf
        const = -float(np.sum(np.log(state.prior_weights)))
        return 0.5 * (dof * np.log(2 * np.pi * phi_hat) + dof + log_a - log_s + const)
    if method == "laml":
        phi = 1.0 if phi is None else phi
        return 0.5 * (state.pen_deviance / phi + log_a - log_s - rank * np.log(phi))
    raise ValueError(f"unknown criterion '{method}'")


def resolve_method(method: str, family: fam.Family) -> str:
    method = method.lower()
    if method not in ("gcv", "reml"):
        raise ValueError(f"unknown method '{method}'; expected gcv or reml")
    if method == "reml" and family.name != "gaussian":
        warnings.warn("REML is only implemented for the gaussian family; using GCV",
                      UserWarning, stacklevel=3)
        return "gcv"
    return method


def _golden_section(fn, a, b, iters):
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    best = min((fc, c), (fd, d))
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
            best = min(best, (fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
            best = min(best, (fd, d))
    return best


def _search(method, assembled: Assembled, family, y, control: FitControl, weights=None):
    penalties = assembled.penalties
    J = len(penalties)
    cache: dict[tuple, float] = {}

    def score(rho):
        key = tuple(float(r) for r in rho)
        if key not in cache:
            lam = 10.0 ** np.asarray(key)
            try:
                st = pirls_fit(assembled.X, penalties, lam, family, y, control, weights)
            except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
                raise FitError(f"PIRLS failed at lambda={lam.tolist()}: {exc}") from exc
            s = criterion_score(method, st)
            cache[key] = s if np.isfinite(s) else np.inf
        return cache[key]

    lo, hi = control.lambda_lower, control.lambda_upper
    grid = np.linspace(lo, hi, control.grid_size)
    step = grid[1] - grid[0]
    rho = np.zeros(J)
    current = score(rho)
    for cycle in range(control.max_cycles):
        start = current
        for j in range(J):
            def along(t, j=j):
                r = rho.copy()
                r[j] = t
                return score(r)

            values = np.array([along(t) for t in grid])
            g = int(np.argmin(values))  # first minimum: smallest lambda on ties
            best = (values[g], grid[g])
            if control.refine_iters > 0:
                a, b = max(lo, grid[g] - step), min(hi, grid[g] + step)
                best = min(best, _golden_section(along, a, b, control.refine_iters))
            if best[0] <= current:
                rho[j] = best[1]
                current = best[0]
        log.debug("cycle %d: score %.10g rho %s", cycle, current, rho)
        if J == 1 or start - current <= control.cycle_tol * abs(start):
            break
    return 10.0 ** rho, current


def optimize_lambda(method: str, assembled: Assembled, family, y, control: FitControl | None = None,
                    weights=None) -> np.ndarray:
    """Coordinate-wise log-grid scan plus golden-section refinement of each lambda."""
    control = control or FitControl()
    f = family if isinstance(family, fam.Family) else fam.Family(family)
    if not assembled.penalties:
        return np.zeros(0)
    method = resolve_method(method, f)
    return _search(method, assembled, f, y, control, weights)[0]


@dataclass(frozen=True, eq=False)
class FittedGam:
    formula: ModelFormula
    family: fam.Family
    method: str
    beta: np.ndarray
    vb: np.ndarray
    lam: np.ndarray
    phi: float
    edf_per_coef: np.ndarray
    term_map: dict
    smooths: dict
    penalties: list
    coef_names: list
    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    data: pd.DataFrame
    fitted: np.ndarray
    linear_predictor: np.ndarray
    working_weights: np.ndarray
    deviance: float
    null_deviance: float
    converged: bool
    score: float
    control: FitControl = field(default_factory=FitControl)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def term_labels(self) -> list[str]:
        return list(self.term_map)

    @property
    def smooth_labels(self) -> list[str]:
        return [s.label for s in self.formula.smooths]

    def predict_matrix(self, data) -> np.ndarray:
        return predict_matrix(self.formula, self.term_map, self.smooths, data)

    def term_mask(self, terms=None) -> np.ndarray:
        """Boolean column mask selecting ``terms`` (all when None)."""
        mask = np.zeros(self.beta.size, dtype=bool)
        if terms is None:
            mask[:] = True
            return mask
        if isinstance(terms, str):
            terms = [terms]
        for t in terms:
            key = t.replace(" ", "")
            if key not in self.term_map:
                raise KeyError(f"unknown term '{t}'; valid terms: {', '.join(self.term_map)}")
            a, b = self.term_map[key]
            mask[a:b] = True
        return mask


def _null_deviance(f: fam.Family, y, w, intercept: bool) -> float:
    if intercept:
        mu = np.full_like(y, np.sum(w * y) / np.sum(w))
        if f.name == "binomial":
            mu = np.clip(mu, 1e-12, 1 - 1e-12)
    else:
        mu = fam.inv_link(f, np.zeros_like(y))
    return fam.deviance(f, y, mu, w, check=False)


def fit(formula, data, family="gaussian", method: str = "gcv", control: FitControl | None = None,
        weights=None) -> FittedGam:
    """Fit a GAM: assemble, select smoothing parameters, final PIRLS.

    ``phi`` is the Pearson estimate for gaussian/gamma (fixed at 1 for
    poisson/binomial) and ``vb = (X'WX + S_lambda)^-1 phi``.
    """
    control = control or FitControl()
    f = parse_formula(formula) if isinstance(formula, str) else formula
    famly = family if isinstance(family, fam.Family) else fam.Family(family)
    for s in f.smooths:
        if not s.supported:
            raise UnsupportedBasisError(f"unsupported basis: {s.basis_code}")
    if not isinstance(data, pd.DataFrame):
        data = pd.DataFrame(data)
    method_used = resolve_method(method, famly)
    assembled = assemble_design(f, data, rescale=control.rescale)
    y = _column(data, f.response)
    try:
        y = fam.validate_response(famly, y)
    except fam.DomainError as exc:
        raise DataError(str(exc)) from None
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)

    if assembled.penalties:
        lam, score = _search(method_used, assembled, famly, y, control, w)
    else:
        lam, score = np.zeros(0), np.nan
    st = pirls_fit(assembled.X, assembled.penalties, lam, famly, y, control, w)
    if not np.all(np.isfinite(st.beta)):
        raise FitError("non-finite coefficients")
    if not assembled.penalties:
        score = criterion_score("gcv", st)
    edf = st.edf_per_coef
    n = y.size
    if famly.fixed_scale:
        phi = 1.0
    else:
        pearson = float(np.sum(w * (y - st.mu) ** 2 / fam.variance(famly, st.mu)))
        phi = pearson / max(n - float(np.sum(edf)), 1e-8)
    Ainv = _solve(st.A, np.eye(st.A.shape[0]))
    vb = (Ainv + Ainv.T) / 2.0 * phi
    cols = list(dict.fromkeys([f.response] + f.covariates))
    return FittedGam(
        formula=f,
        family=famly,
        method=method_used,
        beta=st.beta,
        vb=vb,
        lam=np.asarray(lam, dtype=float),
        phi=float(phi),
        edf_per_coef=edf,
        term_map=dict(assembled.term_map),
        smooths=dict(assembled.smooths),
        penalties=list(assembled.penalties),
        coef_names=list(assembled.coef_names),
        X=assembled.X,
        y=y,
        weights=w,
        data=data[cols].reset_index(drop=True).astype(float),
        fitted=st.mu,
        linear_predictor=st.eta,
        working_weights=st.weights,
        deviance=st.deviance,
        null_deviance=_null_deviance(famly, y, w, f.intercept),
        converged=st.converged,
        score=float(score),
        control=control,
    )


# model summaries -----------------------------------------------------------------

def edf(model: FittedGam) -> pd.DataFrame:
    """Effective degrees of freedom per smooth."""
    rows = []
    for label in model.smooth_labels:
        a, b = model.term_map[label]
        rows.append((label, float(np.sum(model.edf_per_coef[a:b]))))
    return pd.DataFrame(rows, columns=[".smooth", ".edf"])


def model_edf(model: FittedGam) -> float:
    return float(np.sum(model.edf_per_coef))


def model_constant(model: FittedGam) -> float:
    if INTERCEPT not in model.term_map:
        raise KeyError("model has no intercept")
    return float(model.beta[model.term_map[INTERCEPT][0]])


def overview(model: FittedGam) -> pd.DataFrame:
    rows = []
    for label, (a, b) in model.term_map.items():
        if label in model.smooths:
            kind = model.smooths[label].basis_code
        else:
            kind = "parametric"
        rows.append((label, kind, b - a, float(np.sum(model.edf_per_coef[a:b]))))
    return pd.DataFrame(rows, columns=["term", "type", "k", "edf"])


def inv_link_of(model: FittedGam):
    f = model.family
    return lambda eta: fam.inv_link(f, eta)
