"""Spline bases, penalties, identifiability constraints and tidy exports."""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import comb, factorial, gamma, pi

import numpy as np
import pandas as pd

from .formula import SmoothSpec

MAX_TPRS_UNIQUE = 2000


class BasisError(ValueError):
    pass


class UnsupportedBasisError(BasisError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BasisSystem:
    """One smooth's basis evaluated on its fitting data plus its penalty.

    ``evaluate`` re-evaluates the (possibly constrained) basis at new
    covariate values, so a BasisSystem is all that is needed for prediction.
    """

    design: np.ndarray
    penalty: np.ndarray
    knots: np.ndarray
    constraint: np.ndarray
    null_dim: int
    labels: tuple[str, ...]
    basis_code: str
    variables: tuple[str, ...]
    constant: np.ndarray | None = None
    constrained: bool = False
    radial: np.ndarray | None = None
    shift: np.ndarray | None = None
    scale: float = 1.0
    m: int = 2
    eigenvalues: np.ndarray | None = None
    ranges: np.ndarray | None = None
    extrapolated: bool = False

    def __post_init__(self):
        for name in ("design", "penalty", "knots", "constraint", "constant",
                     "radial", "shift", "eigenvalues", "ranges"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value))

    @property
    def k(self) -> int:
        return self.penalty.shape[0]

    def raw_evaluate(self, X) -> np.ndarray:
        """Unconstrained basis at new covariate rows (n x d or length n)."""
        X = _as_matrix(X, len(self.variables))
        if self.basis_code == "cr":
            return _cr_design(X[:, 0], self.knots)[0]
        return _tprs_design(X, self)

    def evaluate(self, X) -> np.ndarray:
        return self.raw_evaluate(X) @ self.constraint


def _as_matrix(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != d:
        raise BasisError(f"expected {d} covariate column(s), got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise BasisError("covariates contain non-finite values")
    return X


def place_knots(x, k: int) -> np.ndarray:
    """``k`` knots at evenly spaced quantiles of the distinct values of ``x``."""
    u = np.unique(np.asarray(x, dtype=float))
    if k < 2:
        raise BasisError("need at least 2 knots")
    if u.size < k:
        raise BasisError(f"too few distinct values: {u.size} distinct, {k} knots requested")
    knots = np.quantile(u, np.linspace(0.0, 1.0, k))
    knots[0], knots[-1] = u[0], u[-1]
    return knots


# cubic regression spline ------------------------------------------------------

def _cr_matrices(knots):
    h = np.diff(knots)
    K = knots.size
    D = np.zeros((K - 2, K))
    B = np.zeros((K - 2, K - 2))
    for i in range(K - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i < K - 3:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
    return h, D, B


def _cr_second_derivs(knots):
    # F maps knot values to second derivatives at the knots (zero at the ends).
    h, D, B = _cr_matrices(knots)
    F = np.zeros((knots.size, knots.size))
    F[1:-1] = np.linalg.solve(B, D)
    return h, F


def _cr_design(x, knots):
    knots = np.asarray(knots, dtype=float)
    h, F = _cr_second_derivs(knots)
    K = knots.size
    n = x.size
    X = np.zeros((n, K))
    eye = np.eye(K)
    j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, K - 2)
    inside = (x >= knots[0]) & (x <= knots[-1])
    idx = np.flatnonzero(inside)
    jj = j[idx]
    hj = h[jj]
    dr = knots[jj + 1] - x[idx]
    dl = x[idx] - knots[jj]
    cm = (dr ** 3 / hj - hj * dr) / 6.0
    cp = (dl ** 3 / hj - hj * dl) / 6.0
    X[idx] = cm[:, None] * F[jj] + cp[:, None] * F[jj + 1]
    X[idx, jj] += dr / hj
    X[idx, jj + 1] += dl / hj
    # linear continuation beyond the boundary knots
    left = x < knots[0]
    if left.any():
        slope = (eye[1] - eye[0]) / h[0] - h[0] * F[1] / 6.0
        X[left] = eye[0] + np.outer(x[left] - knots[0], slope)
    right = x > knots[-1]
    if right.any():
        slope = (eye[-1] - eye[-2]) / h[-1] + h[-1] * F[-2] / 6.0
        X[right] = eye[-1] + np.outer(x[right] - knots[-1], slope)
    return X, bool(left.any() or right.any())


def cr_penalty(knots) -> np.ndarray:
    """Exact Gram matrix of basis second derivatives for a natural cubic spline."""
    _, D, B = _cr_matrices(np.asarray(knots, dtype=float))
    S = D.T @ np.linalg.solve(B, D)
    return (S + S.T) / 2.0


def cr_basis(x, knots, variable: str = "x") -> BasisSystem:
    """Cardinal natural cubic regression spline basis.

    Basis function ``i`` takes the value 1 at knot ``i`` and 0 at the other
    knots. Values outside the knot range are extrapolated linearly and
    flagged via ``extrapolated``.
    """
    knots = np.asarray(knots, dtype=float)
    if knots.size < 3:
        raise BasisError("cr basis needs at least 3 knots")
    if np.any(np.diff(knots) <= 0):
        raise BasisError("knots must be strictly increasing")
    x = np.asarray(x, dtype=float).ravel()
    design, extrapolated = _cr_design(x, knots)
    K = knots.size
    return BasisSystem(
        design=design,
        penalty=cr_penalty(knots),
        knots=knots,
        constraint=np.eye(K),
        null_dim=2,
        labels=tuple(f"F{i + 1}" for i in range(K)),
        basis_code="cr",
        variables=(variable,),
        constant=np.ones(K),
        ranges=np.array([[x.min(), x.max()]]),
        extrapolated=extrapolated,
    )


# thin plate regression spline ---------------------------------------------------

def tps_eta(r, m: int, d: int) -> np.ndarray:
    """Thin-plate radial function for penalty order ``m`` in ``d`` dimensions."""
    r = np.asarray(r, dtype=float)
    if 2 * m <= d:
        raise BasisError(f"thin plate splines need 2m > d (m={m}, d={d})")
    if d % 2 == 0:
        c = (-1) ** (m + 1 + d // 2) / (
            2 ** (2 * m - 1) * pi ** (d / 2) * factorial(m - 1) * factorial(m - d // 2)
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            out = c * r ** (2 * m - d) * np.log(r)
        return np.where(r > 0, out, 0.0)
    c = gamma(d / 2 - m) / (2 ** (2 * m) * pi ** (d / 2) * factorial(m - 1))
    return c * r ** (2 * m - d)


def _monomials(d: int, m: int) -> list[tuple[int, ...]]:
    # degree 1..m-1 first, the constant last
    out = []
    for deg in range(1, m):
        if d == 1:
            out.append((deg,))
        else:
            out.extend((deg - i, i) for i in range(deg + 1))
    out.append((0,) * d)
    return out


def _poly(U, m):
    d = U.shape[1]
    return np.column_stack([np.prod(U ** np.array(p), axis=1) for p in _monomials(d, m)])


def _distances(A, B):
    return np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))


def _tprs_design(X, b: BasisSystem) -> np.ndarray:
    U = (X - b.shift) / b.scale
    centers = (b.knots - b.shift) / b.scale
    d = X.shape[1]
    E = tps_eta(_distances(U, centers), b.m, d)
    return np.hstack([E @ b.radial, _poly(U, b.m)])


def tprs_basis(X, k: int, m: int = 2, variables=None, rescale: bool = True,
               max_unique: int = MAX_TPRS_UNIQUE) -> BasisSystem:
    """Low-rank thin plate regression spline.

    The radial matrix on the unique covariate rows is eigen-decomposed and the
    ``k`` eigenvectors with largest absolute eigenvalue are kept. Requiring the
    retained radial coefficients to be orthogonal to the polynomial null
    space leaves ``k - M`` penalized functions, rotated so their penalty is
    diagonal (descending), followed by the ``M`` polynomial columns with the
    constant last. ``M = comb(m + d - 1, d)``.

    With ``rescale`` the covariates are shifted to start at 0 and divided by
    the largest range (one common factor, keeping the radial function
    isotropic); the penalty is then converted back to the original units.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if d not in (1, 2):
        raise BasisError("tprs supports 1 or 2 covariates")
    if variables is None:
        variables = ("x",) if d == 1 else ("x1", "x2")
    if not np.all(np.isfinite(X)):
        raise BasisError("covariates contain non-finite values")
    M = comb(m + d - 1, d)
    if k <= M:
        raise BasisError(f"k={k} must exceed the null space dimension {M}")
    centers = np.unique(X, axis=0)
    if centers.shape[0] > max_unique:
        rng = np.random.default_rng(0)
        idx = np.sort(rng.choice(centers.shape[0], max_unique, replace=False))
        centers = centers[idx]
    if centers.shape[0] < k:
        raise BasisError(
            f"only {centers.shape[0]} unique covariate rows; need at least k={k}"
        )

    if rescale:
        shift = centers.min(axis=0)
        scale = float(np.max(centers.max(axis=0) - shift)) or 1.0
    else:
        shift = np.zeros(d)
        scale = 1.0
    U = (centers - shift) / scale
    E = tps_eta(_distances(U, U), m, d)
    w, V = np.linalg.eigh(E)
    order = np.argsort(-np.abs(w), kind="stable")
    w, V = w[order], V[:, order]
    Uk, Dk = V[:, :k], w[:k]

    T = _poly(U, m)
    # null space of T' Uk: radial coefficients orthogonal to the polynomials
    Q, _ = np.linalg.qr((T.T @ Uk).T, mode="complete")
    Z = Q[:, M:]
    P = Z.T @ (Dk[:, None] * Z)
    lam, R = np.linalg.eigh((P + P.T) / 2.0)
    lam, R = lam[::-1], R[:, ::-1]
    radial = Uk @ Z @ R

    lam = lam * scale ** (d - 2 * m)
    penalty = np.zeros((k, k))
    penalty[: k - M, : k - M] = np.diag(lam)

    constant = np.zeros(k)
    constant[-1] = 1.0
    b = BasisSystem(
        design=np.zeros((0, k)),
        penalty=penalty,
        knots=centers,
        constraint=np.eye(k),
        null_dim=M,
        labels=tuple(f"F{i + 1}" for i in range(k)),
        basis_code="tp",
        variables=tuple(variables),
        constant=constant,
        radial=radial,
        shift=shift,
        scale=scale,
        m=m,
        eigenvalues=w,
        ranges=np.column_stack([X.min(axis=0), X.max(axis=0)]),
    )
    return replace(b, design=_tprs_design(X, b))


# constraints ----------------------------------------------------------------------

def apply_constraint(b: BasisSystem, x_fit=None) -> BasisSystem:
    """Sum-to-zero reparameterization over the fitting data.

    Each column becomes ``b_k - mean(b_k)`` (the constant function is in the
    span of the basis), and the column carrying the constant is dropped. The
    penalty is transformed congruently, ``Z' S Z``.
    """
    if b.constrained:
        raise BasisError("constraint already applied")
    design = b.design if x_fit is None else b.raw_evaluate(x_fit)
    if design.shape[0] == 0:
        raise BasisError("no fitting data to centre over")
    K = b.k
    means = design.mean(axis=0)
    v = b.constant
    drop = int(np.argmax(np.abs(v)))
    Z = (np.eye(K) - np.outer(v, means) / float(v @ means))
    Z = np.delete(Z, drop, axis=1)
    S = Z.T @ b.penalty @ Z
    S = (S + S.T) / 2.0
    return replace(
        b,
        design=design @ Z,
        penalty=S,
        constraint=Z,
        null_dim=b.null_dim - 1,
        labels=tuple(f"F{i + 1}" for i in range(K - 1)),
        constant=None,
        constrained=True,
    )


def build_smooth(spec: SmoothSpec, data, rescale: bool = True) -> BasisSystem:
    """Unconstrained basis for ``spec`` on the covariate columns of ``data``."""
    if not spec.supported:
        raise UnsupportedBasisError(f"unsupported basis: {spec.basis_code}")
    missing = [v for v in spec.variables if v not in data]
    if missing:
        raise BasisError(f"unknown variable(s) {missing} for {spec.label}")
    X = np.column_stack([np.asarray(data[v], dtype=float) for v in spec.variables])
    k = spec.effective_k
    if spec.basis_code == "cr":
        if len(spec.variables) != 1:
            raise BasisError("cr smooths take exactly one covariate")
        if spec.m != 2:
            raise BasisError("cr smooths only support m=2")
        return cr_basis(X[:, 0], place_knots(X[:, 0], k), variable=spec.variables[0])
    if spec.m < 1:
        raise BasisError(f"penalty order m={spec.m} not supported for tp smooths")
    return tprs_basis(X, k, m=spec.m, variables=spec.variables, rescale=rescale)


def penalty_rank(S, tol: float = 1e-8) -> int:
    ev = np.linalg.eigvalsh(S)
    top = ev.max(initial=0.0)
    if top <= 0:
        return 0
    return int(np.sum(ev > tol * top))


# tidy exports ----------------------------------------------------------------------

def _grid(ranges, n_eval):
    axes = [np.linspace(lo, hi, n_eval) for lo, hi in ranges]
    if len(axes) == 1:
        return axes[0][:, None]
    g = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([a.ravel() for a in g])


def basis_tidy(smooth, data=None, n_eval: int = 100, constrain: bool = False,
               label: str | None = None) -> pd.DataFrame:
    """Basis functions evaluated on an even grid over the data range.

    ``smooth`` is a :class:`SmoothSpec` (built on ``data``) or an existing
    :class:`BasisSystem`. Two-dimensional smooths are evaluated on an
    ``n_eval`` x ``n_eval`` grid. Output columns: ``.smooth``, ``.type``,
    ``.by``, the covariate(s), ``.bf`` and ``.value``.
    """
    if isinstance(smooth, SmoothSpec):
        if data is None:
            raise BasisError("data is required to build a basis from a smooth specification")
        missing = [v for v in smooth.variables if v not in data]
        if missing:
            raise BasisError(f"unknown variable(s) {missing} for {smooth.label}")
        b = build_smooth(smooth, data)
        if constrain:
            b = apply_constraint(b)
        label = label or smooth.label
    else:
        b = smooth
        label = label or f"s({','.join(b.variables)})"
    grid = _grid(b.ranges, n_eval)
    values = b.evaluate(grid)
    n, K = values.shape
    out = {
        ".smooth": np.repeat(label, n * K),
        ".type": np.repeat(b.basis_code, n * K),
        ".by": np.repeat("", n * K),
    }
    for j, v in enumerate(b.variables):
        out[v] = np.tile(grid[:, j], K)
    out[".bf"] = np.repeat(np.arange(1, K + 1), n)
    out[".value"] = values.T.ravel()
    return pd.DataFrame(out)


def penalty_tidy(b: BasisSystem, label: str) -> pd.DataFrame:
    """Long-format penalty: ``.smooth``, ``.row``, ``.col``, ``.value``."""
    K = b.k
    rows = np.repeat(np.array(b.labels, dtype=object), K)
    cols = np.tile(np.array(b.labels, dtype=object), K)
    return pd.DataFrame({
        ".smooth": np.repeat(label, K * K),
        ".row": rows,
        ".col": cols,
        ".value": b.penalty.ravel(),
    })


def penalty_from_tidy(table: pd.DataFrame) -> np.ndarray:
    """Reassemble a square penalty matrix from :func:`penalty_tidy` output."""
    labels = list(dict.fromkeys(table[".row"]))
    index = {lab: i for i, lab in enumerate(labels)}
    S = np.zeros((len(labels), len(labels)))
    for r, c, v in zip(table[".row"], table[".col"], table[".value"]):
        S[index[r], index[c]] = v
    return S


def basis_to_dict(b: BasisSystem) -> dict:
    def arr(a):
        return None if a is None else np.asarray(a).tolist()

    return {
        "basis_code": b.basis_code,
        "variables": list(b.variables),
        "knots": arr(b.knots),
        "penalty": arr(b.penalty),
        "constraint": arr(b.constraint),
        "null_dim": b.null_dim,
        "labels": list(b.labels),
        "constrained": b.constrained,
        "radial": arr(b.radial),
        "shift": arr(b.shift),
        "scale": b.scale,
        "m": b.m,
        "eigenvalues": arr(b.eigenvalues),
        "ranges": arr(b.ranges),
    }


def basis_from_dict(d: dict, x_fit=None) -> BasisSystem:
    K = len(d["labels"])
    b = BasisSystem(
        design=np.zeros((0, K)),
        penalty=np.array(d["penalty"], dtype=float),
        knots=np.array(d["knots"], dtype=float),
        constraint=np.array(d["constraint"], dtype=float),
        null_dim=int(d["null_dim"]),
        labels=tuple(d["labels"]),
        basis_code=d["basis_code"],
        variables=tuple(d["variables"]),
        constrained=bool(d["constrained"]),
        radial=None if d.get("radial") is None else np.array(d["radial"], dtype=float),
        shift=None if d.get("shift") is None else np.array(d["shift"], dtype=float),
        scale=float(d.get("scale", 1.0)),
        m=int(d.get("m", 2)),
        eigenvalues=None if d.get("eigenvalues") is None else np.array(d["eigenvalues"]),
        ranges=np.array(d["ranges"], dtype=float),
    )
    if x_fit is not None:
        b = replace(b, design=b.evaluate(x_fit))
    return b
