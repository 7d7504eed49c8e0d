"""Response-surface fits: OLS linear, symmetric quadratic, and 1-D polynomial.

All solves go through the normal equations with a condition-number guard
(reject above 1e12); the systems here are tiny and reproducibility beats
speed.  Every model exposes analytic ``predict``/``gradient``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateAbscissae, RankDeficient

COND_LIMIT = 1e12


def _solve_normal(design: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Least squares via the normal equations, guarded against
    rank deficiency."""
    n, p = design.shape
    if n < p:
        raise RankDeficient(f"{n} rows cannot determine {p} coefficients")
    gram = design.T @ design
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankDeficient(f"normal equations condition number {cond:.3g} "
                            f"exceeds {COND_LIMIT:.0e}")
    return np.linalg.solve(gram, design.T @ rhs)


def _r_squared(resid: np.ndarray, q: np.ndarray) -> float:
    ss_res = float(resid @ resid)
    centered = q - q.mean()
    ss_tot = float(centered @ centered)
    scale = float(np.linalg.norm(q))
    if ss_res <= (1e-12 * (1.0 + scale)) ** 2 * len(q):
        return 1.0
    if ss_tot == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot)))


@dataclass
class LinearSurrogate:
    c: float
    b: np.ndarray
    r_squared: float
    n_points: int

    @property
    def m(self) -> int:
        return len(self.b)

    def predict(self, x) -> float:
        return float(self.c + np.asarray(x, dtype=float) @ self.b)

    def gradient(self, x) -> np.ndarray:
        return self.b.copy()


@dataclass
class QuadraticSurrogate:
    c: float
    b: np.ndarray
    a_matrix: np.ndarray  # symmetric
    r_squared: float
    n_points: int = 0

    @property
    def m(self) -> int:
        return len(self.b)

    def predict(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.c + self.b @ x + x @ self.a_matrix @ x)

    def gradient(self, x) -> np.ndarray:
        return self.b + 2.0 * self.a_matrix @ np.asarray(x, dtype=float)


@dataclass
class Poly1DSurrogate:
    degree: int
    coeffs: np.ndarray  # ascending powers, length degree+1
    domain: tuple[float, float]
    r_squared: float
    diagnostics: list[dict] = field(default_factory=list)

    @staticmethod
    def _scalar(x) -> float:
        arr = np.atleast_1d(np.asarray(x, dtype=float))
        return float(arr[0])

    def predict(self, x: float) -> float:
        return float(np.polynomial.polynomial.polyval(self._scalar(x),
                                                      self.coeffs))

    def derivative(self, x: float) -> float:
        dcoeffs = np.polynomial.polynomial.polyder(self.coeffs)
        return float(np.polynomial.polynomial.polyval(self._scalar(x),
                                                      dcoeffs))

    def gradient(self, x) -> np.ndarray:
        xval = float(np.atleast_1d(np.asarray(x, dtype=float))[0])
        return np.array([self.derivative(xval)])

    def extrapolates(self, x: float) -> bool:
        lo, hi = self.domain
        return x < lo or x > hi


def fit_ols(x_matrix: np.ndarray, q: np.ndarray) -> LinearSurrogate:
    """Fit Q ≈ c + x·b by ordinary least squares."""
    x_matrix = np.asarray(x_matrix, dtype=float)
    q = np.asarray(q, dtype=float)
    n, m = x_matrix.shape
    design = np.hstack([np.ones((n, 1)), x_matrix])
    beta = _solve_normal(design, q)
    resid = design @ beta - q
    return LinearSurrogate(c=float(beta[0]), b=beta[1:],
                           r_squared=_r_squared(resid, q), n_points=n)


def fit_quadratic(x_matrix: np.ndarray, q: np.ndarray) -> QuadraticSurrogate:
    """Fit Q ≈ c + b·x + x·A·x with A constrained symmetric."""
    x_matrix = np.asarray(x_matrix, dtype=float)
    q = np.asarray(q, dtype=float)
    n, m = x_matrix.shape
    quota = (m + 1) * (m + 2) // 2
    if n < quota:
        raise RankDeficient(f"{n} rows below the quadratic quota {quota}")

    cols = [np.ones(n)]
    cols.extend(x_matrix[:, i] for i in range(m))
    pairs = [(i, j) for i in range(m) for j in range(i, m)]
    cols.extend(x_matrix[:, i] * x_matrix[:, j] for i, j in pairs)
    design = np.column_stack(cols)
    beta = _solve_normal(design, q)

    c = float(beta[0])
    b = beta[1:m + 1].copy()
    a = np.zeros((m, m))
    for coef, (i, j) in zip(beta[m + 1:], pairs):
        if i == j:
            a[i, i] = coef
        else:
            a[i, j] = a[j, i] = coef / 2.0
    resid = design @ beta - q
    return QuadraticSurrogate(c=c, b=b, a_matrix=a,
                              r_squared=_r_squared(resid, q), n_points=n)


def _adjusted_r2(r2: float, n: int, degree: int) -> float:
    dof = n - degree - 1
    if dof <= 0:
        return r2
    return 1.0 - (1.0 - r2) * (n - 1) / dof


def fit_poly1d(x_raw: np.ndarray, q: np.ndarray, max_degree: int = 3) -> Poly1DSurrogate:
    """Fit polynomials of degree 1..max_degree and keep the smallest degree
    whose adjusted R² is within 0.01 of the best."""
    x_raw = np.asarray(x_raw, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    distinct = np.unique(x_raw)
    if len(distinct) < 2:
        raise DuplicateAbscissae(f"only {len(distinct)} distinct x values")

    top = min(max_degree, len(distinct) - 1)
    candidates = []
    for degree in range(1, top + 1):
        design = np.vander(x_raw, degree + 1, increasing=True)
        try:
            coeffs = _solve_normal(design, q)
        except RankDeficient:
            continue
        resid = design @ coeffs - q
        r2 = _r_squared(resid, q)
        candidates.append({
            "degree": degree,
            "coeffs": coeffs,
            "r_squared": r2,
            "adjusted_r_squared": _adjusted_r2(r2, len(q), degree),
        })
    if not candidates:
        raise RankDeficient("no polynomial degree could be fitted")

    best = max(c["adjusted_r_squared"] for c in candidates)
    chosen = next(c for c in candidates
                  if c["adjusted_r_squared"] >= best - 0.01)
    diagnostics = [{k: v for k, v in c.items() if k != "coeffs"}
                   for c in candidates]
    return Poly1DSurrogate(
        degree=chosen["degree"],
        coeffs=chosen["coeffs"],
        domain=(float(x_raw.min()), float(x_raw.max())),
        r_squared=chosen["r_squared"],
        diagnostics=diagnostics,
    )
