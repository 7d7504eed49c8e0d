"""Active-subspace analysis: dominant directions, eigen-diagnostics,
bootstrap confidence, and the reduced 1-D model.

The OLS path is the rank-1 identity C = b bᵀ (direction b/‖b‖, eigenvalue
‖b‖²); the quadratic path averages surrogate gradients over the sample and
eigendecomposes with a cyclic Jacobi rotation scheme.  Direction sign is
fixed so the largest-magnitude component is nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BootstrapDegenerate, EigenNoConvergence, RankDeficient, ZeroGradient
from .surrogate import LinearSurrogate, Poly1DSurrogate, QuadraticSurrogate, fit_ols, fit_poly1d

EIGEN_GAP_RATIO = 10.0


@dataclass
class ASResult:
    w_hat: np.ndarray            # unit-norm active direction
    eigenvalues: np.ndarray      # descending
    w_matrix: np.ndarray         # orthonormal eigenvectors, columns
    split_n: Optional[int]
    source: str                  # "ols_rank1" | "quadratic"
    param_names: list[str]


@dataclass
class BootstrapReport:
    replicates: int
    per_component_ci: list[tuple[float, float]]
    angle_ci: tuple[float, float]  # radians
    seed: int


@dataclass
class ReducedModel:
    z_values: np.ndarray
    g: Poly1DSurrogate
    r_squared: float


@dataclass
class SummaryPlotData:
    points: np.ndarray          # (n, 2) columns z, Q
    curve: np.ndarray           # (k, 2) columns z, g(z)
    component_bars: list[tuple[str, float]]


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12,
                max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a small dense symmetric matrix by cyclic Jacobi
    rotations.  Returns (eigenvalues descending, eigenvector columns)."""
    a = np.array(matrix, dtype=float)
    m = a.shape[0]
    v = np.eye(m)
    scale = np.linalg.norm(a, "fro") or 1.0

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(m)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
                a[p, q] = a[q, p] = 0.0
    else:
        raise EigenNoConvergence(f"off-diagonal norm {off:.3g} after "
                                 f"{max_sweeps} sweeps")

    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals)[::-1]
    return eigvals[order], v[:, order]


def _apply_sign_convention(w: np.ndarray) -> np.ndarray:
    """Flip so the largest-magnitude component is nonnegative."""
    idx = int(np.argmax(np.abs(w)))
    return -w if w[idx] < 0 else w


def _complete_basis(w: np.ndarray) -> np.ndarray:
    """Orthonormal matrix whose first column is w."""
    m = len(w)
    basis = np.eye(m)
    basis[:, 0] = w
    q, _ = np.linalg.qr(basis)
    if q[:, 0] @ w < 0:
        q = -q
    q[:, 0] = w
    return q


def eigen_gap(eigenvalues: np.ndarray,
              ratio: float = EIGEN_GAP_RATIO) -> Optional[int]:
    """Split index n (1-based) where λ_n dominates λ_{n+1} by more than
    ``ratio``, or None."""
    ev = np.asarray(eigenvalues, dtype=float)
    m = len(ev)
    if m < 2:
        return None
    ratios = [ev[n - 1] / (ev[n] + 1e-300) for n in range(1, m)]
    best = int(np.argmax(ratios))
    return best + 1 if ratios[best] > ratio else None


def active_direction_ols(lin: LinearSurrogate,
                         param_names: Optional[list[str]] = None) -> ASResult:
    """Rank-1 active subspace from the OLS slope: ŵ = ±b/‖b‖, λ̂ = ‖b‖²."""
    norm = float(np.linalg.norm(lin.b))
    if norm <= 1e-14:
        raise ZeroGradient("OLS slope vector is numerically zero")
    m = lin.m
    w = _apply_sign_convention(lin.b / norm)
    eigvals = np.zeros(m)
    eigvals[0] = float(lin.b @ lin.b)
    return ASResult(
        w_hat=w,
        eigenvalues=eigvals,
        w_matrix=_complete_basis(w),
        split_n=1 if m > 1 else None,
        source="ols_rank1",
        param_names=list(param_names) if param_names else [f"x{i+1}" for i in range(m)],
    )


def active_subspace_quadratic(quad: QuadraticSurrogate, x_matrix: np.ndarray,
                              param_names: Optional[list[str]] = None) -> ASResult:
    """Empirical C from quadratic-surrogate gradients averaged over the
    sample, then a full symmetric eigendecomposition."""
    x_matrix = np.asarray(x_matrix, dtype=float)
    grads = quad.b[None, :] + 2.0 * x_matrix @ quad.a_matrix
    c_hat = grads.T @ grads / len(x_matrix)
    eigvals, w_mat = jacobi_eigh(c_hat)
    w = _apply_sign_convention(w_mat[:, 0])
    if w_mat[:, 0] @ w < 0:
        w_mat = w_mat.copy()
        w_mat[:, 0] = w
    m = quad.m
    return ASResult(
        w_hat=w,
        eigenvalues=eigvals,
        w_matrix=w_mat,
        split_n=eigen_gap(eigvals),
        source="quadratic",
        param_names=list(param_names) if param_names else [f"x{i+1}" for i in range(m)],
    )


def bootstrap_direction(x_matrix: np.ndarray, q: np.ndarray, b: int = 200,
                        seed: int = 0, max_retry_factor: int = 2) -> BootstrapReport:
    """Percentile confidence intervals for the OLS active direction from
    resampling rows with replacement."""
    if b < 10:
        raise ValueError("bootstrap needs at least 10 replicates")
    x_matrix = np.asarray(x_matrix, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(q)
    reference = active_direction_ols(fit_ols(x_matrix, q)).w_hat

    rng = np.random.default_rng(seed)
    components = []
    angles = []
    failures = 0
    budget = b * max_retry_factor
    while len(components) < b and budget > 0:
        budget -= 1
        idx = rng.integers(0, n, size=n)
        try:
            lin = fit_ols(x_matrix[idx], q[idx])
            w = lin.b / np.linalg.norm(lin.b)
        except (RankDeficient, ZeroGradient):
            failures += 1
            continue
        if float(w @ reference) < 0:
            w = -w
        components.append(w)
        # chord formula: accurate for tiny angles where arccos loses digits
        chord = float(np.linalg.norm(w - reference))
        angles.append(float(2.0 * np.arcsin(min(1.0, 0.5 * chord))))
    if len(components) < b:
        raise BootstrapDegenerate(
            f"{failures} rank-deficient resamples out of {b + failures}")

    comp = np.array(components)
    per_component = [(float(np.percentile(comp[:, j], 2.5)),
                      float(np.percentile(comp[:, j], 97.5)))
                     for j in range(comp.shape[1])]
    angle_ci = (float(np.percentile(angles, 2.5)),
                float(np.percentile(angles, 97.5)))
    return BootstrapReport(replicates=b, per_component_ci=per_component,
                           angle_ci=angle_ci, seed=seed)


def build_reduced_model(x_matrix: np.ndarray, q: np.ndarray,
                        w_hat: np.ndarray) -> ReducedModel:
    """Fit g(z) to (ŵᵀx_j, Q_j); its R² is the 1-D structure quality."""
    z = np.asarray(x_matrix, dtype=float) @ np.asarray(w_hat, dtype=float)
    g = fit_poly1d(z, q)
    return ReducedModel(z_values=z, g=g, r_squared=g.r_squared)


def summary_data(x_matrix: np.ndarray, q: np.ndarray, w_hat: np.ndarray,
                 g: Poly1DSurrogate, param_names: list[str],
                 grid_points: int = 200) -> SummaryPlotData:
    z = np.asarray(x_matrix, dtype=float) @ np.asarray(w_hat, dtype=float)
    grid = np.linspace(z.min(), z.max(), max(grid_points, 100))
    curve = np.column_stack([grid, [g.predict(v) for v in grid]])
    return SummaryPlotData(
        points=np.column_stack([z, np.asarray(q, dtype=float)]),
        curve=curve,
        component_bars=[(name, float(w)) for name, w in zip(param_names, w_hat)],
    )
