"""Response-surface fits and their analytic gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paramstudy.errors import DuplicateAbscissae, RankDeficient
from paramstudy.study import ParameterDef
from paramstudy.sampling import plan_samples
from paramstudy.surrogate import (
    fit_ols,
    fit_poly1d,
    fit_quadratic,
)


def unit_box(m):
    return [ParameterDef(name=f"x{i+1}", lower=0.0, upper=1.0)
            for i in range(m)]


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestFitOls:
    def test_exact_linear_data(self):
        X = plan_samples(unit_box(2), 4.0, 0).points_normalized
        q = 2.0 + X @ np.array([3.0, -1.0])
        lin = fit_ols(X, q)
        assert lin.c == pytest.approx(2.0, abs=1e-10)
        np.testing.assert_allclose(lin.b, [3.0, -1.0], atol=1e-10)
        assert lin.r_squared == 1.0

    def test_too_few_rows_rejected(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])  # n = m < m+1
        with pytest.raises(RankDeficient):
            fit_ols(X, np.array([0.0, 1.0]))

    def test_collinear_columns_rejected(self):
        X = np.column_stack([np.linspace(0, 1, 6)] * 2)
        with pytest.raises(RankDeficient):
            fit_ols(X, np.arange(6.0))

    def test_slope_direction_close_to_dense_grid_oracle(self):
        a = np.array([0.7, 0.3])
        X = plan_samples(unit_box(2), 4.0, 1).points_normalized
        q = np.exp(X @ a)
        lin = fit_ols(X, q)
        # oracle: the same least-squares fit over a dense grid
        g = np.linspace(0, 1, 50)
        gx, gy = np.meshgrid(g, g)
        Xd = np.column_stack([gx.ravel(), gy.ravel()])
        dense = fit_ols(Xd, np.exp(Xd @ a))
        cos = (lin.b @ dense.b) / (np.linalg.norm(lin.b)
                                   * np.linalg.norm(dense.b))
        assert np.degrees(np.arccos(np.clip(cos, -1, 1))) <= 5.0

    def test_gradient_is_constant_b(self):
        X = plan_samples(unit_box(3), 4.0, 2).points_normalized
        q = 1.0 + X @ np.array([1.0, 2.0, 3.0])
        lin = fit_ols(X, q)
        np.testing.assert_array_equal(lin.gradient([0.1, 0.2, 0.3]),
                                      lin.gradient([0.9, 0.9, 0.9]))


class TestFitQuadratic:
    def test_expanded_square_recovered(self):
        x = np.linspace(0, 1, 6).reshape(-1, 1)
        q = (x.ravel() - 0.5) ** 2
        quad = fit_quadratic(x, q)
        assert quad.a_matrix[0, 0] == pytest.approx(1.0, abs=1e-8)
        assert quad.b[0] == pytest.approx(-1.0, abs=1e-8)
        assert quad.c == pytest.approx(0.25, abs=1e-8)

    def test_below_quota_rejected(self):
        X = plan_samples(unit_box(2), 2.0, 0).points_normalized  # n=4 < 6
        with pytest.raises(RankDeficient):
            fit_quadratic(X, np.arange(float(len(X))))

    def test_linear_data_gives_near_zero_curvature(self):
        X = plan_samples(unit_box(2), 8.0, 3).points_normalized
        rng = np.random.default_rng(0)
        q = 1.0 + X @ np.array([2.0, -0.5]) + rng.normal(0, 1e-6, len(X))
        quad = fit_quadratic(X, q)
        lin = fit_ols(X, q)
        assert np.linalg.norm(quad.a_matrix, "fro") < 1e-3
        np.testing.assert_allclose(quad.b, lin.b, atol=1e-3)

    def test_a_matrix_symmetric(self):
        X = plan_samples(unit_box(3), 8.0, 5).points_normalized
        q = X[:, 0] * X[:, 1] + X[:, 2] ** 2
        quad = fit_quadratic(X, q)
        np.testing.assert_allclose(quad.a_matrix, quad.a_matrix.T,
                                   atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        X = plan_samples(unit_box(2), 10.0, 4).points_normalized
        q = 1 + X[:, 0] + X[:, 0] * X[:, 1] - 2 * X[:, 1] ** 2
        quad = fit_quadratic(X, q)
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.uniform(0.1, 0.9, 2)
            fd = central_diff(quad.predict, x)
            g = quad.gradient(x)
            assert np.linalg.norm(g - fd) <= 1e-6 * (1 + np.linalg.norm(fd))


class TestFitPoly1d:
    def test_linear_data_selects_degree_one(self):
        x = np.linspace(0, 10, 9)
        g = fit_poly1d(x, 3.0 * x + 1.0)
        assert g.degree == 1
        assert g.r_squared == 1.0

    def test_saturating_shape_needs_degree_three(self):
        # clamped ramp: flat, rise, flat — far from linear
        x = np.linspace(0.5, 1.5, 21)
        q = 0.0707 * np.clip((x - 0.8) / 0.3, 0.0, 1.0)
        g = fit_poly1d(x, q)
        assert g.degree == 3
        diag = {d["degree"]: d["adjusted_r_squared"] for d in g.diagnostics}
        assert diag[3] - diag[1] > 0.01

    def test_two_points_exact_line(self):
        g = fit_poly1d(np.array([0.0, 1.0]), np.array([1.0, 3.0]))
        assert g.degree == 1
        assert g.r_squared == 1.0
        assert g.predict(0.5) == pytest.approx(2.0)

    def test_duplicate_abscissae_rejected(self):
        with pytest.raises(DuplicateAbscissae):
            fit_poly1d(np.array([2.0, 2.0, 2.0]), np.array([1.0, 2.0, 3.0]))

    def test_degree_selection_deterministic(self):
        x = np.linspace(0, 1, 15)
        q = np.exp(2 * x)
        a = fit_poly1d(x, q)
        b = fit_poly1d(x, q)
        assert a.degree == b.degree
        np.testing.assert_array_equal(a.coeffs, b.coeffs)

    def test_extrapolation_flagged(self):
        g = fit_poly1d(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 2.0]))
        assert g.extrapolates(-0.5)
        assert g.extrapolates(2.5)
        assert not g.extrapolates(1.0)

    def test_known_coefficients_evaluate(self):
        from paramstudy.surrogate import Poly1DSurrogate
        g = Poly1DSurrogate(degree=2, coeffs=np.array([0.0, 0.0, 1.0]),
                            domain=(0.0, 3.0), r_squared=1.0)
        assert g.predict(2.0) == 4.0
        assert g.derivative(2.0) == 4.0


class TestRSquaredProperties:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), noise=st.floats(0.0, 5.0))
    def test_r_squared_bounded(self, seed, noise):
        rng = np.random.default_rng(seed)
        X = rng.random((12, 2))
        q = X @ np.array([1.0, -2.0]) + noise * rng.normal(size=12)
        lin = fit_ols(X, q)
        assert 0.0 <= lin.r_squared <= 1.0

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000),
           a=st.floats(0.1, 100.0), beta=st.floats(-50.0, 50.0))
    def test_scale_equivariance(self, seed, a, beta):
        rng = np.random.default_rng(seed)
        X = rng.random((10, 2))
        q = 1 + X @ np.array([2.0, 3.0]) + 0.1 * rng.normal(size=10)
        base = fit_ols(X, q)
        scaled = fit_ols(X, a * q + beta)
        assert scaled.c == pytest.approx(a * base.c + beta,
                                         rel=1e-8, abs=1e-8)
        np.testing.assert_allclose(scaled.b, a * base.b, rtol=1e-8,
                                   atol=1e-8)
        assert scaled.r_squared == pytest.approx(base.r_squared, abs=1e-9)
