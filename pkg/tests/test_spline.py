"""Spline surfaces against dense linear-algebra and scipy oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from fibertwin.nlse import FiberParams, GridSpec, SignalMatrix, TwinParams, propagate
from fibertwin.signals import ComplexSignal
from fibertwin.spline import (
    DomainError,
    InsufficientKnotsError,
    MultCounter,
    SingularSystemError,
    SplineError,
    TridiagonalSystem,
    build_surface,
    count_query_mults,
    natural_spline,
    surface_from_grid,
    thomas_solve,
)


class TestThomasSolve:
    def test_identity_system(self):
        rhs = np.array([3.0, -1.0, 2.0, 7.0])
        sys = TridiagonalSystem(
            sub=np.zeros(3), diag=np.ones(4), sup=np.zeros(3), rhs=rhs
        )
        np.testing.assert_array_equal(thomas_solve(sys), rhs)

    def test_against_dense_solver(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = 4
            sub = rng.uniform(-1, 1, n - 1)
            sup = rng.uniform(-1, 1, n - 1)
            diag = 3.0 + rng.uniform(0, 1, n)  # diagonally dominant
            rhs = rng.standard_normal(n)
            dense = np.diag(diag) + np.diag(sub, -1) + np.diag(sup, 1)
            expected = np.linalg.solve(dense, rhs)
            got = thomas_solve(TridiagonalSystem(sub, diag, sup, rhs))
            np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_multiplication_count(self):
        counter = MultCounter()
        sys = TridiagonalSystem(
            sub=np.ones(3), diag=np.full(4, 4.0), sup=np.ones(3),
            rhs=np.arange(4.0),
        )
        thomas_solve(sys, counter)
        assert counter.solve_mults == 13 * 4 - 4

    def test_zero_pivot_raises(self):
        sys = TridiagonalSystem(
            sub=np.ones(2), diag=np.zeros(3), sup=np.ones(2), rhs=np.ones(3)
        )
        with pytest.raises(SingularSystemError):
            thomas_solve(sys)


class TestNaturalSpline:
    def test_linear_data(self):
        h = 0.5
        y = 2.0 + 3.0 * np.arange(7) * h
        m, b = natural_spline(y, h)
        np.testing.assert_allclose(m, 0.0, atol=1e-12)
        np.testing.assert_allclose(b, 3.0, atol=1e-12)

    def test_constant_data(self):
        m, b = natural_spline(np.full(5, 4.2), 1.0)
        np.testing.assert_allclose(m, 0.0, atol=1e-14)
        np.testing.assert_allclose(b, 0.0, atol=1e-14)

    def test_hat_data_hand_oracle(self):
        # interior system for y = (0, 1, 0), h = 1 reduces to 4 m_1 = -12
        m, _ = natural_spline(np.array([0.0, 1.0, 0.0]), 1.0)
        np.testing.assert_allclose(m, [0.0, -3.0, 0.0], atol=1e-14)

    def test_against_scipy(self):
        rng = np.random.default_rng(1)
        h = 0.37
        y = rng.standard_normal(11)
        x = np.arange(11) * h
        cs = CubicSpline(x, y, bc_type="natural")
        m, b = natural_spline(y, h)
        np.testing.assert_allclose(m, cs(x, 2), atol=1e-10)
        np.testing.assert_allclose(b, cs(x, 1), atol=1e-10)

    def test_degenerate_input_rejected(self):
        with pytest.raises(SplineError):
            natural_spline(np.array([1.0, 2.0]), 1.0)


def random_surface(rng, nt=9, nz=6, ht=0.7, hz=1.3, complex_valued=True):
    g = rng.standard_normal((nt, nz))
    if complex_valued:
        g = g + 1j * rng.standard_normal((nt, nz))
    return surface_from_grid(g, ht, hz), g


class TestSurfaceBasics:
    def test_knot_reproduction(self):
        rng = np.random.default_rng(2)
        surf, g = random_surface(rng)
        tt, zz = np.meshgrid(
            np.arange(9) * surf.h_t, np.arange(6) * surf.h_z, indexing="ij"
        )
        value, _, _ = surf.eval_many(zz.ravel(), tt.ravel())
        assert np.max(np.abs(value.reshape(9, 6) - g)) <= 1e-10 * np.max(np.abs(g))

    def test_bilinear_reproduction(self):
        p, q, r = 0.8, -1.7, 0.45
        t = np.arange(8) * 0.5
        z = np.arange(5) * 2.0
        g = p + q * t[:, None] + r * z[None, :]
        surf = surface_from_grid(g, 0.5, 2.0)
        rng = np.random.default_rng(3)
        zq = rng.uniform(0, z[-1], 200)
        tq = rng.uniform(0, t[-1], 200)
        value, d_dz, d2_dt2 = surf.eval_many(zq, tq)
        np.testing.assert_allclose(value, p + q * tq + r * zq, atol=1e-10)
        np.testing.assert_allclose(d_dz, r, atol=1e-10)
        np.testing.assert_allclose(d2_dt2, 0.0, atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(
        p=st.floats(-5, 5),
        q=st.floats(-5, 5),
        r=st.floats(-5, 5),
    )
    def test_affine_data_has_zero_curvature(self, p, q, r):
        t = np.arange(6) * 0.8
        z = np.arange(4) * 1.1
        g = p + q * t[:, None] + r * z[None, :]
        surf = surface_from_grid(g, 0.8, 1.1)
        value, d_dz, d2 = surf.eval_many(np.array([1.9]), np.array([2.3]))
        scale = max(1.0, abs(p) + abs(q) + abs(r))
        assert abs(value[0] - (p + q * 2.3 + r * 1.9)) <= 1e-10 * scale
        assert abs(d2[0]) <= 1e-10 * scale

    def test_out_of_domain_rejected(self):
        rng = np.random.default_rng(4)
        surf, _ = random_surface(rng)
        with pytest.raises(DomainError):
            surf.eval(-0.1, 1.0)
        with pytest.raises(DomainError):
            surf.eval(1.0, surf.t_span + 0.1)

    def test_boundary_belongs_to_last_cell(self):
        rng = np.random.default_rng(5)
        surf, g = random_surface(rng)
        value, _, _ = surf.eval(surf.z_span, surf.t_span)
        assert abs(value - g[-1, -1]) < 1e-10

    def test_insufficient_knots(self):
        grid = np.zeros((64, 2), complex)
        spec = GridSpec(n=64, dt_ps=1.0, m=1, dz_km=1.0)
        with pytest.raises(InsufficientKnotsError):
            build_surface(SignalMatrix(grid=grid, spec=spec))
        with pytest.raises(InsufficientKnotsError):
            surface_from_grid(np.zeros((5, 1)), 1.0, 1.0)

    def test_two_knot_axis_falls_back_to_linear(self):
        # data linear in z stays exact under the secant fallback
        t = np.arange(7) * 0.5
        g = np.sin(t)[:, None] + np.array([0.0, 3.0])[None, :]
        surf = surface_from_grid(g, 0.5, 4.0)
        value, d_dz, _ = surf.eval_many(np.array([1.7]), np.array([2.2]))
        assert abs(d_dz[0] - 3.0 / 4.0) < 1e-10


class TestContinuity:
    def test_c2_in_t_and_c1_in_z_at_interior_knots(self):
        rng = np.random.default_rng(6)
        surf, _ = random_surface(rng, nt=8, nz=5, ht=0.9, hz=1.7)
        # compare the two neighbouring polynomials exactly at the shared knot
        zq = np.full(3, 2.45)
        for i in (1, 3, 6):
            tk = i * surf.h_t
            left = np.nextafter(tk, -np.inf)
            vals_l = surf.eval_many(zq[:1], np.array([left]))
            vals_r = surf.eval_many(zq[:1], np.array([tk]))
            for a, b in zip(vals_l, vals_r):
                assert abs(a[0] - b[0]) <= 1e-9 * max(abs(b[0]), 1e-12)
        tq = np.array([1.234])
        for j in (1, 3):
            zk = j * surf.h_z
            left = np.nextafter(zk, -np.inf)
            vals_l = surf.eval_many(np.array([left]), tq)
            vals_r = surf.eval_many(np.array([zk]), tq)
            for a, b in zip(vals_l, vals_r):
                assert abs(a[0] - b[0]) <= 1e-9 * max(abs(b[0]), 1e-12)


class TestDerivativesAgainstFiniteDifferences:
    def test_fd_agreement(self):
        rng = np.random.default_rng(7)
        surf, _ = random_surface(rng, nt=10, nz=7, ht=0.6, hz=1.1)
        pts = [(1.83, 2.91), (4.0, 0.77), (6.53, 5.2)]
        for z0, t0 in pts:
            h = 1e-4 * min(surf.h_t, surf.h_z)
            v0, d_dz, d2_dt2 = surf.eval(z0, t0)
            vp, _, _ = surf.eval(z0 + h, t0)
            vm, _, _ = surf.eval(z0 - h, t0)
            fd_dz = (vp - vm) / (2 * h)
            assert abs(fd_dz - d_dz) / abs(d_dz) < 1e-5
            vp, _, _ = surf.eval(z0, t0 + h)
            vm, _, _ = surf.eval(z0, t0 - h)
            fd_d2 = (vp - 2 * v0 + vm) / h**2
            assert abs(fd_d2 - d2_dt2) / abs(d2_dt2) < 1e-5


def dense_bicubic_oracle(g, ht, hz, z, t):
    """Brute-force surface: scipy natural splines for the corner derivative
    data, then a dense 16x16 solve of the bicubic conditions per cell."""
    nt, nz = g.shape
    tx = np.arange(nt) * ht
    zx = np.arange(nz) * hz
    ft = np.stack([CubicSpline(tx, g[:, j], bc_type="natural")(tx, 1) for j in range(nz)], axis=1)
    fz = np.stack([CubicSpline(zx, g[i, :], bc_type="natural")(zx, 1) for i in range(nt)], axis=0)
    ftz = np.stack([CubicSpline(zx, ft[i, :], bc_type="natural")(zx, 1) for i in range(nt)], axis=0)

    i = min(int(t // ht), nt - 2)
    j = min(int(z // hz), nz - 2)
    u = t / ht - i
    w = z / hz - j

    # rows: value/dt/dz/dtz conditions at the four corners, unit-square units
    def monomial_row(u0, w0, ddu, ddw):
        row = np.zeros(16)
        for a in range(4):
            for b in range(4):
                ca = {0: u0**a, 1: a * u0 ** max(a - 1, 0), 2: a * (a - 1) * u0 ** max(a - 2, 0)}[ddu]
                cb = {0: w0**b, 1: b * w0 ** max(b - 1, 0)}[ddw]
                row[4 * a + b] = ca * cb
        return row

    mat, rhs = [], []
    for (iu, iw) in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        ii, jj = i + iu, j + iw
        mat.append(monomial_row(iu, iw, 0, 0)); rhs.append(g[ii, jj])
        mat.append(monomial_row(iu, iw, 1, 0)); rhs.append(ft[ii, jj] * ht)
        mat.append(monomial_row(iu, iw, 0, 1)); rhs.append(fz[ii, jj] * hz)
        mat.append(monomial_row(iu, iw, 1, 1)); rhs.append(ftz[ii, jj] * ht * hz)
    coef = np.linalg.solve(np.asarray(mat), np.asarray(rhs))
    value = monomial_row(u, w, 0, 0) @ coef
    return value


class TestDenseOracle:
    def test_five_by_five_grid(self):
        rng = np.random.default_rng(8)
        ht, hz = 0.8, 1.2
        g = rng.standard_normal((5, 5))
        surf = surface_from_grid(g, ht, hz)
        for z0, t0 in [(0.3, 0.4), (2.2, 1.5), (4.7, 3.1), (1.05, 2.9)]:
            got, _, _ = surf.eval(z0, t0)
            want = dense_bicubic_oracle(g, ht, hz, z0, t0)
            assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


class TestCounters:
    def test_build_count_formula(self):
        counter = MultCounter()
        rng = np.random.default_rng(9)
        n, m = 16, 5  # knots in t and z
        surface_from_grid(rng.standard_normal((n, m)), 1.0, 1.0, counter)
        assert counter.coeff_mults == 52 * n - 16 + 256 * (m - 1) * (n - 1)

    def test_query_budget(self):
        assert count_query_mults(0) == 0
        assert count_query_mults(1) == 52
        assert count_query_mults(800) == 41600

    def test_eval_counter_matches_budget(self):
        rng = np.random.default_rng(10)
        surf, _ = random_surface(rng)
        counter = MultCounter()
        surf.eval_many(np.array([0.5, 1.0, 2.0]), np.array([0.3, 1.1, 4.0]), counter)
        assert counter.query_mults == count_query_mults(3)
        assert counter.deriv_query_mults == 80 * 3

    def test_counters_additive_across_builds(self):
        counter = MultCounter()
        rng = np.random.default_rng(11)
        surface_from_grid(rng.standard_normal((8, 4)), 1.0, 1.0, counter)
        first = counter.coeff_mults
        surface_from_grid(rng.standard_normal((8, 4)), 1.0, 1.0, counter)
        assert counter.coeff_mults == 2 * first


def test_cross_derivative_order_is_immaterial():
    # splining f_t along z equals splining f_z along t: the two directional
    # derivative operators are a tensor product and commute
    from fibertwin.spline import _derivs_along

    rng = np.random.default_rng(12)
    ht, hz = 0.6, 1.4
    g = np.sin(0.5 * np.arange(9) * ht)[:, None] * np.cos(0.3 * np.arange(7) * hz)[None, :]
    a = _derivs_along(_derivs_along(g, ht, -2), hz, -1)
    b = _derivs_along(_derivs_along(g, hz, -1), ht, -2)
    assert np.max(np.abs(a - b)) < 1e-6
    assert np.max(np.abs(a - b)) < 1e-12  # in fact machine-level


class TestTwinSurface:
    def test_surface_from_propagation_record(self):
        n = 64
        t = np.arange(n) * 10.0
        field = np.sqrt(1e-3) * np.exp(-((t - 320.0) ** 2) / (2 * 80.0**2))
        sig = ComplexSignal(samples=field.astype(complex), dt_ps=10.0)
        spec = GridSpec(n=n, dt_ps=10.0, m=4, dz_km=20.0)
        twin = TwinParams.uniform(FiberParams(0.0, -21.67, 1.27, 80.0), 4)
        matrix = propagate(sig, twin, spec)
        surf = build_surface(matrix)
        value, _, _ = surf.eval(0.0, 320.0)
        assert abs(value - matrix.grid[32, 0]) < 1e-12
        value, _, _ = surf.eval(80.0, 320.0)
        assert abs(value - matrix.grid[32, 4]) < 1e-12
