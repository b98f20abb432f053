"""Natural bicubic spline surfaces over a rectangular (t, z) grid.

Construction runs three one-dimensional natural cubic spline passes to get
nodal first derivatives along t, along z, and of the t-derivatives along z
(the cross derivatives; splining f_z along t gives the identical result
because the two directional operators are a tensor product and commute).
Each grid cell then stores a 4x4 bicubic coefficient matrix obtained from
the corner values and corner derivatives scaled to the unit square, and a
query maps its coordinate into the cell and evaluates the polynomial and
its analytic derivatives.

Evaluation is exact at the knots, C2 across interior t-knots and C1 (in
fact C2) across interior z-knots.  Grids with fewer than three knots in a
direction cannot carry a cubic spline; the low-level builder falls back to
a two-point secant derivative there, while :func:`build_surface` rejects
such grids because a flat derivative estimate starves the dispersion
parameter of useful gradient signal.

All spline maps are linear in the grid values with real coefficients, so
they apply unchanged to complex grids (both channels at once).  The
``*_adjoint`` helpers implement the exact transposes of those maps,
including the transposed tridiagonal solve, for use by the gradient
engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nlse import SignalMatrix

__all__ = [
    "SplineError",
    "SingularSystemError",
    "DomainError",
    "InsufficientKnotsError",
    "TridiagonalSystem",
    "MultCounter",
    "SplineSurface",
    "thomas_solve",
    "natural_spline",
    "surface_from_grid",
    "build_surface",
    "count_query_mults",
]

_PIVOT_TINY = np.finfo(float).tiny


class SplineError(ValueError):
    pass


class SingularSystemError(SplineError):
    """Forward elimination hit a vanishing pivot."""


class DomainError(SplineError):
    """Query coordinate lies outside the interpolated rectangle."""


class InsufficientKnotsError(SplineError):
    """Grid too small for a cubic spline in some direction."""


@dataclass
class MultCounter:
    """Real-multiplication counters under a fixed accounting recipe.

    Counts reproduce the closed-form budgets of the complexity report
    rather than tracing machine instructions:

    * tridiagonal solve of size n: 13n - 4 (spline coefficient assembly 7n,
      forward elimination 2 + 5(n-1), back substitution n-1)
    * coefficient build over an (n_t x n_z) knot grid: 52 n_t - 16 for the
      one-dimensional passes (one size-n_t pass per channel and direction)
      plus 256 (n_z - 1)(n_t - 1) for the per-cell 4x4 products over both
      channels
    * value query: 52 = 2 x 26 per coordinate (local powers plus the row and
      column products, both channels)
    * derivative query: 80 extra per coordinate (two further matrix products
      of 20 per channel), tracked separately from the value-query budget
    * stepping: 8 n log2(n) + 24 n per segment (four transforms plus the
      linear and Kerr phase multiplies)
    """

    solve_mults: int = 0
    coeff_mults: int = 0
    query_mults: int = 0
    deriv_query_mults: int = 0
    ssfm_mults: int = 0

    def add_solve(self, n: int) -> None:
        self.solve_mults += 13 * n - 4

    def add_coeff_build(self, n_t: int, n_z: int) -> None:
        self.coeff_mults += (52 * n_t - 16) + 256 * (n_z - 1) * (n_t - 1)

    def add_value_queries(self, count: int) -> None:
        self.query_mults += 52 * count

    def add_deriv_queries(self, count: int) -> None:
        self.deriv_query_mults += 80 * count

    def add_ssfm(self, n: int, m: int) -> None:
        self.ssfm_mults += m * (8 * n * int(math.log2(n)) + 24 * n)


@dataclass
class TridiagonalSystem:
    """Tridiagonal system sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        n = self.diag.size
        if self.rhs.shape[0] != n:
            raise ValueError("diag and rhs sizes differ")
        if n > 1 and (self.sub.size != n - 1 or self.sup.size != n - 1):
            raise ValueError("off-diagonals must have length n - 1")


def _check_pivot(piv) -> None:
    if abs(piv) < _PIVOT_TINY:
        raise SingularSystemError("zero pivot during forward elimination")


def _thomas_stacked(sub, diag, sup, rhs) -> np.ndarray:
    """Thomas algorithm for one matrix and stacked right-hand sides (n, ...)."""
    n = diag.size
    rhs = np.asarray(rhs)
    out = rhs.astype(np.result_type(rhs.dtype, np.float64), copy=True)
    if n == 1:
        _check_pivot(diag[0])
        return out / diag[0]
    cs = np.empty(n - 1)
    piv = diag[0]
    _check_pivot(piv)
    cs[0] = sup[0] / piv
    out[0] = out[0] / piv
    for i in range(1, n):
        piv = diag[i] - sub[i - 1] * cs[i - 1]
        _check_pivot(piv)
        if i < n - 1:
            cs[i] = sup[i] / piv
        out[i] = (out[i] - sub[i - 1] * out[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        out[i] = out[i] - cs[i] * out[i + 1]
    return out


def thomas_solve(system: TridiagonalSystem, counter: MultCounter | None = None) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination and back substitution."""
    x = _thomas_stacked(system.sub, system.diag, system.sup, system.rhs)
    if counter is not None:
        counter.add_solve(system.diag.size)
    return x


def _spline_system(n: int, h: float):
    sub = np.full(max(n - 3, 0), h)
    diag = np.full(n - 2, 4.0 * h)
    return sub, diag, sub


def _nodal_derivs(values: np.ndarray, h: float):
    """Second derivatives m and first derivatives b of the natural spline
    at the knots; ``values`` is (n,) or (n, k) with uniform spacing h."""
    values = np.asarray(values)
    if not np.issubdtype(values.dtype, np.inexact):
        values = values.astype(float)
    n = values.shape[0]
    if n < 3:
        raise SplineError("degenerate input: need at least 3 knots")
    rhs = (6.0 / h) * (values[2:] - 2.0 * values[1:-1] + values[:-2])
    sub, diag, sup = _spline_system(n, h)
    m = np.zeros_like(values)
    m[1:-1] = _thomas_stacked(sub, diag, sup, rhs)
    b = np.empty_like(values)
    b[:-1] = (values[1:] - values[:-1]) / h - (h / 3.0) * m[:-1] - (h / 6.0) * m[1:]
    b[-1] = (values[-1] - values[-2]) / h + (h / 6.0) * m[-2] + (h / 3.0) * m[-1]
    return m, b


def _nodal_derivs_adjoint(b_bar: np.ndarray, h: float, m_bar: np.ndarray | None = None):
    """Transpose of the values -> (m, b) map of :func:`_nodal_derivs`."""
    b_bar = np.asarray(b_bar)
    n = b_bar.shape[0]
    mb = np.zeros_like(b_bar) if m_bar is None else np.array(m_bar, copy=True)
    mb[:-1] += -(h / 3.0) * b_bar[:-1]
    mb[1:] += -(h / 6.0) * b_bar[:-1]
    mb[-2] += (h / 6.0) * b_bar[-1]
    mb[-1] += (h / 3.0) * b_bar[-1]
    sub, diag, sup = _spline_system(n, h)
    r_bar = _thomas_stacked(sup, diag, sub, mb[1:-1])  # transposed solve
    out = np.zeros_like(b_bar)
    out[2:] += (6.0 / h) * r_bar
    out[1:-1] += -(12.0 / h) * r_bar
    out[:-2] += (6.0 / h) * r_bar
    out[1:] += b_bar[:-1] / h
    out[:-1] -= b_bar[:-1] / h
    out[-1] += b_bar[-1] / h
    out[-2] -= b_bar[-1] / h
    return out


def natural_spline(values: np.ndarray, h: float, counter: MultCounter | None = None):
    """Natural cubic spline through equally spaced knots.

    Returns the knot second derivatives (zero at both ends) and the knot
    first derivatives of the interpolant.
    """
    if h <= 0:
        raise ValueError("knot spacing must be positive")
    m, b = _nodal_derivs(values, h)
    if counter is not None:
        counter.add_solve(np.asarray(values).shape[0] - 2)
    return m, b


def _derivs_along(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Nodal spline first derivatives along one axis of an nd grid.

    Two-knot axes fall back to the secant slope at both knots.
    """
    moved = np.moveaxis(values, axis, 0)
    flat = moved.reshape(moved.shape[0], -1)
    if flat.shape[0] == 2:
        slope = (flat[1] - flat[0]) / h
        b = np.stack([slope, slope])
    else:
        _, b = _nodal_derivs(flat, h)
    return np.moveaxis(b.reshape(moved.shape), 0, axis)


def _derivs_along_adjoint(b_bar: np.ndarray, h: float, axis: int) -> np.ndarray:
    moved = np.moveaxis(b_bar, axis, 0)
    flat = moved.reshape(moved.shape[0], -1)
    if flat.shape[0] == 2:
        g = (flat[0] + flat[1]) / h
        out = np.stack([-g, g])
    else:
        out = _nodal_derivs_adjoint(flat, h)
    return np.moveaxis(out.reshape(moved.shape), 0, axis)


# Unit-square bicubic: value = [1 u u^2 u^3] A [1 w w^2 w^3]^T with corner
# data rows/cols ordered (value at u=0, value at u=1, derivative at u=0,
# derivative at u=1) and the mirrored ordering along w.
_HERMITE_L = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [-3.0, 3.0, -2.0, -1.0],
        [2.0, -2.0, 1.0, 1.0],
    ]
)
_HERMITE_R = _HERMITE_L.T


def _corner_tensor(g, ft, fz, ftz, h_t: float, h_z: float) -> np.ndarray:
    """Per-cell corner data, derivatives scaled to unit-square units."""
    lead = g.shape[:-2]
    pt, pz = g.shape[-2] - 1, g.shape[-1] - 1
    f = np.empty(lead + (pt, pz, 4, 4), dtype=g.dtype)
    f[..., 0, 0] = g[..., :-1, :-1]
    f[..., 0, 1] = g[..., :-1, 1:]
    f[..., 1, 0] = g[..., 1:, :-1]
    f[..., 1, 1] = g[..., 1:, 1:]
    f[..., 0, 2] = h_z * fz[..., :-1, :-1]
    f[..., 0, 3] = h_z * fz[..., :-1, 1:]
    f[..., 1, 2] = h_z * fz[..., 1:, :-1]
    f[..., 1, 3] = h_z * fz[..., 1:, 1:]
    f[..., 2, 0] = h_t * ft[..., :-1, :-1]
    f[..., 2, 1] = h_t * ft[..., :-1, 1:]
    f[..., 3, 0] = h_t * ft[..., 1:, :-1]
    f[..., 3, 1] = h_t * ft[..., 1:, 1:]
    f[..., 2, 2] = h_t * h_z * ftz[..., :-1, :-1]
    f[..., 2, 3] = h_t * h_z * ftz[..., :-1, 1:]
    f[..., 3, 2] = h_t * h_z * ftz[..., 1:, :-1]
    f[..., 3, 3] = h_t * h_z * ftz[..., 1:, 1:]
    return f


def _corner_tensor_adjoint(f_bar, h_t: float, h_z: float):
    lead = f_bar.shape[:-4]
    nt, nz = f_bar.shape[-4] + 1, f_bar.shape[-3] + 1
    g_bar = np.zeros(lead + (nt, nz), dtype=f_bar.dtype)
    ft_bar = np.zeros_like(g_bar)
    fz_bar = np.zeros_like(g_bar)
    ftz_bar = np.zeros_like(g_bar)
    g_bar[..., :-1, :-1] += f_bar[..., 0, 0]
    g_bar[..., :-1, 1:] += f_bar[..., 0, 1]
    g_bar[..., 1:, :-1] += f_bar[..., 1, 0]
    g_bar[..., 1:, 1:] += f_bar[..., 1, 1]
    fz_bar[..., :-1, :-1] += h_z * f_bar[..., 0, 2]
    fz_bar[..., :-1, 1:] += h_z * f_bar[..., 0, 3]
    fz_bar[..., 1:, :-1] += h_z * f_bar[..., 1, 2]
    fz_bar[..., 1:, 1:] += h_z * f_bar[..., 1, 3]
    ft_bar[..., :-1, :-1] += h_t * f_bar[..., 2, 0]
    ft_bar[..., :-1, 1:] += h_t * f_bar[..., 2, 1]
    ft_bar[..., 1:, :-1] += h_t * f_bar[..., 3, 0]
    ft_bar[..., 1:, 1:] += h_t * f_bar[..., 3, 1]
    ftz_bar[..., :-1, :-1] += h_t * h_z * f_bar[..., 2, 2]
    ftz_bar[..., :-1, 1:] += h_t * h_z * f_bar[..., 2, 3]
    ftz_bar[..., 1:, :-1] += h_t * h_z * f_bar[..., 3, 2]
    ftz_bar[..., 1:, 1:] += h_t * h_z * f_bar[..., 3, 3]
    return g_bar, ft_bar, fz_bar, ftz_bar


def _grid_coefs(values: np.ndarray, h_t: float, h_z: float) -> np.ndarray:
    """Bicubic coefficient tensor (..., n_t-1, n_z-1, 4, 4) for an nd grid."""
    ft = _derivs_along(values, h_t, -2)
    fz = _derivs_along(values, h_z, -1)
    ftz = _derivs_along(ft, h_z, -1)
    corners = _corner_tensor(values, ft, fz, ftz, h_t, h_z)
    return _HERMITE_L @ corners @ _HERMITE_R


def _grid_coefs_adjoint(coef_bar: np.ndarray, h_t: float, h_z: float) -> np.ndarray:
    """Transpose of :func:`_grid_coefs`: cell-coefficient cotangents back to
    grid-value cotangents."""
    f_bar = _HERMITE_L.T @ coef_bar @ _HERMITE_R.T
    g_bar, ft_bar, fz_bar, ftz_bar = _corner_tensor_adjoint(f_bar, h_t, h_z)
    ft_bar = ft_bar + _derivs_along_adjoint(ftz_bar, h_z, -1)
    g_bar = g_bar + _derivs_along_adjoint(fz_bar, h_z, -1)
    g_bar = g_bar + _derivs_along_adjoint(ft_bar, h_t, -2)
    return g_bar


def _power_rows(x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape + (4,))
    out[..., 0] = 1.0
    out[..., 1] = x
    out[..., 2] = x * x
    out[..., 3] = out[..., 2] * x
    return out


def _dpower_rows(x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape + (4,))
    out[..., 1] = 1.0
    out[..., 2] = 2.0 * x
    out[..., 3] = 3.0 * x * x
    return out


def _d2power_rows(x: np.ndarray) -> np.ndarray:
    out = np.zeros(x.shape + (4,))
    out[..., 2] = 2.0
    out[..., 3] = 6.0 * x
    return out


def _locate(x: np.ndarray, h: float, knots: int):
    """Cell index and local coordinate for queries; the end knot maps into
    the last cell.  No extrapolation."""
    span = (knots - 1) * h
    tol = 1e-9 * max(span, h)
    if np.any(x < -tol) or np.any(x > span + tol):
        raise DomainError("query coordinate outside the interpolated domain")
    idx = np.clip(np.floor(x / h).astype(int), 0, knots - 2)
    local = x / h - idx
    return idx, local


@dataclass
class SplineSurface:
    """Per-cell bicubic coefficients over [0, (n_t-1) h_t] x [0, (n_z-1) h_z].

    ``coef[i, j]`` is the 4x4 matrix of the cell with lower corner
    (t = i h_t, z = j h_z); complex entries carry both field channels.
    """

    coef: np.ndarray
    h_t: float
    h_z: float
    n_t: int
    n_z: int

    @property
    def t_span(self) -> float:
        return (self.n_t - 1) * self.h_t

    @property
    def z_span(self) -> float:
        return (self.n_z - 1) * self.h_z

    def eval_many(self, z: np.ndarray, t: np.ndarray, counter: MultCounter | None = None):
        """Value, d/dz and d2/dt2 at coordinate arrays (z first, like the
        propagation direction)."""
        z = np.asarray(z, dtype=float)
        t = np.asarray(t, dtype=float)
        if z.shape != t.shape:
            raise ValueError("z and t must have matching shapes")
        it, u = _locate(t, self.h_t, self.n_t)
        iz, w = _locate(z, self.h_z, self.n_z)
        cells = self.coef[it, iz]
        uu = _power_rows(u)
        ww = _power_rows(w)
        right = np.einsum("...ab,...b->...a", cells, ww)
        value = np.einsum("...a,...a->...", uu, right)
        d2_dt2 = np.einsum("...a,...a->...", _d2power_rows(u), right) / self.h_t**2
        d_dz = np.einsum(
            "...a,...a->...", uu, np.einsum("...ab,...b->...a", cells, _dpower_rows(w))
        ) / self.h_z
        if counter is not None:
            counter.add_value_queries(int(z.size))
            counter.add_deriv_queries(int(z.size))
        return value, d_dz, d2_dt2

    def eval(self, z: float, t: float, counter: MultCounter | None = None):
        value, d_dz, d2_dt2 = self.eval_many(
            np.asarray([z], dtype=float), np.asarray([t], dtype=float), counter
        )
        return complex(value[0]), complex(d_dz[0]), complex(d2_dt2[0])


def surface_from_grid(
    values: np.ndarray, h_t: float, h_z: float, counter: MultCounter | None = None
) -> SplineSurface:
    """Build the surface from a raw (n_t, n_z) grid.

    Axes with exactly two knots use the secant-slope fallback, which keeps
    the cells well defined but degenerates the interpolant to linear there.
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("grid must be two-dimensional")
    n_t, n_z = values.shape
    if n_t < 2 or n_z < 2:
        raise InsufficientKnotsError("need at least 2 knots per direction")
    if h_t <= 0 or h_z <= 0:
        raise ValueError("knot spacings must be positive")
    coef = _grid_coefs(values, h_t, h_z)
    if counter is not None:
        counter.add_coeff_build(n_t, n_z)
    return SplineSurface(coef=coef, h_t=h_t, h_z=h_z, n_t=n_t, n_z=n_z)


def build_surface(matrix: SignalMatrix, counter: MultCounter | None = None) -> SplineSurface:
    """Spline surface of a propagation record; needs N >= 3 time knots and
    M >= 2 segments so both directions carry genuine cubics."""
    if matrix.spec.n < 3:
        raise InsufficientKnotsError("need at least 3 time samples")
    if matrix.spec.m < 2:
        raise InsufficientKnotsError(
            "need at least 2 segments (3 distance knots) for the surface"
        )
    return surface_from_grid(
        matrix.grid, h_t=matrix.spec.dt_ps, h_z=matrix.spec.dz_km, counter=counter
    )


def count_query_mults(n_queries: int) -> int:
    """Value-query budget: 52 real multiplications per coordinate."""
    if n_queries < 0:
        raise ValueError("n_queries must be >= 0")
    return 52 * n_queries
