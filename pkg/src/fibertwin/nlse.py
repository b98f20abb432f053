"""Split-step Fourier integration of the scalar fiber propagation equation.

The field obeys

    ds/dz = -(alpha/2) s - j (beta2/2) d2s/dt2 + j gamma |s|^2 s

with alpha in 1/km, beta2 in ps^2/km, gamma in 1/(W km), t in ps, z in km.
One segment of length dz applies a frequency-domain half step, the Kerr
phase rotation over the full dz, then a second half step (symmetric split,
second-order accurate).  DFTs use the unitary normalization so the
transform pair conserves sum |s|^2 exactly.

Because every phase in the stepping is a dimensionless product
(beta2 * omega^2 * dz, gamma * |s|^2 * dz), the same engine also serves the
dimensionless training frame defined by :class:`Frame`: rescaling (z, t, s)
by (L, T_sym, sqrt(P0)) leaves all step factors unchanged.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .signals import ComplexSignal

__all__ = [
    "NumericOverflowError",
    "FiberParams",
    "TwinParams",
    "GridSpec",
    "SignalMatrix",
    "Frame",
    "angular_frequencies",
    "linear_half_step",
    "nonlinear_step",
    "ssfm_segment",
    "propagate",
    "reference_channel",
    "save_matrix",
    "load_matrix",
]


class NumericOverflowError(FloatingPointError):
    """A propagation step produced non-finite samples."""

    def __init__(self, segment: int):
        super().__init__(f"non-finite field after segment {segment}")
        self.segment = segment


@dataclass(frozen=True)
class FiberParams:
    """Constant parameters of a uniform fiber span."""

    alpha_per_km: float
    beta2_ps2_per_km: float
    gamma_per_w_km: float
    length_km: float

    def __post_init__(self):
        if self.length_km <= 0:
            raise ValueError("length_km must be positive")
        if self.alpha_per_km < 0:
            raise ValueError("alpha_per_km must be >= 0")


@dataclass(frozen=True)
class TwinParams:
    """Per-segment tunable stepping parameters.

    ``alpha`` is carried per segment but held fixed; the trainable set is the
    2M values (beta2_m, gamma_m).
    """

    alpha_per_km: np.ndarray
    beta2_ps2_per_km: np.ndarray
    gamma_per_w_km: np.ndarray
    dz_km: float

    @property
    def m(self) -> int:
        return self.beta2_ps2_per_km.size

    @classmethod
    def uniform(cls, truth: FiberParams, m: int) -> "TwinParams":
        if m < 1:
            raise ValueError("segment count must be >= 1")
        return cls(
            alpha_per_km=np.full(m, truth.alpha_per_km),
            beta2_ps2_per_km=np.full(m, truth.beta2_ps2_per_km),
            gamma_per_w_km=np.full(m, truth.gamma_per_w_km),
            dz_km=truth.length_km / m,
        )


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the (t, z) solution domain."""

    n: int
    dt_ps: float
    m: int
    dz_km: float

    def __post_init__(self):
        if self.n < 2 or (self.n & (self.n - 1)) != 0:
            raise ValueError("n must be a power of two >= 2")
        if self.m < 1 or self.dz_km <= 0 or self.dt_ps <= 0:
            raise ValueError("grid spacings and counts must be positive")

    @property
    def length_km(self) -> float:
        return self.m * self.dz_km

    @property
    def window_ps(self) -> float:
        return self.n * self.dt_ps


@dataclass
class SignalMatrix:
    """N x (M+1) field samples over the (t, z) grid; column m is z = m*dz."""

    grid: np.ndarray
    spec: GridSpec

    def __post_init__(self):
        if self.grid.shape != (self.spec.n, self.spec.m + 1):
            raise ValueError("grid shape does not match the grid spec")

    def column(self, m: int) -> np.ndarray:
        return self.grid[:, m]


@dataclass(frozen=True)
class Frame:
    """Reference scales of the dimensionless training frame.

    Distance is measured in units of the span length, time in symbol
    periods, and the field in sqrt(launch power).  The dimensionless
    dispersion and nonlinearity coefficients are then
    beta2 * L / T_sym^2 and gamma * P0 * L.
    """

    symbol_period_ps: float
    length_km: float
    launch_power_w: float

    def beta2_to_norm(self, beta2_ps2_per_km: float) -> float:
        return beta2_ps2_per_km * self.length_km / self.symbol_period_ps**2

    def beta2_from_norm(self, beta2_norm: float) -> float:
        return beta2_norm * self.symbol_period_ps**2 / self.length_km

    def gamma_to_norm(self, gamma_per_w_km: float) -> float:
        return gamma_per_w_km * self.launch_power_w * self.length_km

    def gamma_from_norm(self, gamma_norm: float) -> float:
        return gamma_norm / (self.launch_power_w * self.length_km)

    def alpha_to_norm(self, alpha_per_km: float) -> float:
        return alpha_per_km * self.length_km


def angular_frequencies(spec: GridSpec) -> np.ndarray:
    """DFT angular frequencies in rad/ps, DC first then positive then negative.

    For even n the Nyquist bin sits at -pi/dt.
    """
    if spec.n < 2:
        raise ValueError("need at least two samples")
    return 2.0 * np.pi * np.fft.fftfreq(spec.n, d=spec.dt_ps)


def _fft(x: np.ndarray) -> np.ndarray:
    return np.fft.fft(x, axis=-1, norm="ortho")


def _ifft(x: np.ndarray) -> np.ndarray:
    return np.fft.ifft(x, axis=-1, norm="ortho")


def _half_factor(omega: np.ndarray, alpha: float, beta2: float, dz: float) -> np.ndarray:
    """Frequency response of half a linear segment, exp((-a/2 + j b2 w^2/2) dz/2)."""
    return np.exp((-0.5 * alpha + 0.5j * beta2 * omega**2) * (0.5 * dz))


def linear_half_step(
    field: np.ndarray, alpha: float, beta2: float, dz_km: float, spec: GridSpec
) -> np.ndarray:
    """Apply dispersion and attenuation over half of ``dz_km``."""
    field = np.asarray(field, dtype=complex)
    if field.shape[-1] != spec.n:
        raise ValueError("field length does not match the grid")
    omega = angular_frequencies(spec)
    return _ifft(_half_factor(omega, alpha, beta2, dz_km) * _fft(field))


def nonlinear_step(field: np.ndarray, gamma: float, dz_km: float) -> np.ndarray:
    """Kerr phase rotation x -> x exp(j gamma dz |x|^2); modulus preserving."""
    field = np.asarray(field, dtype=complex)
    return field * np.exp(1j * gamma * dz_km * (field.real**2 + field.imag**2))


def ssfm_segment(
    field: np.ndarray,
    alpha: float,
    beta2: float,
    gamma: float,
    dz_km: float,
    spec: GridSpec,
) -> np.ndarray:
    """One symmetric split step: half linear, full nonlinear, half linear."""
    out = linear_half_step(field, alpha, beta2, dz_km, spec)
    out = nonlinear_step(out, gamma, dz_km)
    return linear_half_step(out, alpha, beta2, dz_km, spec)


def _ssfm_forward(
    q0: np.ndarray,
    alphas: np.ndarray,
    beta2s: np.ndarray,
    gammas: np.ndarray,
    omega: np.ndarray,
    dz: float,
    keep_tape: bool = False,
):
    """Run all segments on a (..., n) field stack.

    Returns the (..., n, m+1) column stack and, when ``keep_tape`` is set,
    the per-segment intermediates needed by the reverse pass:
    (half factor, spectrum after half 1, field after half 1, Kerr rotation,
    spectrum after half 2).
    """
    m_seg = len(beta2s)
    cols = np.empty(q0.shape + (m_seg + 1,), dtype=complex)
    cols[..., 0] = q0
    tape = []
    cur = q0
    for m in range(m_seg):
        e = _half_factor(omega, alphas[m], beta2s[m], dz)
        a1 = e * _fft(cur)
        q1 = _ifft(a1)
        rot = np.exp(1j * (gammas[m] * dz) * (q1.real**2 + q1.imag**2))
        q2 = q1 * rot
        a3 = e * _fft(q2)
        cur = _ifft(a3)
        cols[..., m + 1] = cur
        if keep_tape:
            tape.append((e, a1, q1, rot, a3))
    return cols, tape


def propagate(
    signal: ComplexSignal,
    twin: TwinParams,
    spec: GridSpec,
    counter=None,
) -> SignalMatrix:
    """Propagate through all twin segments and keep every intermediate column."""
    if signal.n != spec.n:
        raise ValueError("signal length does not match the grid")
    if twin.m != spec.m:
        raise ValueError("twin segment count does not match the grid")
    omega = angular_frequencies(spec)
    cols, _ = _ssfm_forward(
        signal.samples.astype(complex),
        twin.alpha_per_km,
        twin.beta2_ps2_per_km,
        twin.gamma_per_w_km,
        omega,
        spec.dz_km,
    )
    for m in range(1, spec.m + 1):
        if not np.all(np.isfinite(cols[..., m])):
            raise NumericOverflowError(m)
    if counter is not None:
        counter.add_ssfm(spec.n, spec.m)
    return SignalMatrix(grid=cols, spec=spec)


def reference_channel(
    signal: ComplexSignal, truth: FiberParams, m_fine: int
) -> ComplexSignal:
    """Fine-step reference propagation over the full span; no noise added."""
    if m_fine < 1:
        raise ValueError("m_fine must be >= 1")
    spec = GridSpec(
        n=signal.n,
        dt_ps=signal.dt_ps,
        m=m_fine,
        dz_km=truth.length_km / m_fine,
    )
    matrix = propagate(signal, TwinParams.uniform(truth, m_fine), spec)
    return ComplexSignal(samples=matrix.column(m_fine).copy(), dt_ps=signal.dt_ps)


_HEADER = struct.Struct("<IIdd")


def save_matrix(matrix: SignalMatrix, path) -> None:
    """Binary container: header {N, M, dt_ps, dz_km}, then row-major
    interleaved (real, imag) float64 samples."""
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(matrix.spec.n, matrix.spec.m, matrix.spec.dt_ps, matrix.spec.dz_km)
        )
        fh.write(np.ascontiguousarray(matrix.grid, dtype=complex).tobytes())


def load_matrix(path) -> SignalMatrix:
    with open(path, "rb") as fh:
        n, m, dt_ps, dz_km = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype=complex).reshape(n, m + 1)
    return SignalMatrix(grid=data.copy(), spec=GridSpec(n=n, dt_ps=dt_ps, m=m, dz_km=dz_km))
