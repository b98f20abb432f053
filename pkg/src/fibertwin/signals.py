"""Transmit waveform synthesis and receiver-side noise injection.

Complex baseband fields are stored in sqrt(W), so sample powers are in W.
Launch powers are configured in dBm (0 dBm = 1 mW).  All randomness flows
through ``numpy.random.default_rng`` seeded streams, so every operation is
bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "InvalidConstellationError",
    "SymbolSequence",
    "ComplexSignal",
    "NoiseConfig",
    "dbm_to_watts",
    "qam_constellation",
    "generate_qam_symbols",
    "rrc_taps",
    "pulse_shape",
    "add_awgn",
    "save_signal",
    "load_signal",
]


class InvalidConstellationError(ValueError):
    """Requested constellation is not a square QAM grid."""


def dbm_to_watts(power_dbm: float) -> float:
    return 10.0 ** (power_dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class SymbolSequence:
    """Random constellation points with unit average constellation power."""

    symbols: np.ndarray
    order: int
    seed: int

    def __len__(self) -> int:
        return self.symbols.size


@dataclass(frozen=True)
class ComplexSignal:
    """Uniformly sampled complex baseband field."""

    samples: np.ndarray
    dt_ps: float

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def window_ps(self) -> float:
        return self.n * self.dt_ps

    @property
    def power_w(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


class NoiseConfig:
    """AWGN strength plus a private noise stream.

    Each :func:`add_awgn` call advances the stream, so repeated calls with the
    same config draw fresh noise while a freshly seeded config reproduces the
    identical sequence of draws.
    """

    def __init__(self, snr_db: float, seed: int = 0):
        self.snr_db = float(snr_db)
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def qam_constellation(order: int) -> np.ndarray:
    """Square QAM constellation scaled to exactly unit average power.

    Points are laid out so that consecutive axis labels follow a Gray code;
    the labeling is irrelevant for estimation but fixed for reproducibility.
    """
    side = math.isqrt(int(order))
    if order < 4 or side * side != order:
        raise InvalidConstellationError(
            f"order {order} is not a perfect square >= 4"
        )
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    # average power of the unscaled grid is 2*(order-1)/3 exactly
    scale = math.sqrt(3.0 / (2.0 * (order - 1)))
    points = np.empty(order, dtype=complex)
    for k in range(order):
        i, q = divmod(k, side)
        points[k] = levels[_gray(i)] + 1j * levels[_gray(q)]
    return points * scale


def generate_qam_symbols(n_sym: int, order: int, seed: int) -> SymbolSequence:
    """Draw ``n_sym`` i.i.d. uniform symbols from the unit-power constellation."""
    if n_sym < 1:
        raise ValueError("n_sym must be >= 1")
    constellation = qam_constellation(order)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, order, size=n_sym)
    return SymbolSequence(symbols=constellation[idx], order=order, seed=seed)


def rrc_taps(rolloff: float, span_symbols: int, oversampling: int) -> np.ndarray:
    """Root-raised-cosine taps, symmetric and normalized to unit energy.

    The two removable singularities of the closed form (tap instant zero and
    |4*rolloff*tau| = 1) are replaced by their analytic limits.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ValueError("rolloff must lie in [0, 1]")
    if span_symbols < 2 or span_symbols % 2 != 0:
        raise ValueError("span_symbols must be a positive even integer")
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")

    n = span_symbols * oversampling + 1
    tau = (np.arange(n) - (n - 1) / 2.0) / oversampling  # symbol units

    if rolloff == 0.0:
        taps = np.sinc(tau)
    else:
        four_bt = 4.0 * rolloff * tau
        with np.errstate(divide="ignore", invalid="ignore"):
            num = np.sin(np.pi * tau * (1.0 - rolloff)) + four_bt * np.cos(
                np.pi * tau * (1.0 + rolloff)
            )
            den = np.pi * tau * (1.0 - four_bt**2)
            taps = num / den
        at_zero = np.isclose(tau, 0.0)
        taps[at_zero] = 1.0 - rolloff + 4.0 * rolloff / np.pi
        at_edge = np.isclose(np.abs(four_bt), 1.0)
        x = np.pi / (4.0 * rolloff)
        taps[at_edge] = (rolloff / math.sqrt(2.0)) * (
            (1.0 + 2.0 / np.pi) * math.sin(x) + (1.0 - 2.0 / np.pi) * math.cos(x)
        )
    return taps / math.sqrt(float(np.sum(taps * taps)))


def pulse_shape(
    symbols: SymbolSequence,
    rolloff: float,
    oversampling: int,
    launch_power_dbm: float,
    span_symbols: int = 16,
    symbol_rate_gbd: float = 14.0,
) -> ComplexSignal:
    """Upsample, shape with a circular RRC filter and set the launch power.

    The convolution is circular because the propagation model assumes a
    periodic time window.  The output average power equals the configured
    launch power exactly (zero input stays zero).
    """
    sym = np.asarray(symbols.symbols, dtype=complex)
    n = sym.size * oversampling
    up = np.zeros(n, dtype=complex)
    up[::oversampling] = sym

    taps = rrc_taps(rolloff, span_symbols, oversampling)
    kernel = np.zeros(n, dtype=float)
    center = (taps.size - 1) // 2
    np.add.at(kernel, (np.arange(taps.size) - center) % n, taps)

    shaped = np.fft.ifft(np.fft.fft(up) * np.fft.fft(kernel))
    power = float(np.mean(np.abs(shaped) ** 2))
    target = dbm_to_watts(launch_power_dbm)
    if power > 0.0:
        shaped *= math.sqrt(target / power)
    dt_ps = 1e3 / (symbol_rate_gbd * oversampling)
    return ComplexSignal(samples=shaped, dt_ps=dt_ps)


def add_awgn(signal: ComplexSignal, cfg: NoiseConfig) -> ComplexSignal:
    """Add circular complex Gaussian noise at the configured SNR.

    The noise power is P0 / 10**(snr_db/10) with P0 the average power of the
    input, split equally between the quadratures.  ``snr_db = inf`` is the
    no-noise sentinel.
    """
    if math.isinf(cfg.snr_db):
        return ComplexSignal(samples=signal.samples.copy(), dt_ps=signal.dt_ps)
    p0 = signal.power_w
    pn = p0 / 10.0 ** (cfg.snr_db / 10.0)
    sigma = math.sqrt(pn / 2.0)
    noise = sigma * (
        cfg.rng.standard_normal(signal.n) + 1j * cfg.rng.standard_normal(signal.n)
    )
    return ComplexSignal(samples=signal.samples + noise, dt_ps=signal.dt_ps)


def save_signal(signal: ComplexSignal, path: str | Path, meta: dict | None = None) -> None:
    """Write samples as CSV (index, real, imag) plus a JSON sidecar."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("index,real,imag\n")
        for k, s in enumerate(signal.samples):
            fh.write(f"{k},{float(s.real)!r},{float(s.imag)!r}\n")
    sidecar = {"dt_ps": signal.dt_ps}
    if meta:
        sidecar.update(meta)
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_signal(path: str | Path) -> tuple[ComplexSignal, dict]:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    data = np.atleast_2d(data)
    samples = data[:, 1] + 1j * data[:, 2]
    meta = json.loads(path.with_suffix(".json").read_text())
    return ComplexSignal(samples=samples, dt_ps=float(meta["dt_ps"])), meta
