"""Training losses: output mismatch, propagation-equation residual, weighting.

The residual is evaluated in the dimensionless frame (see
:class:`fibertwin.nlse.Frame`): a surface handed to :func:`physics_loss`
must be built over the normalized (zeta, tau) grid, which
:func:`normalized_surface` produces from a propagation record.  The two
constant residual parameters are stored as order-one raw variables times
fixed positive scales, so one optimizer step size suits every trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .nlse import Frame, SignalMatrix
from .spline import MultCounter, SplineSurface, surface_from_grid

__all__ = [
    "ResidualParams",
    "CoordinateSet",
    "LossWeights",
    "default_scales",
    "normalized_surface",
    "nlse_residual",
    "physics_loss",
    "observation_loss",
    "total_loss",
    "update_weights",
]

# Standard single-mode fiber constants near 1550 nm; used only to size the
# raw-variable scales and as configuration defaults.
NOMINAL_BETA2_PS2_PER_KM = -21.67
NOMINAL_GAMMA_PER_W_KM = 1.27

# The optimizer takes near-constant-size steps per raw coordinate, so the
# iteration budget bounds the raw-space distance it can cover, not the
# gradient magnitude.  Widening the scales by this factor parks nominal
# parameter values a short raw distance from the zero/unit-normal
# initializations while keeping raw variables order one.
RAW_SCALE_CONDITIONING = 5.0


def default_scales(
    frame: Frame,
    beta2_nominal: float = NOMINAL_BETA2_PS2_PER_KM,
    gamma_nominal: float = NOMINAL_GAMMA_PER_W_KM,
    conditioning: float = RAW_SCALE_CONDITIONING,
) -> tuple[float, float]:
    """Positive scales keeping the raw dispersion/nonlinearity variables O(1)."""
    return (
        abs(frame.beta2_to_norm(beta2_nominal)) * conditioning,
        abs(frame.gamma_to_norm(gamma_nominal)) * conditioning,
    )


@dataclass(frozen=True)
class ResidualParams:
    """Constant fiber parameters entering the residual.

    The values used in the residual are the dimensionless products
    raw * scale; physical-unit views are derived through the frame.
    Attenuation is carried but frozen at zero (not estimated).
    """

    raw_beta2: float
    raw_gamma: float
    scale_beta2: float
    scale_gamma: float
    frame: Frame
    alpha_per_km: float = 0.0

    def __post_init__(self):
        if self.scale_beta2 <= 0 or self.scale_gamma <= 0:
            raise ValueError("scales must be strictly positive")

    @property
    def beta2_norm(self) -> float:
        return self.raw_beta2 * self.scale_beta2

    @property
    def gamma_norm(self) -> float:
        return self.raw_gamma * self.scale_gamma

    @property
    def alpha_norm(self) -> float:
        return self.frame.alpha_to_norm(self.alpha_per_km)

    @property
    def beta2_ps2_per_km(self) -> float:
        return self.frame.beta2_from_norm(self.beta2_norm)

    @property
    def gamma_per_w_km(self) -> float:
        return self.frame.gamma_from_norm(self.gamma_norm)

    def with_raw(self, raw_beta2: float, raw_gamma: float) -> "ResidualParams":
        return replace(self, raw_beta2=raw_beta2, raw_gamma=raw_gamma)


@dataclass(frozen=True)
class CoordinateSet:
    """Sample coordinates in physical units (z in km, t in ps)."""

    z_km: np.ndarray
    t_ps: np.ndarray

    def __post_init__(self):
        if self.z_km.shape != self.t_ps.shape or self.z_km.ndim != 1:
            raise ValueError("z and t must be matching one-dimensional arrays")

    def __len__(self) -> int:
        return self.z_km.size

    def normalized(self, frame: Frame) -> tuple[np.ndarray, np.ndarray]:
        return self.z_km / frame.length_km, self.t_ps / frame.symbol_period_ps

    @classmethod
    def from_normalized(cls, zeta: np.ndarray, tau: np.ndarray, frame: Frame) -> "CoordinateSet":
        return cls(
            z_km=np.asarray(zeta) * frame.length_km,
            t_ps=np.asarray(tau) * frame.symbol_period_ps,
        )


@dataclass(frozen=True)
class LossWeights:
    """Positive weights of the output and residual losses, summing to 2."""

    lambda_io: float
    lambda_p: float

    def __post_init__(self):
        if not (math.isfinite(self.lambda_io) and math.isfinite(self.lambda_p)):
            raise ValueError("weights must be finite")


def normalized_surface(
    matrix: SignalMatrix, frame: Frame, counter: MultCounter | None = None
) -> SplineSurface:
    """Spline surface of a propagation record in the dimensionless frame."""
    if matrix.spec.n < 3:
        raise ValueError("need at least 3 time samples")
    if matrix.spec.m < 2:
        raise ValueError("need at least 2 segments for the residual surface")
    values = matrix.grid / math.sqrt(frame.launch_power_w)
    return surface_from_grid(
        values,
        h_t=matrix.spec.dt_ps / frame.symbol_period_ps,
        h_z=matrix.spec.dz_km / frame.length_km,
        counter=counter,
    )


def nlse_residual(value, d_dz, d2_dt2, params: ResidualParams):
    """Residual of the propagation equation at one or more points.

    All inputs are dimensionless-frame quantities; a perfect solution with
    matching parameters gives zero.
    """
    value = np.asarray(value, dtype=complex)
    power = value.real**2 + value.imag**2
    return (
        np.asarray(d_dz, dtype=complex)
        + 0.5 * params.alpha_norm * value
        + 0.5j * params.beta2_norm * np.asarray(d2_dt2, dtype=complex)
        - 1j * params.gamma_norm * power * value
    )


def physics_loss(
    surface: SplineSurface,
    coords: CoordinateSet,
    params: ResidualParams,
    norm: str = "l1",
) -> float:
    """Mean residual magnitude (l1) or squared magnitude (l2) over the
    coordinate set; the surface must live in the dimensionless frame."""
    if len(coords) == 0:
        raise ValueError("coordinate set must be non-empty")
    zeta, tau = coords.normalized(params.frame)
    value, d_dz, d2_dt2 = surface.eval_many(zeta, tau)
    r = nlse_residual(value, d_dz, d2_dt2, params)
    mag = np.abs(r)
    if norm == "l1":
        return float(np.mean(mag))
    if norm == "l2":
        return float(np.mean(mag**2))
    raise ValueError(f"unknown residual norm {norm!r}")


def observation_loss(predicted, reference) -> float:
    """Mean squared sample error, averaged over the batch for stacked inputs."""
    predicted = np.asarray(predicted)
    reference = np.asarray(reference)
    if predicted.shape != reference.shape:
        raise ValueError("predicted and reference shapes differ")
    diff = predicted - reference
    return float(np.mean(diff.real**2 + diff.imag**2))


def total_loss(l_io: float, l_p: float, weights: LossWeights) -> float:
    return weights.lambda_io * l_io + weights.lambda_p * l_p


def update_weights(
    current: LossWeights,
    grad_norm_io: float,
    grad_norm_p: float,
    ema: float = 0.1,
) -> LossWeights:
    """Inverse-gradient-norm balancing, blended with an exponential moving
    average and renormalized so the weights keep summing to 2.

    A vanishing norm on either side leaves the weights unchanged.
    """
    if grad_norm_io < 0 or grad_norm_p < 0:
        raise ValueError("gradient norms must be >= 0")
    if grad_norm_io == 0.0 or grad_norm_p == 0.0:
        return current
    total = grad_norm_io + grad_norm_p
    t_io = total / grad_norm_io
    t_p = total / grad_norm_p
    lam_io = 2.0 * t_io / (t_io + t_p)
    lam_p = 2.0 * t_p / (t_io + t_p)
    new_io = (1.0 - ema) * current.lambda_io + ema * lam_io
    new_p = (1.0 - ema) * current.lambda_p + ema * lam_p
    # renormalize so roundoff cannot drift the sum away from 2
    s = (new_io + new_p) / 2.0
    return LossWeights(lambda_io=new_io / s, lambda_p=new_p / s)
