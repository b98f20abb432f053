"""Shared analytic oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest


def dispersed_gaussian(t, z, t0: float, beta2: float):
    """Closed-form dispersion-only evolution of exp(-t^2 / (2 t0^2)).

    Returns the field and its analytic d/dz and d2/dt2 at (z, t), valid for
    the equation s_z = -j (beta2 / 2) s_tt.
    """
    t = np.asarray(t, dtype=float)
    q = t0**2 - 1j * beta2 * z
    s = t0 / np.sqrt(q) * np.exp(-(t**2) / (2.0 * q))
    qp = -1j * beta2
    d_dz = s * qp * (t**2 - q) / (2.0 * q**2)
    d2_dt2 = s * (t**2 / q**2 - 1.0 / q)
    return s, d_dz, d2_dt2


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
