"""Real-multiplication budgets for the stepping and interpolation stages.

Counts follow a fixed accounting recipe (documented on
:class:`fibertwin.spline.MultCounter`) rather than tracing machine
instructions, so the closed-form budgets and the instrumented counters
agree as integers.  Conventions:

* the stepping budget takes ``m`` as the number of propagation segments
  (8 n log2 n + 24 n per segment);
* the interpolation coefficient budget ``52 n - 16 + 256 (m - 1)(n - 1)``
  takes ``m`` as the number of distance knots of the audited grid, so the
  audit in :func:`instrumented_counts` builds its surface over an
  (n x m)-knot grid with (m - 1)(n - 1) cells;
* the per-symbol figure charges one 52-multiplication value query on top
  of the stepping work, ``(stepping + 52) / n_sym``, kept as an exact
  rational.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .nlse import FiberParams, GridSpec, TwinParams, propagate
from .signals import ComplexSignal
from .spline import MultCounter, surface_from_grid

__all__ = [
    "CostReport",
    "pipeline_cost",
    "instrumented_counts",
    "REFERENCE_OPERATOR_PARAMS",
]

# Published trainable-weight counts of the neural-operator baselines used
# as static reference rows in the comparison table.
REFERENCE_OPERATOR_PARAMS = {
    "neural operator (small)": 400_000,
    "neural operator (large)": 20_000_000,
}


@dataclass(frozen=True)
class CostReport:
    ssfm_mults: int
    interp_coeff_mults: int
    interp_query_mults: int
    per_symbol: Fraction
    params_trainable: int

    def to_dict(self) -> dict:
        return {
            "ssfm_mults": self.ssfm_mults,
            "interp_coeff_mults": self.interp_coeff_mults,
            "interp_query_mults": self.interp_query_mults,
            "per_symbol": str(self.per_symbol),
            "per_symbol_float": float(self.per_symbol),
            "params_trainable": self.params_trainable,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _validate(n: int, m: int, n_sym: int, n_queries: int) -> None:
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError("n must be a power of two >= 2")
    if m < 2:
        raise ValueError("m must be >= 2")
    if n_sym < 1 or n_queries < 0:
        raise ValueError("n_sym must be >= 1 and n_queries >= 0")


def pipeline_cost(n: int, m: int, n_sym: int, n_queries: int) -> CostReport:
    """Closed-form budgets for an n-sample signal, m segments/knots and the
    given query count."""
    _validate(n, m, n_sym, n_queries)
    log2n = int(math.log2(n))
    ssfm = m * (8 * n * log2n + 24 * n)
    coeff = 52 * n - 16 + 256 * (m - 1) * (n - 1)
    return CostReport(
        ssfm_mults=ssfm,
        interp_coeff_mults=coeff,
        interp_query_mults=52 * n_queries,
        per_symbol=Fraction(ssfm + 52, n_sym),
        params_trainable=2 * m,
    )


def instrumented_counts(
    n: int, m: int, n_sym: int, n_queries: int, seed: int = 0
) -> CostReport:
    """Run the instrumented kernels and report their counters.

    The counters must reproduce :func:`pipeline_cost` exactly for the
    counted categories.
    """
    _validate(n, m, n_sym, n_queries)
    rng = np.random.default_rng(seed)
    counter = MultCounter()

    field = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    spec = GridSpec(n=n, dt_ps=1.0, m=m, dz_km=1.0)
    truth = FiberParams(
        alpha_per_km=0.0, beta2_ps2_per_km=-0.1, gamma_per_w_km=0.1, length_km=float(m)
    )
    propagate(ComplexSignal(samples=field, dt_ps=1.0), TwinParams.uniform(truth, m), spec,
              counter=counter)

    grid = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    surface = surface_from_grid(grid, h_t=1.0, h_z=1.0, counter=counter)
    if n_queries > 0:
        z = rng.uniform(0.0, surface.z_span, n_queries)
        t = rng.uniform(0.0, surface.t_span, n_queries)
        surface.eval_many(z, t, counter=counter)

    return CostReport(
        ssfm_mults=counter.ssfm_mults,
        interp_coeff_mults=counter.coeff_mults,
        interp_query_mults=counter.query_mults,
        per_symbol=Fraction(counter.ssfm_mults + 52, n_sym),
        params_trainable=2 * m,
    )


def comparison_table(n: int, m: int, n_sym: int, n_queries: int) -> str:
    """Plain-text cost table with the neural-operator baselines as static
    reference rows; their per-symbol figure is weights / n_sym."""
    own = pipeline_cost(n, m, n_sym, n_queries)
    lines = [
        f"cost report (n={n}, m={m}, n_sym={n_sym}, n_queries={n_queries})",
        "accounting recipe: 8 N log2 N + 24 N per segment; 52 per value query;",
        "52 N - 16 + 256 (M-1)(N-1) per coefficient build (M, N in knots)",
        "",
        f"{'model':<28}{'trainable':>12}{'mults/symbol':>16}",
        f"{'segment-wise twin':<28}{own.params_trainable:>12}{float(own.per_symbol):>16.1f}",
    ]
    for name, weights in REFERENCE_OPERATOR_PARAMS.items():
        per_sym = weights / n_sym
        ratio = per_sym / float(own.per_symbol)
        lines.append(f"{name:<28}{weights:>12}{per_sym:>16.1f}  (x{ratio:.1f})")
    lines += [
        "",
        f"stepping mults: {own.ssfm_mults}",
        f"coefficient mults: {own.interp_coeff_mults}",
        f"query mults: {own.interp_query_mults}",
    ]
    return "\n".join(lines)
