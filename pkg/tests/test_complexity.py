"""Multiplication budgets: closed forms versus instrumented counters."""

from fractions import Fraction

import pytest

from fibertwin.complexity import (
    REFERENCE_OPERATOR_PARAMS,
    comparison_table,
    instrumented_counts,
    pipeline_cost,
)


class TestFormulas:
    def test_query_budget_is_52(self):
        report = pipeline_cost(64, 4, 32, 1)
        assert report.interp_query_mults == 52

    def test_coefficient_budget_example(self):
        report = pipeline_cost(64, 4, 32, 0)
        assert report.interp_coeff_mults == 52 * 64 - 16 + 256 * 3 * 63
        assert report.interp_coeff_mults == 51696

    def test_stepping_budget(self):
        report = pipeline_cost(64, 4, 32, 0)
        assert report.ssfm_mults == 4 * (8 * 64 * 6 + 24 * 64)

    def test_trainable_count_m4(self):
        assert pipeline_cost(64, 4, 32, 0).params_trainable == 8

    def test_per_symbol_exact_rational(self):
        report = pipeline_cost(64, 4, 32, 800)
        assert report.per_symbol == Fraction(report.ssfm_mults + 52, 32)

    def test_non_power_of_two_rejected(self):
        with pytest.raises(ValueError):
            pipeline_cost(48, 4, 32, 0)


class TestInstrumented:
    @pytest.mark.parametrize("m", [2, 4, 10])
    @pytest.mark.parametrize("n", [32, 64, 512])
    def test_integer_equality_with_formulas(self, m, n):
        formula = pipeline_cost(n, m, n, 16)
        counted = instrumented_counts(n, m, n, 16)
        assert counted.ssfm_mults == formula.ssfm_mults
        assert counted.interp_coeff_mults == formula.interp_coeff_mults
        assert counted.interp_query_mults == formula.interp_query_mults
        assert counted.per_symbol == formula.per_symbol

    def test_zero_queries(self):
        counted = instrumented_counts(32, 4, 32, 0)
        assert counted.interp_query_mults == 0

    def test_per_symbol_monotone_in_m(self):
        costs = [float(pipeline_cost(64, m, 32, 0).per_symbol) for m in (2, 4, 10)]
        assert costs[0] < costs[1] < costs[2]

    def test_per_symbol_monotone_in_n_over_nsym(self):
        fixed_sym = 32
        costs = [
            float(pipeline_cost(n, 4, fixed_sym, 0).per_symbol) for n in (32, 64, 512)
        ]
        assert costs[0] < costs[1] < costs[2]


def test_comparison_table_mentions_baselines():
    table = comparison_table(64, 4, 32, 800)
    for name in REFERENCE_OPERATOR_PARAMS:
        assert name in table
    assert "8" in table


def test_report_json_roundtrip():
    import json

    payload = json.loads(pipeline_cost(64, 4, 32, 800).to_json())
    assert payload["params_trainable"] == 8
    assert payload["per_symbol_float"] == pytest.approx(
        float(Fraction(payload["per_symbol"]))
    )
