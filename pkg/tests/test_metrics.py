"""Tests for portfolio series handling and the four performance metrics.

The fixture series [0.01, -0.02, 0.015, 0.005] is small enough to verify
by hand; its metric values below were frozen from that calculation.
"""

import numpy as np
import pytest

from hopfolio.data import ReturnMatrix
from hopfolio.errors import DataError, DegenerateSeriesError
from hopfolio.metrics import (MetricsReport, PortfolioSeries, annual_mean,
                              average_drawdown, check_simplex, compute_report,
                              portfolio_returns, sharpe_ratio, sortino_ratio)

FIXTURE = np.array([0.01, -0.02, 0.015, 0.005])
FIXTURE_SHARPE = 2.5528888301902892
FIXTURE_SORTINO = 3.968626966596885
FIXTURE_MEAN_ANNUAL = 0.6299999999999999
FIXTURE_AVG_DD = 0.006197211875140579


class TestPortfolioSeries:
    def test_accepts_one_dimensional_finite(self):
        s = PortfolioSeries(FIXTURE, dates=["a", "b", "c", "d"])
        assert len(s) == 4

    def test_rejects_matrix(self):
        with pytest.raises(DataError, match="one-dimensional"):
            PortfolioSeries(np.ones((2, 2)))

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError, match="non-finite"):
            PortfolioSeries([0.1, np.nan])

    def test_rejects_misaligned_dates(self):
        with pytest.raises(DataError, match="dates"):
            PortfolioSeries([0.1, 0.2], dates=["only-one"])


class TestSharpe:
    def test_fixture_value(self):
        np.testing.assert_allclose(sharpe_ratio(FIXTURE), FIXTURE_SHARPE,
                                   atol=1e-12)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            v = rng.normal(0.0005, 0.01, size=rng.integers(5, 200))
            expect = np.sqrt(252) * v.mean() / v.std(ddof=1)
            np.testing.assert_allclose(sharpe_ratio(v), expect, atol=1e-12)

    def test_risk_free_is_deannualized(self):
        got = sharpe_ratio(FIXTURE, risk_free=0.0252)
        np.testing.assert_allclose(got, 2.450773276982678, atol=1e-12)

    def test_zero_variance_is_degenerate(self):
        # constant chosen exactly representable so the std is exactly zero
        with pytest.raises(DegenerateSeriesError, match="zero variance"):
            sharpe_ratio(np.full(10, 0.25))

    def test_needs_two_observations(self):
        with pytest.raises(DegenerateSeriesError, match="at least 2"):
            sharpe_ratio(np.array([0.01]))

    def test_scaling_invariance(self):
        # Sharpe is invariant under positive scaling of the series
        rng = np.random.default_rng(1)
        v = rng.normal(0.001, 0.02, size=100)
        np.testing.assert_allclose(sharpe_ratio(v), sharpe_ratio(v * 7.5),
                                   atol=1e-10)


class TestSortino:
    def test_fixture_value(self):
        np.testing.assert_allclose(sortino_ratio(FIXTURE), FIXTURE_SORTINO,
                                   atol=1e-12)

    def test_downside_counts_all_observations(self):
        # denominator is the RMS of clipped returns over the full length
        v = np.array([0.02, -0.01, 0.03, -0.02])
        sigma_d = np.sqrt((0.01**2 + 0.02**2) / 4.0)
        expect = np.sqrt(252) * v.mean() / sigma_d
        np.testing.assert_allclose(sortino_ratio(v), expect, atol=1e-12)

    def test_all_nonnegative_is_undefined(self):
        with pytest.raises(DegenerateSeriesError, match="no negative returns"):
            sortino_ratio(np.array([0.01, 0.0, 0.02]))

    def test_empty_series(self):
        with pytest.raises(DegenerateSeriesError, match="empty"):
            sortino_ratio(np.array([]))


class TestDrawdown:
    def test_fixture_value(self):
        np.testing.assert_allclose(average_drawdown(FIXTURE), FIXTURE_AVG_DD,
                                   atol=1e-12)

    def test_monotone_growth_has_zero_drawdown(self):
        assert average_drawdown(np.full(20, 0.001)) == 0.0

    def test_half_loss_hand_case(self):
        # wealth path [2, 1]: at the second step we sit 50% below the peak
        v = np.array([np.log(2.0), np.log(0.5)])
        np.testing.assert_allclose(average_drawdown(v), 0.25, atol=1e-12)

    def test_drawdown_in_unit_interval(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            v = rng.normal(0.0, 0.05, size=rng.integers(2, 300))
            dd = average_drawdown(v)
            assert 0.0 <= dd < 1.0


class TestAnnualMean:
    def test_fixture_value(self):
        np.testing.assert_allclose(annual_mean(FIXTURE), FIXTURE_MEAN_ANNUAL,
                                   atol=1e-15)

    def test_custom_period_count(self):
        np.testing.assert_allclose(annual_mean(FIXTURE, periods=12),
                                   12 * FIXTURE.mean(), atol=1e-15)


class TestSimplexCheck:
    def test_passes_valid_weights(self):
        w = check_simplex(np.array([0.25, 0.25, 0.5]))
        np.testing.assert_array_equal(w, [0.25, 0.25, 0.5])

    def test_tolerates_rounding_noise(self):
        check_simplex(np.array([0.5 + 4e-7, 0.5 - 6e-7]))

    def test_rejects_negative_weight(self):
        with pytest.raises(DataError, match="negative weight"):
            check_simplex(np.array([1.1, -0.1]))

    def test_rejects_bad_sum(self):
        with pytest.raises(DataError, match="sum"):
            check_simplex(np.array([0.6, 0.6]))

    def test_rejects_matrix(self):
        with pytest.raises(DataError, match="one-dimensional"):
            check_simplex(np.ones((2, 2)) / 4.0)


class TestPortfolioReturns:
    def test_hand_dot_product(self):
        w = np.array([0.75, 0.25])
        r = np.array([[0.04, -0.04], [0.0, 0.08]])
        s = portfolio_returns(w, r)
        np.testing.assert_allclose(s.values, [0.02, 0.02], atol=1e-15)

    def test_return_matrix_passes_dates_through(self):
        rm = ReturnMatrix(["2020-01-02", "2020-01-03"], ["A", "B"],
                          np.array([[0.01, 0.02], [0.03, 0.04]]))
        s = portfolio_returns(np.array([0.5, 0.5]), rm)
        assert s.dates == rm.dates

    def test_dimension_mismatch(self):
        with pytest.raises(DataError, match="does not match"):
            portfolio_returns(np.array([0.5, 0.5]), np.ones((3, 3)) * 0.01)


class TestReport:
    def test_fields_match_individual_metrics(self):
        s = PortfolioSeries(FIXTURE)
        rep = compute_report(s)
        np.testing.assert_allclose(rep.mean_annual, FIXTURE_MEAN_ANNUAL)
        np.testing.assert_allclose(rep.sharpe_annual, FIXTURE_SHARPE)
        np.testing.assert_allclose(rep.sortino_annual, FIXTURE_SORTINO)
        np.testing.assert_allclose(rep.avg_drawdown, FIXTURE_AVG_DD)

    def test_serialization_round_trip(self):
        import json
        rep = MetricsReport(0.1, 1.5, 2.5, 0.05)
        doc = json.loads(rep.to_json())
        assert doc == {"mean_annual": 0.1, "sharpe_annual": 1.5,
                       "sortino_annual": 2.5, "avg_drawdown": 0.05}
        assert list(rep.to_dict()) == ["mean_annual", "sharpe_annual",
                                       "sortino_annual", "avg_drawdown"]
