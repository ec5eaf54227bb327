"""Wilson intervals, chi-square, one-way ANOVA, and Pearson correlation
against hand-computed sums and an independent mpmath tail-probability oracle.
"""

from __future__ import annotations

import math

import mpmath
import pytest

from mcp_sentinel.errors import (
    DegenerateInput,
    InsufficientGroups,
    InvalidCounts,
    ZeroExpectedCell,
)
from mcp_sentinel.stats import anova_one_way, chi_square, pearson_r, wilson_interval


class TestWilson:
    def test_zero_successes_lower_bound_exact_zero(self):
        low, high = wilson_interval(0, 10)
        assert low == 0.0
        assert 0.0 < high < 1.0

    def test_all_successes_upper_bound_exact_one(self):
        low, high = wilson_interval(10, 10)
        assert high == 1.0
        assert 0.0 < low < 1.0

    def test_sixty_of_hundred_reference_value(self):
        low, high = wilson_interval(60, 100, z=1.96)
        assert low == pytest.approx(0.502, abs=1e-3)
        assert high == pytest.approx(0.691, abs=1e-3)

    def test_interval_brackets_point_estimate(self):
        for k, n in [(0, 5), (3, 7), (50, 60), (999, 1000)]:
            low, high = wilson_interval(k, n)
            assert low <= k / n <= high

    def test_width_shrinks_with_n(self):
        widths = []
        for n in (10, 100, 1000):
            k = int(0.3 * n)
            low, high = wilson_interval(k, n)
            widths.append(high - low)
        assert widths[0] > widths[1] > widths[2]

    @pytest.mark.parametrize("k,n", [(-1, 10), (11, 10), (0, 0)])
    def test_invalid_counts(self, k, n):
        with pytest.raises(InvalidCounts):
            wilson_interval(k, n)


def _chi2_sf_oracle(x: float, df: int) -> float:
    # Regularized upper incomplete gamma, independent of scipy.
    return float(mpmath.gammainc(df / 2, x / 2, mpmath.inf, regularized=True))


def _f_sf_oracle(x: float, d1: int, d2: int) -> float:
    # Upper tail via the regularized incomplete beta function.
    arg = d1 * x / (d1 * x + d2)
    return float(1 - mpmath.betainc(d1 / 2, d2 / 2, 0, arg, regularized=True))


class TestChiSquare:
    def test_reference_table(self):
        # Expected counts are (40, 60, 40, 60); the chi-square sum is
        # 2.5 + 5/3 + 2.5 + 5/3 = 8.3333...
        result = chi_square([[30, 70], [50, 50]])
        assert result.statistic == pytest.approx(8.3333, abs=1e-3)
        assert result.df == 1
        assert result.cramers_v == pytest.approx(math.sqrt(8.3333333 / 200), abs=1e-3)
        assert result.cramers_v == pytest.approx(0.204, abs=1e-3)
        assert result.p_value == pytest.approx(_chi2_sf_oracle(result.statistic, 1), abs=1e-9)

    def test_proportional_table_is_null(self):
        result = chi_square([[20, 30], [40, 60]])
        assert result.statistic == pytest.approx(0.0, abs=1e-12)
        assert result.p_value == pytest.approx(1.0)

    def test_zero_marginal_rejected(self):
        with pytest.raises(ZeroExpectedCell):
            chi_square([[0, 0], [10, 20]])

    def test_larger_table_df(self):
        result = chi_square([[10, 20, 30], [15, 25, 20], [20, 15, 25]])
        assert result.df == 4

    def test_p_values_match_published_quantiles(self):
        # Classic table quantiles: chi2(1).95=3.841459, chi2(2).95=5.991465,
        # chi2(1).99=6.634897, chi2(5).95=11.070498, chi2(10).99=23.209251
        spots = [
            (3.8414588206941236, 1, 0.05),
            (5.991464547107979, 2, 0.05),
            (6.6348966010212145, 1, 0.01),
            (11.070497693516351, 5, 0.05),
            (23.209251158954356, 10, 0.01),
        ]
        from scipy.stats import chi2 as scipy_chi2

        for x, df, table_p in spots:
            assert _chi2_sf_oracle(x, df) == pytest.approx(table_p, abs=1e-9)
            assert float(scipy_chi2.sf(x, df)) == pytest.approx(
                _chi2_sf_oracle(x, df), abs=1e-10
            )


class TestAnova:
    def test_shifted_groups_reference(self):
        # Group means 2, 3, 4; SS_between = 6, SS_within = 6, df = (2, 6).
        result = anova_one_way([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
        assert result.f_statistic == pytest.approx(3.0, abs=1e-9)
        assert result.eta_squared == pytest.approx(0.5, abs=1e-9)
        assert result.df_between == 2
        assert result.df_within == 6
        assert result.p_value == pytest.approx(_f_sf_oracle(3.0, 2, 6), abs=1e-9)

    def test_identical_constant_groups_zero_convention(self):
        result = anova_one_way([[2.0, 2.0], [2.0, 2.0]])
        assert result.f_statistic == 0.0
        assert result.eta_squared == 0.0
        assert result.p_value == 1.0

    def test_separated_constant_groups_infinite_f(self):
        result = anova_one_way([[1.0, 1.0], [2.0, 2.0]])
        assert result.f_statistic == math.inf
        assert result.eta_squared == 1.0
        assert result.p_value == 0.0

    def test_single_group_rejected(self):
        with pytest.raises(InsufficientGroups):
            anova_one_way([[1, 2, 3]])

    def test_tiny_group_rejected(self):
        with pytest.raises(InsufficientGroups):
            anova_one_way([[1, 2], [5]])

    def test_f_p_values_match_oracle_at_spot_points(self):
        from scipy.stats import f as scipy_f

        # F quantiles: F(2,6).95=5.1433, F(1,10).95=4.9646, F(3,20).99=4.9382
        spots = [(5.143253, 2, 6, 0.05), (4.964603, 1, 10, 0.05), (4.938193, 3, 20, 0.01)]
        for x, d1, d2, table_p in spots:
            assert _f_sf_oracle(x, d1, d2) == pytest.approx(table_p, abs=1e-6)
            assert float(scipy_f.sf(x, d1, d2)) == pytest.approx(
                _f_sf_oracle(x, d1, d2), abs=1e-10
            )


class TestPearson:
    def test_perfect_positive(self):
        r, p = pearson_r([1, 2, 3, 4], [1, 2, 3, 4])
        assert r == pytest.approx(1.0)
        assert p == 0.0

    def test_perfect_negative(self):
        r, p = pearson_r([1, 2, 3, 4], [4, 3, 2, 1])
        assert r == pytest.approx(-1.0)
        assert p == 0.0

    def test_hand_computed_point_eight(self):
        # cov = 4, var_x = var_y = 5 -> r = 4/5.
        r, p = pearson_r([1, 2, 3, 4], [1, 3, 2, 4])
        assert r == pytest.approx(0.8)
        assert 0.0 < p < 1.0

    def test_p_value_matches_t_distribution(self):
        from scipy.stats import t as scipy_t

        r, p = pearson_r([1, 2, 3, 4], [1, 3, 2, 4])
        n = 4
        t = r * math.sqrt((n - 2) / (1 - r * r))
        assert p == pytest.approx(2 * float(scipy_t.sf(t, n - 2)), abs=1e-12)

    @pytest.mark.parametrize(
        "x,y",
        [
            ([1, 2], [1, 2]),
            ([1, 2, 3], [1, 2]),
            ([1, 1, 1], [1, 2, 3]),
        ],
    )
    def test_degenerate_inputs(self, x, y):
        with pytest.raises(DegenerateInput):
            pearson_r(x, y)
