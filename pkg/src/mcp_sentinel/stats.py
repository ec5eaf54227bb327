"""Statistical primitives for the evaluation reports: Wilson score intervals,
Pearson chi-square with Cramer's V, one-way ANOVA with eta-squared, and
Pearson correlation.

Sums and effect sizes are computed directly from their textbook formulas;
only the tail probabilities come from scipy's survival functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import stats as _scipy_stats

from .errors import (
    DegenerateInput,
    InsufficientGroups,
    InvalidCounts,
    ZeroExpectedCell,
)

Z_95 = 1.96


def wilson_interval(successes: int, n: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion.

    Exact at the boundaries: k=0 gives a lower bound of 0 and k=n an upper
    bound of 1. Both bounds always bracket the point estimate k/n.
    """
    if n < 1 or not (0 <= successes <= n):
        raise InvalidCounts(f"need 0 <= successes <= n and n >= 1, got k={successes}, n={n}")
    p_hat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p_hat + z2 / (2 * n)) / denom
    half = z * math.sqrt(p_hat * (1 - p_hat) / n + z2 / (4 * n * n)) / denom
    low = max(0.0, center - half)
    high = min(1.0, center + half)
    if successes == 0:
        low = 0.0
    if successes == n:
        high = 1.0
    return low, high


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    df: int
    p_value: float
    cramers_v: float


def chi_square(table: list[list[float]] | tuple[tuple[float, ...], ...]) -> ChiSquareResult:
    """Pearson chi-square over a 2-D contingency table, without continuity
    correction, plus Cramer's V effect size.
    """
    rows = [list(map(float, row)) for row in table]
    if len(rows) < 2 or any(len(row) != len(rows[0]) for row in rows) or len(rows[0]) < 2:
        raise ZeroExpectedCell("table must be rectangular with at least 2x2 cells")
    n_rows, n_cols = len(rows), len(rows[0])
    row_totals = [sum(row) for row in rows]
    col_totals = [sum(rows[i][j] for i in range(n_rows)) for j in range(n_cols)]
    total = sum(row_totals)
    if total <= 0:
        raise ZeroExpectedCell("table total is zero")
    statistic = 0.0
    for i in range(n_rows):
        for j in range(n_cols):
            expected = row_totals[i] * col_totals[j] / total
            if expected <= 0:
                raise ZeroExpectedCell(f"expected count for cell ({i},{j}) is zero")
            statistic += (rows[i][j] - expected) ** 2 / expected
    df = (n_rows - 1) * (n_cols - 1)
    p_value = float(_scipy_stats.chi2.sf(statistic, df))
    cramers_v = math.sqrt(statistic / (total * min(n_rows - 1, n_cols - 1)))
    return ChiSquareResult(statistic=statistic, df=df, p_value=p_value, cramers_v=cramers_v)


@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    df_between: int
    df_within: int
    p_value: float
    eta_squared: float


def anova_one_way(groups: list[list[float]] | tuple[tuple[float, ...], ...]) -> AnovaResult:
    """One-way fixed-effects ANOVA with eta-squared.

    Degenerate conventions: zero total variance yields F=0, eta^2=0, p=1;
    zero within-group variance with real between-group spread yields F=inf,
    p=0, eta^2=1.
    """
    samples = [list(map(float, g)) for g in groups]
    if len(samples) < 2 or any(len(g) < 2 for g in samples):
        raise InsufficientGroups("need >= 2 groups with >= 2 samples each")
    n_total = sum(len(g) for g in samples)
    grand_mean = sum(sum(g) for g in samples) / n_total
    ss_between = sum(len(g) * (sum(g) / len(g) - grand_mean) ** 2 for g in samples)
    ss_within = sum(sum((x - sum(g) / len(g)) ** 2 for x in g) for g in samples)
    ss_total = ss_between + ss_within
    df_between = len(samples) - 1
    df_within = n_total - len(samples)
    if ss_total == 0.0:
        return AnovaResult(0.0, df_between, df_within, 1.0, 0.0)
    if ss_within == 0.0:
        return AnovaResult(math.inf, df_between, df_within, 0.0, 1.0)
    f_statistic = (ss_between / df_between) / (ss_within / df_within)
    p_value = float(_scipy_stats.f.sf(f_statistic, df_between, df_within))
    return AnovaResult(
        f_statistic=f_statistic,
        df_between=df_between,
        df_within=df_within,
        p_value=p_value,
        eta_squared=ss_between / ss_total,
    )


def pearson_r(x: list[float] | tuple[float, ...], y: list[float] | tuple[float, ...]) -> tuple[float, float]:
    """Pearson product-moment correlation with a two-sided t-test p-value."""
    if len(x) != len(y) or len(x) < 3:
        raise DegenerateInput(f"need equal-length samples of size >= 3, got {len(x)} and {len(y)}")
    n = len(x)
    mean_x = sum(x) / n
    mean_y = sum(y) / n
    cov = sum((a - mean_x) * (b - mean_y) for a, b in zip(x, y))
    var_x = sum((a - mean_x) ** 2 for a in x)
    var_y = sum((b - mean_y) ** 2 for b in y)
    if var_x == 0.0 or var_y == 0.0:
        raise DegenerateInput("zero variance in at least one sample")
    r = cov / math.sqrt(var_x * var_y)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p_value = 2.0 * float(_scipy_stats.t.sf(abs(t), n - 2))
    return r, p_value
