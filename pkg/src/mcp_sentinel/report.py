"""Report rendering: machine-readable JSON and aligned text tables shaped as
scenario-by-model and strategy-by-model matrices, plus the significance tests
run over the trial corpus.
"""

from __future__ import annotations

import json

from .errors import SentinelError
from .harness import (
    CompositeWeights,
    MetricsReport,
    TrialRecord,
    compute_rates,
    latency_descriptives,
    summarize,
)
from .stats import anova_one_way, chi_square, pearson_r


def _fmt(value: float | None, digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _matrix_text(
    title: str,
    rows: list[str],
    cols: list[str],
    cells: dict[tuple[str, str], str],
    row_header: str,
) -> str:
    widths = [max(len(row_header), *(len(r) for r in rows))] if rows else [len(row_header)]
    for col in cols:
        widths.append(max(len(col), *(len(cells.get((r, col), "-")) for r in rows), 1))
    lines = [title]
    header = [row_header.ljust(widths[0])]
    header += [col.rjust(widths[i + 1]) for i, col in enumerate(cols)]
    lines.append("  ".join(header))
    lines.append("-" * (sum(widths) + 2 * len(widths)))
    for row in rows:
        parts = [row.ljust(widths[0])]
        parts += [cells.get((row, col), "-").rjust(widths[i + 1]) for i, col in enumerate(cols)]
        lines.append("  ".join(parts))
    return "\n".join(lines)


def _scenario_block_value(report: MetricsReport) -> float | None:
    # Attack groups carry a block rate; the benign group's analogue is its
    # false-positive share. Rendered in one matrix, like for like.
    if report.block_rate is not None:
        return report.block_rate.value
    if report.false_positive is not None:
        return report.false_positive.value
    return None


def block_rate_matrix(trials: list[TrialRecord]) -> str:
    """Scenario-by-model matrix of block shares."""
    reports = compute_rates(trials, group_by=("scenario", "model"))
    rows = sorted({r.key_dict()["scenario"] for r in reports})
    cols = sorted({r.key_dict()["model"] for r in reports})
    cells = {}
    for report in reports:
        key = report.key_dict()
        cells[(key["scenario"], key["model"])] = _fmt(_scenario_block_value(report))
    return _matrix_text("Block rate per scenario and model", rows, cols, cells, "scenario")


def latency_matrix(trials: list[TrialRecord]) -> str:
    """Strategy-by-model matrix of latency mean +/- sd in seconds."""
    stats = latency_descriptives(trials, group_by=("strategy", "model"))
    rows = sorted({dict(k)["strategy"] for k in stats})
    cols = sorted({dict(k)["model"] for k in stats})
    cells = {}
    for key, stat in stats.items():
        kd = dict(key)
        sd = f" +/- {stat.sd:.2f}" if stat.sd is not None else ""
        cells[(kd["strategy"], kd["model"])] = f"{stat.mean:.2f}{sd}"
    return _matrix_text(
        "Latency (mean +/- sd, seconds) per strategy and model", rows, cols, cells, "strategy"
    )


def composites_table(reports: list[MetricsReport]) -> str:
    lines = ["Composite indices per group"]
    labels = [",".join(f"{k}={v}" for k, v in r.keys) for r in reports]
    width = max(len("group"), *(len(l) for l in labels)) if labels else len("group")
    header = (
        f"{'group':{width}}  {'n':>5}  {'rho':>6}  {'eps':>6}  {'iota':>6}  "
        f"{'B':>6}  {'F':>6}  {'R_sys':>7}  {'R_MCP':>7}  {'E(d)':>7}  {'R(p)':>7}"
    )
    lines.append(header)
    lines.append("-" * len(header))
    for report, group in zip(reports, labels):
        lines.append(
            f"{group:{width}}  {report.n_trials:>5}  "
            f"{_fmt(report.rho.value if report.rho else None):>6}  "
            f"{_fmt(report.epsilon.value if report.epsilon else None):>6}  "
            f"{_fmt(report.iota.value if report.iota else None):>6}  "
            f"{_fmt(report.block_rate.value if report.block_rate else None):>6}  "
            f"{_fmt(report.false_positive.value if report.false_positive else None):>6}  "
            f"{_fmt(report.r_sys):>7}  {_fmt(report.r_mcp):>7}  "
            f"{_fmt(report.defense_effectiveness):>7}  {_fmt(report.prompt_risk):>7}"
        )
    return "\n".join(lines)


def statistical_tests(trials: list[TrialRecord]) -> dict:
    """Significance tests over the corpus: unsafe-invocation chi-square by
    model and by scenario (with Cramer's V), one-way latency ANOVA across
    models (with eta-squared), and the latency-vs-blocking correlation.

    Degenerate corpora (single model, zero margins) report None for the
    affected test instead of failing the whole report.
    """

    def unsafe_table(field) -> list[list[int]] | None:
        levels = sorted({field(r) for r in trials})
        if len(levels) < 2:
            return None
        table = []
        for level in levels:
            members = [r for r in trials if field(r) == level]
            unsafe = sum(1 for r in members if r.unsafe)
            table.append([unsafe, len(members) - unsafe])
        return table

    results: dict[str, dict | None] = {}
    for name, field in (
        ("unsafe_by_model", lambda r: r.model_id),
        ("unsafe_by_scenario", lambda r: r.scenario.value),
    ):
        table = unsafe_table(field)
        try:
            result = chi_square(table) if table else None
        except SentinelError:
            result = None
        results[name] = (
            {
                "chi2": result.statistic,
                "df": result.df,
                "p_value": result.p_value,
                "cramers_v": result.cramers_v,
            }
            if result
            else None
        )

    models = sorted({r.model_id for r in trials})
    groups = [
        [r.latency_total for r in trials if r.model_id == m] for m in models
    ]
    try:
        anova = anova_one_way(groups)
        results["latency_anova_by_model"] = {
            "f": anova.f_statistic,
            "df_between": anova.df_between,
            "df_within": anova.df_within,
            "p_value": anova.p_value,
            "eta_squared": anova.eta_squared,
        }
    except SentinelError:
        results["latency_anova_by_model"] = None

    try:
        r, p = pearson_r(
            [t.latency_total for t in trials], [float(t.blocked) for t in trials]
        )
        results["latency_block_correlation"] = {"r": r, "p_value": p}
    except SentinelError:
        results["latency_block_correlation"] = None
    return results


def _statistics_text(tests: dict) -> str:
    lines = ["Statistical tests"]
    chi_model = tests.get("unsafe_by_model")
    if chi_model:
        lines.append(
            f"  unsafe ~ model:     chi2={chi_model['chi2']:.3f} df={chi_model['df']} "
            f"p={chi_model['p_value']:.4g} V={chi_model['cramers_v']:.3f}"
        )
    chi_scenario = tests.get("unsafe_by_scenario")
    if chi_scenario:
        lines.append(
            f"  unsafe ~ scenario:  chi2={chi_scenario['chi2']:.3f} df={chi_scenario['df']} "
            f"p={chi_scenario['p_value']:.4g} V={chi_scenario['cramers_v']:.3f}"
        )
    anova = tests.get("latency_anova_by_model")
    if anova:
        lines.append(
            f"  latency ~ model:    F={anova['f']:.3f} "
            f"df=({anova['df_between']},{anova['df_within']}) "
            f"p={anova['p_value']:.4g} eta2={anova['eta_squared']:.3f}"
        )
    corr = tests.get("latency_block_correlation")
    if corr:
        lines.append(
            f"  latency vs blocked: r={corr['r']:.3f} p={corr['p_value']:.4g}"
        )
    if len(lines) == 1:
        lines.append("  (corpus too degenerate for significance tests)")
    return "\n".join(lines)


def render_report_json(
    trials: list[TrialRecord],
    group_by: tuple[str, ...],
    weights: CompositeWeights,
) -> str:
    reports = summarize(trials, group_by, weights)
    payload = {
        "groups": [r.to_dict() for r in reports],
        "statistics": statistical_tests(trials),
    }
    return json.dumps(payload, indent=2)


def render_report_text(
    trials: list[TrialRecord],
    group_by: tuple[str, ...],
    weights: CompositeWeights,
) -> str:
    reports = summarize(trials, group_by, weights)
    sections = [
        block_rate_matrix(trials),
        "",
        latency_matrix(trials),
        "",
        composites_table(reports),
        "",
        _statistics_text(statistical_tests(trials)),
    ]
    return "\n".join(sections)
