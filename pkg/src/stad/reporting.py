"""Render analysis records as aligned text, CSV, or Markdown tables.

Output is a pure function of the records: stable ordering, fixed float
formatting, no timestamps, so identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .records import (
    AblationRow,
    BottleneckRow,
    CombinationRow,
    DecompositionQuality,
    FilteringValidation,
    FilterReport,
    GranularityStats,
    SkillAccuracyRow,
)

FORMATS = ("table", "csv", "markdown")


@dataclass
class Table:
    name: str
    title: str
    headers: list[str]
    rows: list[list[str]]


def _num(value, digits: int = 2) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def combination_table(rows: list[CombinationRow]) -> Table:
    """Combination groups as row blocks, largest groups first, one row per model."""
    ordered = sorted(rows, key=lambda r: (-r.n_tasks, " + ".join(r.combination), r.target_model))
    out = [
        [
            " + ".join(r.combination),
            str(r.n_tasks),
            r.target_model,
            _num(r.mean_k_positive),
            _num(r.pct_k0),
            _num(r.pct_kpos),
            _num(r.pct_intractable),
        ]
        for r in ordered
    ]
    return Table(
        name="combination",
        title="Scaffolding by skill combination",
        headers=["skill combination", "tasks", "model", "mean k (k>0)", "% k=0", "% k>0", "% intractable"],
        rows=out,
    )


_BUCKET_ORDER = {"n=1": 0, "n=2": 1, "n>=3": 2, "intractable": 3}


def bottleneck_table(rows: list[BottleneckRow]) -> Table:
    """Size buckets as row blocks, one count column per target model."""
    models = sorted({r.target_model for r in rows})
    counts: dict[tuple[str, tuple[str, ...]], dict[str, int]] = {}
    for r in rows:
        counts.setdefault((r.bucket, tuple(r.skills)), {})[r.target_model] = r.count
    ordered = sorted(
        counts,
        key=lambda key: (
            _BUCKET_ORDER.get(key[0], len(_BUCKET_ORDER)),
            -max(counts[key].values()),
            " + ".join(key[1]),
        ),
    )
    out = []
    for bucket, skills in ordered:
        per_model = counts[(bucket, skills)]
        row = [bucket, " + ".join(skills) if skills else "(all levels failed)"]
        row.extend(str(per_model[m]) if m in per_model else "-" for m in models)
        out.append(row)
    return Table(
        name="bottlenecks",
        title="Bottleneck skill combinations by size",
        headers=["bucket", "skills", *models],
        rows=out,
    )


def skill_accuracy_table(rows: list[SkillAccuracyRow]) -> Table:
    """Skills as rows, models as columns, most probed skills first."""
    models = sorted({r.target_model for r in rows})
    by_skill: dict[str, dict[str, SkillAccuracyRow]] = {}
    totals: dict[str, int] = {}
    for r in rows:
        by_skill.setdefault(r.skill_name, {})[r.target_model] = r
        totals[r.skill_name] = totals.get(r.skill_name, 0) + r.n_probes
    ordered = sorted(by_skill, key=lambda s: (-totals[s], s))
    out = []
    for skill in ordered:
        row = [skill, str(totals[skill])]
        for model in models:
            cell = by_skill[skill].get(model)
            row.append(_num(cell.accuracy_pct) if cell else "-")
        out.append(row)
    return Table(
        name="skill_accuracy",
        title="Individual skill accuracy (standalone probes)",
        headers=["skill", "probes", *models],
        rows=out,
    )


def granularity_table(rows: list[GranularityStats]) -> Table:
    out = [
        [
            str(r.m_clusters),
            str(r.n_skills),
            _num(r.entropy_nats, 4),
            _num(r.normalized_entropy, 4),
            _num(100.0 * r.other_rate),
            _num(r.mean_pairwise_cosine, 3),
            _num(r.pct_pairs_above_threshold, 1),
        ]
        for r in rows
    ]
    return Table(
        name="granularity",
        title="Skill catalog granularity sweep",
        headers=["m", "n", "entropy (nats)", "normalized", "% other", "mean cosine", "% pairs >= thr"],
        rows=out,
    )


def filter_table(report: FilterReport) -> Table:
    rows = [["tasks in", str(report.n_before)], ["tasks retained", str(report.n_after)]]
    if report.final_inconsistent:
        rows.append(["dropped earlier (final answer inconsistent)", str(report.final_inconsistent)])
    for level, count in report.level_failures.items():
        rows.append([f"failed checks at level {level}", str(count)])
    return Table(
        name="filter",
        title="Verification filter",
        headers=["measure", "value"],
        rows=rows,
    )


def ablation_table(rows: list[AblationRow]) -> Table:
    out = [
        [
            r.target_model,
            str(r.n_tasks),
            _num(r.baseline_pct),
            _num(r.scaffolded_pct),
            _num(r.control_pct),
        ]
        for r in rows
    ]
    return Table(
        name="ablation",
        title="Scaffolded answers vs placeholder controls (rescued tasks)",
        headers=["model", "tasks", "baseline %", "scaffolded %", "control %"],
        rows=out,
    )


def validation_table(v: FilteringValidation) -> Table:
    rows = [
        ["questions before filtering", str(v.n_before)],
        ["questions after filtering", str(v.n_after)],
        ["accuracy before (%)", _num(v.acc_before_pct)],
        ["accuracy after (%)", _num(v.acc_after_pct)],
        ["topic clusters", str(v.n_clusters) + (" (reduced)" if v.clusters_reduced else "")],
        ["distribution correlation r", _num(v.pearson_r, 4)],
        ["two-sided p", f"{v.p_value:.3g}"],
    ]
    return Table(
        name="filtering_validation",
        title="Difficulty filtering validation",
        headers=["measure", "value"],
        rows=rows,
    )


def quality_table(q: DecompositionQuality) -> Table:
    rows = [
        ["chains", str(q.n_chains)],
        ["redundancy (%)", _num(q.redundancy_pct)],
        ["coverage (%)", _num(q.coverage_pct)],
    ]
    return Table(
        name="decomposition_quality",
        title="Decomposition quality",
        headers=["measure", "value"],
        rows=rows,
    )


def render_text(table: Table) -> str:
    widths = [len(h) for h in table.headers]
    for row in table.rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [table.title]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(table.headers)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in table.rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.headers)
    writer.writerows(table.rows)
    return buf.getvalue()


def render_markdown(table: Table) -> str:
    lines = [f"### {table.title}", ""]
    lines.append("| " + " | ".join(table.headers) + " |")
    lines.append("| " + " | ".join("---" for _ in table.headers) + " |")
    for row in table.rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def render(table: Table, fmt: str) -> str:
    if fmt == "table":
        return render_text(table)
    if fmt == "csv":
        return render_csv(table)
    if fmt == "markdown":
        return render_markdown(table)
    raise ValueError(f"unknown report format {fmt!r}; pick one of {FORMATS}")


def extension(fmt: str) -> str:
    return {"table": "txt", "csv": "csv", "markdown": "md"}[fmt]
