"""Pure analysis over persisted evaluation records.

The central quantity is the minimum scaffolding level k for a (task, target)
pair: 0 when the untouched question was answered correctly, the first level
whose variant passed when earlier ones all failed, and -1 when no amount of
scaffolding short of the final step rescued the task.
"""
from __future__ import annotations

import logging
from collections import Counter

import numpy as np
from scipy import stats as scipy_stats

from .records import (
    AblationRow,
    BottleneckRow,
    CombinationRow,
    ControlOutcome,
    EvalOutcome,
    ProbeOutcome,
    ScaffoldProfile,
    SkillAccuracyRow,
    SubTaskChain,
)
from .skills import SkillCatalog

logger = logging.getLogger(__name__)

BUCKET_ONE = "n=1"
BUCKET_TWO = "n=2"
BUCKET_MANY = "n>=3"
BUCKET_INTRACTABLE = "intractable"


class AnalyzeError(Exception):
    pass


def minimum_k(outcome: EvalOutcome) -> int:
    """Minimum scaffolding level; -1 when every available level failed."""
    if outcome.original_correct:
        return 0
    for level, score in enumerate(outcome.variant_scores, start=1):
        if score:
            return level
    if len(outcome.variant_scores) < outcome.n_levels:
        raise AnalyzeError(
            f"outcome {outcome.task_id}/{outcome.target_model} is incomplete: "
            f"{len(outcome.variant_scores)} of {outcome.n_levels} levels evaluated with no pass"
        )
    return -1


def bottleneck(skill_names: list[str], k: int) -> list[str]:
    """Skills of the first k sub-tasks, order preserved, duplicates dropped."""
    if k <= 0:
        return []
    seen: set[str] = set()
    out: list[str] = []
    for name in skill_names[:k]:
        if name not in seen:
            seen.add(name)
            out.append(name)
    return out


def scaffold_profiles(
    outcomes: list[EvalOutcome],
    chains_by_task: dict[str, SubTaskChain],
    catalog: SkillCatalog,
) -> list[ScaffoldProfile]:
    profiles = []
    for outcome in outcomes:
        chain = chains_by_task[outcome.task_id]
        names = [catalog.name_of(s.skill_id) for s in chain.sub_tasks]
        k = minimum_k(outcome)
        profiles.append(
            ScaffoldProfile(
                task_id=outcome.task_id,
                target_model=outcome.target_model,
                k=k,
                bottleneck=bottleneck(names, k),
                combination=names,
            )
        )
    return profiles


def _bucket_of(size: int) -> str:
    if size == 1:
        return BUCKET_ONE
    if size == 2:
        return BUCKET_TWO
    return BUCKET_MANY


def bottleneck_frequencies(
    profiles: list[ScaffoldProfile], top_n: int | None = None
) -> list[BottleneckRow]:
    """Ranked bottleneck counts per target, bucketed by bottleneck size.

    Profiles with k = -1 land in a separate intractable bucket rather than
    being attributed to any skill list; k = 0 profiles have no bottleneck.
    Ties sort by descending count, then alphabetically on the joined names.
    """
    rows: list[BottleneckRow] = []
    for model in sorted({p.target_model for p in profiles}):
        counts: Counter[tuple[str, ...]] = Counter()
        intractable = 0
        for p in profiles:
            if p.target_model != model:
                continue
            if p.k == -1:
                intractable += 1
            elif p.k >= 1:
                counts[tuple(p.bottleneck)] += 1
        per_bucket: dict[str, list[tuple[tuple[str, ...], int]]] = {}
        for skills_key, count in counts.items():
            per_bucket.setdefault(_bucket_of(len(skills_key)), []).append((skills_key, count))
        for bucket in (BUCKET_ONE, BUCKET_TWO, BUCKET_MANY):
            ranked = sorted(
                per_bucket.get(bucket, []), key=lambda item: (-item[1], " + ".join(item[0]))
            )
            if top_n is not None:
                ranked = ranked[:top_n]
            for rank, (skills_key, count) in enumerate(ranked, start=1):
                rows.append(
                    BottleneckRow(
                        target_model=model,
                        bucket=bucket,
                        skills=list(skills_key),
                        count=count,
                        rank=rank,
                    )
                )
        rows.append(
            BottleneckRow(
                target_model=model,
                bucket=BUCKET_INTRACTABLE,
                skills=[],
                count=intractable,
                rank=1,
            )
        )
    return rows


def combination_report(
    profiles: list[ScaffoldProfile], min_group: int = 10
) -> list[CombinationRow]:
    """Scaffolding statistics grouped by the full, uncollapsed skill sequence.

    mean_k_positive averages k over rescued tasks only (k > 0); the variant
    including k = 0 successes is emitted alongside as mean_k_nonneg. Groups
    smaller than min_group are suppressed.
    """
    groups: dict[tuple[str, tuple[str, ...]], list[ScaffoldProfile]] = {}
    for p in profiles:
        groups.setdefault((p.target_model, tuple(p.combination)), []).append(p)
    rows: list[CombinationRow] = []
    for (model, combo), members in groups.items():
        n = len(members)
        if n < min_group:
            continue
        ks = [p.k for p in members]
        n_zero = sum(1 for k in ks if k == 0)
        n_pos = sum(1 for k in ks if k > 0)
        n_neg = sum(1 for k in ks if k == -1)
        positive = [k for k in ks if k > 0]
        nonneg = [k for k in ks if k >= 0]
        rows.append(
            CombinationRow(
                combination=list(combo),
                target_model=model,
                n_tasks=n,
                pct_k0=100.0 * n_zero / n,
                pct_kpos=100.0 * n_pos / n,
                pct_intractable=100.0 * n_neg / n,
                mean_k_positive=(sum(positive) / len(positive)) if positive else None,
                mean_k_nonneg=(sum(nonneg) / len(nonneg)) if nonneg else None,
            )
        )
    rows.sort(key=lambda r: (r.target_model, -r.n_tasks, " + ".join(r.combination)))
    return rows


def skill_accuracy(
    probes: list[ProbeOutcome], catalog: SkillCatalog
) -> list[SkillAccuracyRow]:
    """Standalone per-skill accuracy from the single-step probe outcomes."""
    grouped: dict[tuple[str, str], list[bool]] = {}
    for probe in probes:
        key = (catalog.name_of(probe.skill_id), probe.target_model)
        grouped.setdefault(key, []).append(probe.correct)
    rows = []
    for (skill_name, model), verdicts in grouped.items():
        n = len(verdicts)
        n_correct = sum(verdicts)
        rows.append(
            SkillAccuracyRow(
                skill_name=skill_name,
                target_model=model,
                n_probes=n,
                n_correct=n_correct,
                accuracy_pct=100.0 * n_correct / n,
            )
        )
    rows.sort(key=lambda r: (-r.n_probes, r.skill_name, r.target_model))
    return rows


def nonmonotone_count(outcomes: list[EvalOutcome]) -> int:
    """How many full score sequences go right then wrong at a higher level."""
    count = 0
    for outcome in outcomes:
        scores = outcome.variant_scores
        if any(scores[i] and not scores[j] for i in range(len(scores)) for j in range(i + 1, len(scores))):
            count += 1
    return count


def ablation_rows(
    profiles: list[ScaffoldProfile],
    outcomes: list[EvalOutcome],
    control_outcomes: list[ControlOutcome],
) -> list[AblationRow]:
    """Compare scaffolded success against placeholder controls per target.

    The comparison set is every (task, target) rescued by scaffolding
    (k >= 1). Baseline and scaffolded rates are recomputed from records
    rather than assumed.
    """
    outcome_by_key = {(o.task_id, o.target_model): o for o in outcomes}
    control_by_key = {
        (c.task_id, c.target_model, c.level): c.correct for c in control_outcomes
    }
    rows = []
    for model in sorted({p.target_model for p in profiles}):
        rescued = [p for p in profiles if p.target_model == model and p.k >= 1]
        if not rescued:
            continue
        n = len(rescued)
        baseline = sum(
            1 for p in rescued if outcome_by_key[(p.task_id, model)].original_correct
        )
        scaffolded = sum(
            1
            for p in rescued
            if outcome_by_key[(p.task_id, model)].variant_scores[p.k - 1]
        )
        with_controls = [p for p in rescued if (p.task_id, model, p.k) in control_by_key]
        control = sum(1 for p in with_controls if control_by_key[(p.task_id, model, p.k)])
        rows.append(
            AblationRow(
                target_model=model,
                n_tasks=n,
                baseline_pct=100.0 * baseline / n,
                scaffolded_pct=100.0 * scaffolded / n,
                control_pct=100.0 * control / len(with_controls) if with_controls else 0.0,
            )
        )
    return rows


def pearson(x, y) -> tuple[float, float]:
    """Pearson r with a two-sided p-value.

    Byte-identical inputs short-circuit to r = 1 so comparing a distribution
    with itself is well defined even when it is constant.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise AnalyzeError("pearson needs two equal-length vectors")
    if len(xa) < 2:
        raise AnalyzeError("pearson needs at least two points")
    if np.array_equal(xa, ya):
        return 1.0, 0.0
    if np.ptp(xa) == 0 or np.ptp(ya) == 0:
        raise AnalyzeError("pearson is undefined for constant input")
    r, p = scipy_stats.pearsonr(xa, ya)
    return float(r), float(p)


def subset_proportions(labels: np.ndarray, mask: np.ndarray, n_clusters: int) -> np.ndarray:
    """Fraction of the masked subset falling in each cluster."""
    subset = np.asarray(labels)[np.asarray(mask)]
    if len(subset) == 0:
        raise AnalyzeError("empty subset has no cluster distribution")
    counts = np.bincount(subset, minlength=n_clusters).astype(float)
    return counts / len(subset)


def validation_cluster_count(n_questions: int, requested: int = 40) -> tuple[int, bool]:
    """Cluster count for filtering validation; small corpora scale down."""
    if n_questions >= requested * 5:
        return requested, False
    reduced = max(2, n_questions // 5)
    logger.warning(
        "only %d questions; reducing validation clusters from %d to %d",
        n_questions,
        requested,
        reduced,
    )
    return reduced, True
