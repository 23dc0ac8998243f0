"""Stage orchestration: wiring the corpus, teacher, and targets into a run.

A run directory accumulates one record file per stage plus a manifest.
Stages that the manifest already marks done are skipped on re-entry, so a
run can be resumed (or extended with the diagnostic flows) without redoing
model calls beyond what the response cache already absorbs.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .analyze import (
    ablation_rows,
    bottleneck_frequencies,
    combination_report,
    nonmonotone_count,
    pearson,
    scaffold_profiles,
    skill_accuracy,
    subset_proportions,
    validation_cluster_count,
)
from .config import ConfigError, RoleConfig, RunConfig
from .corpus import ingest
from .decompose import DecomposeError, answer_sub_tasks, coverage, decompose_task, redundancy
from .evaluate import eval_controls, eval_original, eval_probes, eval_scaffolded
from .gateway import ModelGateway, pmap
from .judging import extract_answer, judge_verdict
from .prompts import TemplateSet
from .records import (
    STAGE_ORDER,
    STATUS_DONE,
    STATUS_FAILED,
    AblationRow,
    BottleneckRow,
    CombinationRow,
    ControlOutcome,
    ControlVariant,
    DecompositionQuality,
    EvalOutcome,
    FilteringValidation,
    FilterReport,
    GranularityStats,
    ProbeOutcome,
    RunDir,
    ScaffoldedVariant,
    ScaffoldProfile,
    Skill,
    SkillAccuracyRow,
    StageMissingError,
    SubTask,
    SubTaskChain,
    Task,
    file_sha256,
    read_records,
)
from .reporting import (
    Table,
    ablation_table,
    bottleneck_table,
    combination_table,
    extension,
    filter_table,
    granularity_table,
    quality_table,
    render,
    skill_accuracy_table,
    validation_table,
)
from .scaffold import ScaffoldError, make_placeholder_control, make_variants, verify_and_filter
from .simulator import SimBackend, SimulatorError, SyntheticWorld
from .skills import (
    SkillCatalog,
    assign_skills,
    cluster,
    cluster_text,
    embed_texts,
    granularity_stats,
    induce_skills,
    representative_block,
    representatives,
)
from .synthetic import TruthChain

logger = logging.getLogger(__name__)


class StageError(Exception):
    """A pipeline stage failed or was invoked before its dependencies."""


def load_catalog(run: RunDir) -> SkillCatalog:
    """Rebuild the skill catalog from its stage file and header meta."""
    skills = run.load("catalog", Skill)
    meta = run.load_meta("catalog", Skill)
    return SkillCatalog(
        skills=skills,
        other_id=meta["other_id"],
        m_clusters=meta["m_clusters"],
        n_skills=meta["n_skills"],
    )


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.run = RunDir(cfg.run_dir)
        self.templates = TemplateSet(cfg.templates_dir or None)
        self.workers = max(1, cfg.gateway.max_in_flight)
        self.gateway = self._build_gateway()

    # -- wiring ---------------------------------------------------------

    def _build_gateway(self) -> ModelGateway:
        cfg = self.cfg
        roles = [cfg.teacher, cfg.judge, cfg.embed] + [t.config for t in cfg.targets]
        sim_backend = None
        if any(r.is_sim for r in roles):
            world = None
            if cfg.corpus.truth_path:
                truths = read_records(Path(cfg.corpus.truth_path), TruthChain)
                tasks, _ = ingest(
                    cfg.corpus.path,
                    field_map=cfg.corpus.field_map,
                    source=cfg.corpus.source,
                    answer_normalizer=cfg.corpus.answer_normalizer,
                )
                try:
                    world = SyntheticWorld(tasks, truths)
                except SimulatorError as exc:
                    raise ConfigError(
                        f"corpus does not match corpus.truth_path ({exc}); "
                        "if the corpus rows carry their own ids, map them with "
                        "field_map: {id: id}"
                    ) from exc
            needs_world = cfg.teacher.is_sim or any(t.config.is_sim for t in cfg.targets)
            if world is None and needs_world:
                raise ConfigError(
                    "sim teacher/target endpoints need corpus.truth_path "
                    "pointing at the generated truth chains"
                )
            sim_backend = SimBackend.from_config(world, cfg.sim_profiles())
        gw = cfg.gateway
        return ModelGateway(
            self.run.cache_dir,
            sim_backend=sim_backend,
            max_retries=gw.max_retries,
            backoff_base=gw.backoff_base,
            max_in_flight=gw.max_in_flight,
            timeout=gw.timeout,
        )

    def init_run(self) -> None:
        corpus = Path(self.cfg.corpus.path)
        corpus_hash = file_sha256(corpus) if corpus.exists() else ""
        self.run.init_manifest(
            run_id=self.run.root.name or "run",
            corpus_hash=corpus_hash,
            role_configs=self.cfg.role_summary(),
        )

    def ensure(self, stage: str) -> None:
        manifest = self.run.load_manifest()
        if manifest.status_of(stage) != STATUS_DONE:
            raise StageError(f"stage {stage!r} has not completed in {self.run.root}")

    # -- stage driver ---------------------------------------------------

    def run_stage(self, stage: str, force: bool = False) -> int:
        if stage not in STAGE_ORDER:
            raise StageError(f"unknown stage {stage!r}; expected one of {STAGE_ORDER}")
        self.init_run()
        manifest = self.run.load_manifest()
        if not force and manifest.status_of(stage) == STATUS_DONE:
            count = manifest.count_of(stage) or 0
            logger.info("stage %s already done (%d records); skipping", stage, count)
            return count
        fn = getattr(self, f"_stage_{stage}")
        try:
            count = fn()
        except StageError:
            self.run.mark_stage(stage, STATUS_FAILED)
            raise
        except Exception as exc:
            self.run.mark_stage(stage, STATUS_FAILED)
            raise StageError(f"stage {stage} failed: {exc}") from exc
        self.run.mark_stage(stage, STATUS_DONE, count)
        logger.info("stage %s done: %d records", stage, count)
        return count

    def run_all(self, upto: str | None = None, force: bool = False) -> dict[str, int]:
        stages = STAGE_ORDER
        if upto is not None:
            if upto not in STAGE_ORDER:
                raise StageError(f"unknown stage {upto!r}")
            stages = STAGE_ORDER[: STAGE_ORDER.index(upto) + 1]
        return {stage: self.run_stage(stage, force=force) for stage in stages}

    # -- shared loaders -------------------------------------------------

    def _tasks_by_id(self) -> dict[str, Task]:
        return {t.id: t for t in self.run.load("ingest", Task)}

    def _retained_ids(self) -> list[str]:
        return self.run.load_meta("verify", ScaffoldedVariant).get("retained", [])

    def _retained_chains(self, stage: str = "skills") -> list[SubTaskChain]:
        return self.run.load(stage, SubTaskChain)

    def _consistent_chains(self) -> list[SubTaskChain]:
        return [
            c for c in self.run.load("answer", SubTaskChain) if c.teacher_final_consistent
        ]

    def _variants_by_task(self, task_ids: set[str] | None = None) -> dict[str, list[ScaffoldedVariant]]:
        grouped: dict[str, list[ScaffoldedVariant]] = {}
        for v in self.run.load("verify", ScaffoldedVariant):
            if task_ids is None or v.task_id in task_ids:
                grouped.setdefault(v.task_id, []).append(v)
        return grouped

    def _target_configs(self) -> list[RoleConfig]:
        if not self.cfg.targets:
            raise StageError("no target models configured")
        return [t.config for t in self.cfg.targets]

    # -- stages ---------------------------------------------------------

    def _stage_ingest(self) -> int:
        cfg = self.cfg.corpus
        tasks, report = ingest(
            cfg.path,
            field_map=cfg.field_map,
            source=cfg.source,
            answer_normalizer=cfg.answer_normalizer,
        )
        meta = {
            "n_read": report.n_read,
            "n_skipped": report.n_skipped,
            "errors": report.errors[:20],
        }
        return self.run.persist("ingest", Task, tasks, meta=meta)

    def _stage_decompose(self) -> int:
        self.ensure("ingest")
        tasks = self.run.load("ingest", Task)

        def work(task: Task) -> SubTaskChain | None:
            try:
                descriptions = decompose_task(
                    self.gateway, self.cfg.teacher, self.templates, task, self.cfg.max_segments
                )
            except DecomposeError as exc:
                logger.warning("dropping task: %s", exc)
                return None
            subs = [SubTask(index=i, description=d) for i, d in enumerate(descriptions, start=1)]
            return SubTaskChain(task_id=task.id, sub_tasks=subs)

        results = pmap(work, tasks, self.workers)
        chains = [c for c in results if c is not None]
        meta = {"n_failed": len(results) - len(chains)}
        return self.run.persist("decompose", SubTaskChain, chains, meta=meta)

    def _stage_answer(self) -> int:
        self.ensure("decompose")
        tasks_by_id = self._tasks_by_id()
        skeletons = self.run.load("decompose", SubTaskChain)

        def work(skeleton: SubTaskChain) -> SubTaskChain | None:
            task = tasks_by_id[skeleton.task_id]
            descriptions = [s.description for s in skeleton.sub_tasks]
            try:
                return answer_sub_tasks(
                    self.gateway, self.cfg.teacher, self.cfg.judge, self.templates,
                    task, descriptions,
                )
            except DecomposeError as exc:
                logger.warning("dropping task: %s", exc)
                return None

        results = pmap(work, skeletons, self.workers)
        chains = [c for c in results if c is not None]
        n_inconsistent = sum(1 for c in chains if not c.teacher_final_consistent)
        meta = {"n_failed": len(results) - len(chains), "n_inconsistent": n_inconsistent}
        count = self.run.persist("answer", SubTaskChain, chains, meta=meta)

        quality = DecompositionQuality(
            n_chains=len(chains),
            redundancy_pct=redundancy(chains),
            coverage_pct=coverage(
                self.gateway, self.cfg.teacher, self.cfg.judge, self.templates,
                chains, tasks_by_id,
            )[0],
        )
        self.run.persist("quality", DecompositionQuality, [quality])
        return count

    def _stage_scaffold(self) -> int:
        self.ensure("answer")
        tasks_by_id = self._tasks_by_id()
        chains = self.run.load("answer", SubTaskChain)
        usable = [c for c in chains if c.teacher_final_consistent]

        def work(chain: SubTaskChain) -> list[ScaffoldedVariant] | None:
            try:
                return make_variants(
                    self.gateway, self.cfg.teacher, self.templates,
                    tasks_by_id[chain.task_id], chain,
                )
            except ScaffoldError as exc:
                logger.warning("dropping task: %s", exc)
                return None

        results = pmap(work, usable, self.workers)
        variants = [v for group in results if group is not None for v in group]
        meta = {
            "n_tasks_in": len(usable),
            "n_failed": sum(1 for g in results if g is None),
            "n_inconsistent_dropped": len(chains) - len(usable),
        }
        return self.run.persist("scaffold", ScaffoldedVariant, variants, meta=meta)

    def _stage_verify(self) -> int:
        self.ensure("scaffold")
        tasks_by_id = self._tasks_by_id()
        grouped: dict[str, list[ScaffoldedVariant]] = {}
        for v in self.run.load("scaffold", ScaffoldedVariant):
            grouped.setdefault(v.task_id, []).append(v)
        retained, verified, report = verify_and_filter(
            self.gateway, self.cfg.teacher, self.cfg.judge, self.templates,
            tasks_by_id, grouped,
        )
        report.final_inconsistent = self.run.load_meta("answer", SubTaskChain).get(
            "n_inconsistent", 0
        )
        count = self.run.persist(
            "verify", ScaffoldedVariant, verified, meta={"retained": retained}
        )
        self.run.persist("filter", FilterReport, [report])
        return count

    def _stage_skills(self) -> int:
        self.ensure("verify")
        tasks_by_id = self._tasks_by_id()
        chains_by_task = {c.task_id: c for c in self._consistent_chains()}
        retained = self._retained_ids()
        chains = [chains_by_task[tid] for tid in retained]
        if not chains:
            raise StageError("no tasks survived verification; nothing to cluster")

        texts = [cluster_text(tasks_by_id[c.task_id], c) for c in chains]
        emb = embed_texts(self.gateway, self.cfg.embed, texts)
        m_requested = self.cfg.skills.m_clusters
        m = min(m_requested, len(chains))
        if m < m_requested:
            logger.warning(
                "only %d questions retained; clustering into %d groups instead of %d",
                len(chains), m, m_requested,
            )
        labels = cluster(emb, m, linkage=self.cfg.skills.linkage)
        reps = representatives(emb, labels)
        blocks = [
            representative_block(tasks_by_id[chains[reps[label]].task_id], chains[reps[label]])
            for label in sorted(reps)
        ]
        catalog = induce_skills(
            self.gateway, self.cfg.teacher, self.templates,
            blocks, self.cfg.skills.n_skills, self.cfg.skills.category, m,
        )

        def work(chain: SubTaskChain) -> list[int]:
            return assign_skills(
                self.gateway, self.cfg.teacher, self.templates, catalog,
                tasks_by_id[chain.task_id], chain,
            )

        assignments = pmap(work, chains, self.workers)
        for chain, ids in zip(chains, assignments):
            for sub, sid in zip(chain.sub_tasks, ids):
                sub.skill_id = sid

        self.run.persist(
            "catalog", Skill, catalog.skills,
            meta={
                "other_id": catalog.other_id,
                "m_clusters": m,
                "m_requested": m_requested,
                "n_skills": catalog.n_skills,
            },
        )
        count = self.run.persist("skills", SubTaskChain, chains)

        assigned = [s.skill_id for c in chains for s in c.sub_tasks]
        desc_texts = [f"{s.name}: {s.description}" for s in catalog.skills]
        desc_emb = embed_texts(self.gateway, self.cfg.embed, desc_texts)
        stats = granularity_stats(
            assigned, catalog, desc_emb.vectors, self.cfg.skills.similarity_threshold
        )
        self.run.persist("granularity", GranularityStats, [stats])
        return count

    def _stage_eval(self) -> int:
        self.ensure("skills")
        targets = self._target_configs()
        tasks_by_id = self._tasks_by_id()
        chains = self._retained_chains()
        chains_by_task = {c.task_id: c for c in chains}
        tasks = [tasks_by_id[c.task_id] for c in chains]
        variants_by_task = self._variants_by_task(set(chains_by_task))
        extraction = self.cfg.corpus.extraction

        outcomes = eval_original(
            self.gateway, self.cfg.judge, self.templates, targets,
            tasks, chains_by_task, extraction, self.workers,
        )
        outcomes = eval_scaffolded(
            self.gateway, self.cfg.judge, self.templates, targets,
            tasks_by_id, variants_by_task, outcomes, extraction,
            self.cfg.eval.eval_all_levels, self.workers,
        )
        count = self.run.persist(
            "eval", EvalOutcome, outcomes,
            meta={"eval_all_levels": self.cfg.eval.eval_all_levels},
        )
        if self.cfg.eval.individual_skills:
            probes = eval_probes(
                self.gateway, self.cfg.judge, self.templates, targets,
                tasks_by_id, chains, extraction, self.workers,
            )
            self.run.persist("probes", ProbeOutcome, probes)
        return count

    def _stage_analyze(self) -> int:
        self.ensure("eval")
        catalog = load_catalog(self.run)
        chains_by_task = {c.task_id: c for c in self._retained_chains()}
        outcomes = self.run.load("eval", EvalOutcome)

        profiles = scaffold_profiles(outcomes, chains_by_task, catalog)
        # The stage's own record file holds the per-(task, target) profiles;
        # the derived tables live in their own files below.
        self.run.persist(
            "analyze", ScaffoldProfile, profiles,
            meta={"nonmonotone": nonmonotone_count(outcomes)},
        )
        self.run.persist(
            "bottlenecks", BottleneckRow,
            bottleneck_frequencies(profiles, top_n=self.cfg.analyze.top_n),
        )
        self.run.persist(
            "combination", CombinationRow,
            combination_report(profiles, min_group=self.cfg.analyze.min_group),
        )
        try:
            probes = self.run.load("probes", ProbeOutcome)
        except StageMissingError:
            probes = []
        if probes:
            self.run.persist(
                "skill_accuracy", SkillAccuracyRow, skill_accuracy(probes, catalog)
            )
        self.write_reports()
        return len(profiles)

    # -- diagnostic flows -------------------------------------------------

    def run_ablation(self) -> list[AblationRow]:
        """Re-evaluate rescued tasks with every injected value masked out."""
        self.init_run()
        self.ensure("analyze")
        profiles = self.run.load("analyze", ScaffoldProfile)
        variant_at = {
            (v.task_id, v.level): v for v in self.run.load("verify", ScaffoldedVariant)
        }

        needed: list[tuple[str, int]] = []
        seen: set[tuple[str, int]] = set()
        for p in profiles:
            if p.k >= 1 and (p.task_id, p.k) not in seen:
                seen.add((p.task_id, p.k))
                needed.append((p.task_id, p.k))
        controls: list[ControlVariant] = []
        n_unalignable = 0
        for key in needed:
            control = make_placeholder_control(variant_at[key])
            if control is None:
                n_unalignable += 1
            else:
                controls.append(control)
        self.run.persist(
            "controls", ControlVariant, controls, meta={"n_unalignable": n_unalignable}
        )

        control_outcomes = eval_controls(
            self.gateway, self.cfg.judge, self.templates, self._target_configs(),
            self._tasks_by_id(), controls, self.cfg.corpus.extraction, self.workers,
        )
        self.run.persist("control_eval", ControlOutcome, control_outcomes)

        rows = ablation_rows(profiles, self.run.load("eval", EvalOutcome), control_outcomes)
        self.run.persist("ablation", AblationRow, rows)
        self.write_reports()
        return rows

    def run_validation(self) -> FilteringValidation:
        """Compare difficulty and topic mix of the corpus before and after filtering."""
        self.init_run()
        self.ensure("verify")
        targets = self._target_configs()
        reference = targets[0]
        tasks = self.run.load("ingest", Task)
        retained = set(self._retained_ids())
        if not retained:
            raise StageError("no tasks survived verification; nothing to validate")
        extraction = self.cfg.corpus.extraction

        def correct(task: Task) -> bool:
            prompt = self.templates.render("target", question=task.question)
            response = self.gateway.complete(reference, prompt)
            answer = extract_answer(response, extraction)
            return bool(
                judge_verdict(self.gateway, self.cfg.judge, self.templates, answer, task.answer)
            )

        verdicts = pmap(correct, tasks, self.workers)
        kept = [ok for task, ok in zip(tasks, verdicts) if task.id in retained]
        acc_before = 100.0 * sum(verdicts) / len(verdicts)
        acc_after = 100.0 * sum(kept) / len(kept)

        n_clusters, reduced = validation_cluster_count(len(tasks))
        emb = embed_texts(self.gateway, self.cfg.embed, [t.question for t in tasks])
        labels = cluster(emb, n_clusters)
        mask_after = np.array([t.id in retained for t in tasks], dtype=bool)
        p_before = subset_proportions(labels, np.ones(len(tasks), dtype=bool), n_clusters)
        p_after = subset_proportions(labels, mask_after, n_clusters)
        r, p_value = pearson(p_before, p_after)

        result = FilteringValidation(
            n_before=len(tasks),
            n_after=len(kept),
            acc_before_pct=acc_before,
            acc_after_pct=acc_after,
            pearson_r=r,
            p_value=p_value,
            n_clusters=n_clusters,
            clusters_reduced=reduced,
        )
        self.run.persist("validation", FilteringValidation, [result])
        self.write_reports()
        return result

    def run_sweep(self, m_values: list[int], n_values: list[int]) -> list[GranularityStats]:
        """Granularity diagnostics across a grid of (cluster count, skill count)."""
        self.init_run()
        self.ensure("verify")
        tasks_by_id = self._tasks_by_id()
        chains_by_task = {c.task_id: c for c in self._consistent_chains()}
        chains = [chains_by_task[tid] for tid in self._retained_ids()]
        if not chains:
            raise StageError("no tasks survived verification; nothing to sweep")
        texts = [cluster_text(tasks_by_id[c.task_id], c) for c in chains]
        emb = embed_texts(self.gateway, self.cfg.embed, texts)

        rows: list[GranularityStats] = []
        for m_requested in m_values:
            m = min(m_requested, len(chains))
            labels = cluster(emb, m, linkage=self.cfg.skills.linkage)
            reps = representatives(emb, labels)
            blocks = [
                representative_block(
                    tasks_by_id[chains[reps[label]].task_id], chains[reps[label]]
                )
                for label in sorted(reps)
            ]
            for n in n_values:
                catalog = induce_skills(
                    self.gateway, self.cfg.teacher, self.templates,
                    blocks, n, self.cfg.skills.category, m,
                )

                def work(chain: SubTaskChain) -> list[int]:
                    return assign_skills(
                        self.gateway, self.cfg.teacher, self.templates, catalog,
                        tasks_by_id[chain.task_id], chain,
                    )

                assigned = [sid for ids in pmap(work, chains, self.workers) for sid in ids]
                desc_texts = [f"{s.name}: {s.description}" for s in catalog.skills]
                desc_emb = embed_texts(self.gateway, self.cfg.embed, desc_texts)
                rows.append(
                    granularity_stats(
                        assigned, catalog, desc_emb.vectors,
                        self.cfg.skills.similarity_threshold,
                    )
                )
        self.run.persist(
            "sweep", GranularityStats, rows,
            meta={"m_values": m_values, "n_values": n_values},
        )
        self.write_reports()
        return rows

    # -- reports ----------------------------------------------------------

    def _tables(self) -> list[Table]:
        tables: list[Table] = []

        def add(stage, record_cls, build) -> None:
            try:
                rows = self.run.load(stage, record_cls)
            except StageMissingError:
                return
            if rows:
                tables.append(build(rows))

        add("quality", DecompositionQuality, lambda rows: quality_table(rows[0]))
        add("filter", FilterReport, lambda rows: filter_table(rows[0]))
        add("granularity", GranularityStats, granularity_table)
        add("sweep", GranularityStats, lambda rows: _retitle(granularity_table(rows), "sweep"))
        add("bottlenecks", BottleneckRow, bottleneck_table)
        add("combination", CombinationRow, combination_table)
        add("skill_accuracy", SkillAccuracyRow, skill_accuracy_table)
        add("ablation", AblationRow, ablation_table)
        add("validation", FilteringValidation, lambda rows: validation_table(rows[0]))
        return tables

    def write_reports(self, fmt: str | None = None) -> list[Path]:
        """Render every available table; with no format, write table + csv."""
        fmts = (fmt,) if fmt else ("table", "csv")
        out: list[Path] = []
        reports = self.run.reports_dir
        reports.mkdir(parents=True, exist_ok=True)
        for table in self._tables():
            for f in fmts:
                path = reports / f"{table.name}.{extension(f)}"
                path.write_text(render(table, f), encoding="utf-8")
                out.append(path)
        return out


def _retitle(table: Table, name: str) -> Table:
    return Table(name=name, title=f"{table.title} (sweep)", headers=table.headers, rows=table.rows)
