"""Target-model evaluation: originals, scaffolded variants, probes, controls.

Scaffolded evaluation walks levels in ascending order and stops at the
first success, since the minimum passing level is all the analysis needs;
eval_all_levels switches to full sweeps for studying non-monotone score
sequences. Every verdict comes from the judge role, never string equality.
"""
from __future__ import annotations

import logging
from typing import Iterable

from .config import RoleConfig
from .gateway import ModelGateway, pmap
from .judging import JUDGE_PARSE_FAILURE, extract_answer, judge_verdict
from .prompts import TemplateSet
from .records import (
    ControlOutcome,
    ControlVariant,
    EvalOutcome,
    ProbeOutcome,
    ScaffoldedVariant,
    SubTaskChain,
    Task,
)

logger = logging.getLogger(__name__)


def _judged_answer(
    gateway: ModelGateway,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    response: str,
    ground_truth: str,
    extraction: str,
) -> tuple[bool, bool]:
    """(correct, judge_parse_failure) for one model response."""
    verdict = judge_verdict(
        gateway, judge_cfg, templates, extract_answer(response, extraction), ground_truth
    )
    return verdict.score, verdict.parse_failure


def eval_original(
    gateway: ModelGateway,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    targets: list[RoleConfig],
    tasks: list[Task],
    chains_by_task: dict[str, SubTaskChain],
    extraction: str = "auto",
    workers: int = 8,
) -> list[EvalOutcome]:
    """One outcome per (task, target), evaluated on the untouched question."""

    def work(pair: tuple[RoleConfig, Task]) -> EvalOutcome:
        target_cfg, task = pair
        prompt = templates.render("target", question=task.question)
        response = gateway.complete(target_cfg, prompt)
        correct, parse_failed = _judged_answer(
            gateway, judge_cfg, templates, response, task.answer, extraction
        )
        outcome = EvalOutcome(
            task_id=task.id,
            target_model=target_cfg.model_name,
            original_correct=correct,
            n_levels=chains_by_task[task.id].k - 1,
            raw_answers={"0": response},
        )
        if parse_failed:
            outcome.judge_flags.append(f"{JUDGE_PARSE_FAILURE}:0")
        return outcome

    pairs = [(target_cfg, task) for target_cfg in targets for task in tasks]
    return pmap(work, pairs, workers)


def eval_scaffolded(
    gateway: ModelGateway,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    targets: list[RoleConfig],
    tasks_by_id: dict[str, Task],
    variants_by_task: dict[str, list[ScaffoldedVariant]],
    outcomes: list[EvalOutcome],
    extraction: str = "auto",
    eval_all_levels: bool = False,
    workers: int = 8,
) -> list[EvalOutcome]:
    """Fill variant scores for outcomes, early-stopping unless told otherwise."""
    by_model = {cfg.model_name: cfg for cfg in targets}

    def work(outcome: EvalOutcome) -> EvalOutcome:
        if outcome.original_correct and not eval_all_levels:
            return outcome
        target_cfg = by_model[outcome.target_model]
        task = tasks_by_id[outcome.task_id]
        variants = sorted(variants_by_task.get(outcome.task_id, []), key=lambda v: v.level)
        scores: list[bool] = []
        flags: list[str] = []
        for variant in variants:
            prompt = templates.render("target", question=variant.rewritten_question)
            response = gateway.complete(target_cfg, prompt)
            correct, parse_failed = _judged_answer(
                gateway, judge_cfg, templates, response, task.answer, extraction
            )
            scores.append(correct)
            outcome.raw_answers[str(variant.level)] = response
            if parse_failed:
                flags.append(f"{JUDGE_PARSE_FAILURE}:{variant.level}")
            if correct and not eval_all_levels:
                break
        outcome.variant_scores = scores
        outcome.judge_flags.extend(flags)
        return outcome

    return pmap(work, outcomes, workers)


def eval_probes(
    gateway: ModelGateway,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    targets: list[RoleConfig],
    tasks_by_id: dict[str, Task],
    chains: list[SubTaskChain],
    extraction: str = "auto",
    workers: int = 8,
) -> list[ProbeOutcome]:
    """Pose every sub-task standalone and judge against its intermediate answer."""

    def work(item: tuple[RoleConfig, SubTaskChain, int]) -> ProbeOutcome:
        target_cfg, chain, idx = item
        sub = chain.sub_tasks[idx]
        task = tasks_by_id[chain.task_id]
        prompt = templates.render("probe", question=task.question, sub_task=sub.description)
        response = gateway.complete(target_cfg, prompt)
        correct, _ = _judged_answer(
            gateway, judge_cfg, templates, response, sub.answer, extraction
        )
        return ProbeOutcome(
            task_id=chain.task_id,
            target_model=target_cfg.model_name,
            sub_task_index=sub.index,
            skill_id=sub.skill_id,
            correct=correct,
        )

    items = [
        (target_cfg, chain, idx)
        for target_cfg in targets
        for chain in chains
        for idx in range(chain.k)
    ]
    return pmap(work, items, workers)


def eval_controls(
    gateway: ModelGateway,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    targets: list[RoleConfig],
    tasks_by_id: dict[str, Task],
    controls: Iterable[ControlVariant],
    extraction: str = "auto",
    workers: int = 8,
) -> list[ControlOutcome]:
    """Evaluate placeholder-masked variants the same way as scaffolded ones."""

    def work(item: tuple[RoleConfig, ControlVariant]) -> ControlOutcome:
        target_cfg, control = item
        task = tasks_by_id[control.task_id]
        prompt = templates.render("target", question=control.masked_question)
        response = gateway.complete(target_cfg, prompt)
        correct, _ = _judged_answer(
            gateway, judge_cfg, templates, response, task.answer, extraction
        )
        return ControlOutcome(
            task_id=control.task_id,
            target_model=target_cfg.model_name,
            level=control.level,
            correct=correct,
        )

    items = [(target_cfg, control) for target_cfg in targets for control in controls]
    return pmap(work, items, workers)
