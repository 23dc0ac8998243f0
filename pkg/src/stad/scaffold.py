"""Scaffolded variant generation, teacher verification, and controls.

Level j of a task rewrites its question with the first j intermediate
answers woven in; levels run 1..K-1 only, since revealing the final step
would hand over the answer. A task survives verification only if the
teacher, given each rewrite, still reaches the original ground truth.
"""
from __future__ import annotations

import json
import logging
import re

from .config import RoleConfig
from .gateway import ModelGateway
from .judging import judge_consistency
from .normalize import normalize_answer, squash_ws
from .prompts import TemplateSet
from .records import ControlVariant, FilterReport, ScaffoldedVariant, SubTaskChain, Task

logger = logging.getLogger(__name__)

PLACEHOLDER = "[VALUE]"

REWRITE_MARKER = "Rewritten Question:"

_MARKER_REMINDER = (
    "\n\nReminder: reply with exactly one line starting with 'Rewritten Question:' "
    "followed by the rewritten question."
)


class ScaffoldError(Exception):
    """A variant could not be produced for some level of a task."""


def _solved_segments(chain: SubTaskChain, level: int) -> str:
    lines = [
        json.dumps({"segment": s.description, "answer": s.answer}, ensure_ascii=False) + ","
        for s in chain.sub_tasks[:level]
    ]
    return "\n".join(lines)


def _parse_rewrite(raw: str) -> str | None:
    pos = raw.rfind(REWRITE_MARKER)
    if pos < 0:
        return None
    text = raw[pos + len(REWRITE_MARKER):].strip()
    if not text:
        return None
    if "\n" in text:
        logger.warning("rewrite spans multiple lines; collapsing to one")
        text = squash_ws(text)
    return text


def make_variants(
    gateway: ModelGateway,
    teacher_cfg: RoleConfig,
    templates: TemplateSet,
    task: Task,
    chain: SubTaskChain,
) -> list[ScaffoldedVariant]:
    """One scaffolded variant per level 1..K-1, in order."""
    variants: list[ScaffoldedVariant] = []
    for level in range(1, chain.k):
        prompt = templates.render(
            "rewrite",
            question=task.question,
            solved_sequential_segments=_solved_segments(chain, level),
        )
        rewritten = _parse_rewrite(gateway.complete(teacher_cfg, prompt))
        if rewritten is None:
            rewritten = _parse_rewrite(gateway.complete(teacher_cfg, prompt + _MARKER_REMINDER))
        if rewritten is None:
            raise ScaffoldError(f"task {task.id} level {level}: no rewritten question marker")
        variants.append(
            ScaffoldedVariant(
                task_id=task.id,
                level=level,
                rewritten_question=rewritten,
                injected=[(s.index, s.answer) for s in chain.sub_tasks[:level]],
            )
        )
    return variants


def verify_and_filter(
    gateway: ModelGateway,
    teacher_cfg: RoleConfig,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    tasks_by_id: dict[str, Task],
    variants_by_task: dict[str, list[ScaffoldedVariant]],
) -> tuple[list[str], list[ScaffoldedVariant], FilterReport]:
    """Keep only tasks whose every variant the teacher still answers correctly.

    Returns (retained task ids, all variants with verification bits set,
    filter report). A judge parse failure counts as a failed check, which
    can only shrink the retained set.
    """
    retained: list[str] = []
    verified: list[ScaffoldedVariant] = []
    level_failures: dict[str, int] = {}
    for task_id in variants_by_task:
        task = tasks_by_id[task_id]
        all_ok = True
        for variant in variants_by_task[task_id]:
            prompt = templates.render("answer", question=variant.rewritten_question)
            answer = gateway.complete(teacher_cfg, prompt)
            ok = judge_consistency(gateway, judge_cfg, templates, answer, task.answer)
            variant.teacher_verified = ok
            verified.append(variant)
            if not ok:
                all_ok = False
                key = str(variant.level)
                level_failures[key] = level_failures.get(key, 0) + 1
        if all_ok:
            retained.append(task_id)
    report = FilterReport(
        n_before=len(variants_by_task),
        n_after=len(retained),
        level_failures=dict(sorted(level_failures.items(), key=lambda kv: int(kv[0]))),
    )
    return retained, verified, report


def mask_values(text: str, values: list[str]) -> tuple[str, int]:
    """Replace each value's occurrences in text with the placeholder token.

    Matching is exact on the normalized value (case-insensitive, trailing
    punctuation ignored) with word boundaries, so masking "13" never touches
    "130". Returns the masked text and the replacement count.
    """
    masked = text
    n_replaced = 0
    for value in sorted({normalize_answer(v) for v in values}, key=len, reverse=True):
        if not value:
            continue
        pattern = re.compile(r"(?<!\w)" + re.escape(value) + r"(?!\w)", re.IGNORECASE)
        masked, count = pattern.subn(PLACEHOLDER, masked)
        n_replaced += count
    return masked, n_replaced


def make_placeholder_control(variant: ScaffoldedVariant) -> ControlVariant | None:
    """Mask every injected value in the rewrite; None when any value is absent.

    A control only makes sense if all revealed values actually appear in the
    rewritten question; otherwise masking would leave scaffolding behind.
    """
    values = [answer for _, answer in variant.injected]
    masked = variant.rewritten_question
    total = 0
    for value in values:
        masked, count = mask_values(masked, [value])
        if count == 0:
            logger.warning(
                "task %s level %d: injected value %r not found; control skipped",
                variant.task_id,
                variant.level,
                value,
            )
            return None
        total += count
    return ControlVariant(
        task_id=variant.task_id,
        level=variant.level,
        masked_question=masked,
        n_masked=total,
    )
