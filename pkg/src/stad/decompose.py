"""Teacher-driven decomposition of tasks into sequential sub-task chains.

Also home to the two corpus-level decomposition quality measures:
redundancy (repeated intermediate answers) and coverage (whether the steps
plus their answers alone let a model reconstruct the final answer).
"""
from __future__ import annotations

import json
import logging
import re

from .config import RoleConfig
from .gateway import ModelGateway
from .judging import judge_consistency
from .normalize import normalize_answer
from .parsing import first_json_array
from .prompts import TemplateSet
from .records import SubTask, SubTaskChain, Task

logger = logging.getLogger(__name__)

MIN_SEGMENTS = 2
DEFAULT_MAX_SEGMENTS = 6

_COUNT_REMINDER = "\n\nReminder: output exactly {n} entries, one per segment, in order."


class DecomposeError(Exception):
    """The teacher's reply could not be turned into a valid chain."""


def _parse_array(raw: str) -> list | None:
    try:
        data = json.loads(raw.strip())
        if isinstance(data, list):
            return data
    except json.JSONDecodeError:
        pass
    # One repair attempt: first balanced JSON array anywhere in the reply.
    return first_json_array(raw)


def decompose_task(
    gateway: ModelGateway,
    teacher_cfg: RoleConfig,
    templates: TemplateSet,
    task: Task,
    max_segments: int = DEFAULT_MAX_SEGMENTS,
) -> list[str]:
    """Ask the teacher for sequential segments; returns their descriptions."""
    prompt = templates.render("decompose", question=task.question, max_segments=max_segments)
    raw = gateway.complete(teacher_cfg, prompt)
    data = _parse_array(raw)
    if data is None:
        raise DecomposeError(f"task {task.id}: no JSON segment list in teacher reply")
    descriptions: list[str] = []
    for item in data:
        if not isinstance(item, dict) or "segment" not in item:
            raise DecomposeError(f"task {task.id}: segment entry {item!r} lacks a 'segment' key")
        descriptions.append(str(item["segment"]))
    if not MIN_SEGMENTS <= len(descriptions) <= max_segments:
        raise DecomposeError(
            f"task {task.id}: got {len(descriptions)} segments, "
            f"expected between {MIN_SEGMENTS} and {max_segments}"
        )
    for i, desc in enumerate(descriptions, start=1):
        if re.search(r"\d", desc) and re.search(r"=\s*\d|\bis \d", desc):
            logger.warning("task %s segment %d may contain a worked answer: %r", task.id, i, desc)
    return descriptions


def answer_sub_tasks(
    gateway: ModelGateway,
    teacher_cfg: RoleConfig,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    task: Task,
    descriptions: list[str],
) -> SubTaskChain:
    """Solve each segment in order and check the last answer against truth."""
    segments_json = json.dumps([{"segment": d} for d in descriptions], ensure_ascii=False)
    prompt = templates.render(
        "subtask_answers", question=task.question, sequential_segments=segments_json
    )
    raw = gateway.complete(teacher_cfg, prompt)
    entries = _parse_entries(raw, len(descriptions))
    if entries is None:
        raw = gateway.complete(
            teacher_cfg, prompt + _COUNT_REMINDER.format(n=len(descriptions))
        )
        entries = _parse_entries(raw, len(descriptions))
    if entries is None:
        raise DecomposeError(
            f"task {task.id}: answer count or format mismatch for {len(descriptions)} segments"
        )
    sub_tasks = [
        SubTask(
            index=i,
            description=desc,
            explanation=str(entry.get("explanation", "")),
            answer=str(entry.get("answer", "")),
        )
        for i, (desc, entry) in enumerate(zip(descriptions, entries), start=1)
    ]
    consistent = judge_consistency(
        gateway, judge_cfg, templates, sub_tasks[-1].answer, task.answer
    )
    return SubTaskChain(
        task_id=task.id, sub_tasks=sub_tasks, teacher_final_consistent=consistent
    )


def _parse_entries(raw: str, expected: int) -> list[dict] | None:
    data = _parse_array(raw)
    if data is None or len(data) != expected:
        return None
    if not all(isinstance(item, dict) and "answer" in item for item in data):
        return None
    return data


def redundancy(chains: list[SubTaskChain]) -> float:
    """Percent of within-chain answer pairs that are identical after normalization."""
    if not chains:
        raise ValueError("redundancy needs at least one chain")
    total_pairs = 0
    identical = 0
    for chain in chains:
        answers = [normalize_answer(s.answer) for s in chain.sub_tasks]
        k = len(answers)
        total_pairs += k * (k - 1) // 2
        for i in range(k):
            for j in range(i + 1, k):
                if answers[i] == answers[j]:
                    identical += 1
    if total_pairs == 0:
        return 0.0
    return 100.0 * identical / total_pairs


def render_steps(chain: SubTaskChain) -> str:
    return "\n".join(f"- {s.description}: {s.answer}" for s in chain.sub_tasks)


def coverage(
    gateway: ModelGateway,
    model_cfg: RoleConfig,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    chains: list[SubTaskChain],
    tasks_by_id: dict[str, Task],
) -> tuple[float, list[tuple[str, bool]]]:
    """Percent of chains whose steps alone reproduce the final answer.

    The reconstruction prompt shows only descriptions and intermediate
    answers, never the original question.
    """
    if not chains:
        raise ValueError("coverage needs at least one chain")
    results: list[tuple[str, bool]] = []
    for chain in chains:
        prompt = templates.render("reconstruction", steps=render_steps(chain))
        reconstructed = gateway.complete(model_cfg, prompt)
        ok = judge_consistency(
            gateway, judge_cfg, templates, reconstructed, tasks_by_id[chain.task_id].answer
        )
        results.append((chain.task_id, ok))
    pct = 100.0 * sum(1 for _, ok in results if ok) / len(results)
    return pct, results
