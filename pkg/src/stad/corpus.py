"""Corpus ingestion: external JSONL files in, Task records out.

Field names come from a config-supplied mapping, so benchmark files with
arbitrary keys need no code changes. Records missing a mapped field are
skipped and reported with their line numbers rather than failing the run.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .records import Task, content_id

logger = logging.getLogger(__name__)


class IngestError(Exception):
    pass


@dataclass
class IngestReport:
    n_read: int = 0
    n_tasks: int = 0
    n_skipped: int = 0
    errors: list[str] = field(default_factory=list)


def normalize_ground_truth(answer: str, rule: str) -> str:
    """Apply the per-corpus answer normalizer.

    after_hash keeps the text following a #### marker (a common layout for
    worked solutions ending in the final answer); last_line keeps the final
    non-empty line.
    """
    if rule == "none":
        return answer
    if rule == "after_hash":
        if "####" in answer:
            return answer.rsplit("####", 1)[1].strip()
        return answer.strip()
    if rule == "last_line":
        lines = [ln.strip() for ln in answer.splitlines() if ln.strip()]
        return lines[-1] if lines else answer.strip()
    raise IngestError(f"unknown answer normalizer {rule!r}")


def ingest(
    path: Path | str,
    field_map: dict[str, str] | None = None,
    source: str = "",
    answer_normalizer: str = "none",
) -> tuple[list[Task], IngestReport]:
    """Read a JSONL corpus into Task records.

    Uses the upstream id field when mapped and present; otherwise the id is
    a content hash, so re-ingesting the same file yields identical ids.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"corpus file not found: {path}")
    field_map = field_map or {"question": "question", "answer": "answer"}
    q_key = field_map.get("question", "question")
    a_key = field_map.get("answer", "answer")
    id_key = field_map.get("id")

    report = IngestReport()
    tasks: list[Task] = []
    seen_ids: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            report.n_read += 1
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                report.n_skipped += 1
                report.errors.append(f"line {line_no}: invalid JSON ({exc})")
                continue
            if not isinstance(row, dict):
                report.n_skipped += 1
                report.errors.append(f"line {line_no}: expected an object")
                continue
            missing = [k for k in (q_key, a_key) if k not in row]
            if missing:
                report.n_skipped += 1
                report.errors.append(f"line {line_no}: missing field(s) {missing}")
                continue
            question = str(row[q_key])
            answer = normalize_ground_truth(str(row[a_key]), answer_normalizer)
            task_id = str(row[id_key]) if id_key and id_key in row else content_id(question, answer)
            if task_id in seen_ids:
                report.n_skipped += 1
                report.errors.append(f"line {line_no}: duplicate task id {task_id}")
                continue
            seen_ids.add(task_id)
            tags = row.get("tags", []) if isinstance(row.get("tags"), list) else []
            tasks.append(
                Task(
                    id=task_id,
                    question=question,
                    answer=answer,
                    source=source or str(row.get("source", "")),
                    tags=[str(t) for t in tags],
                )
            )
    if report.n_read == 0:
        raise IngestError(f"corpus file is empty: {path}")
    report.n_tasks = len(tasks)
    for err in report.errors:
        logger.warning("ingest %s: %s", path.name, err)
    return tasks, report
