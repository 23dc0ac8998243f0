"""Corpus ingestion: field maps, normalizers, malformed-line handling."""
from __future__ import annotations

import json

import pytest

from stad.corpus import IngestError, ingest, normalize_ground_truth


def write_jsonl(path, rows):
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


def test_field_map_renames(tmp_path):
    path = write_jsonl(
        tmp_path / "c.jsonl",
        [{"problem": "What is 1+1?", "solution": "2", "tags": ["easy", 3]}],
    )
    tasks, report = ingest(path, field_map={"question": "problem", "answer": "solution"})
    assert report.n_read == 1 and report.n_tasks == 1 and report.n_skipped == 0
    task = tasks[0]
    assert task.question == "What is 1+1?"
    assert task.answer == "2"
    assert task.tags == ["easy", "3"]  # tags coerced to strings


def test_upstream_id_used_when_mapped(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"id": "q-7", "question": "q", "answer": "a"}])
    tasks, _ = ingest(path, field_map={"question": "question", "answer": "answer", "id": "id"})
    assert tasks[0].id == "q-7"


def test_content_hash_id_is_stable(tmp_path):
    rows = [{"question": "q1", "answer": "a1"}, {"question": "q2", "answer": "a2"}]
    path = write_jsonl(tmp_path / "c.jsonl", rows)
    first, _ = ingest(path)
    second, _ = ingest(path)
    assert [t.id for t in first] == [t.id for t in second]
    assert len({t.id for t in first}) == 2


def test_after_hash_normalizer(tmp_path):
    assert normalize_ground_truth("work shown...\n#### 42", "after_hash") == "42"
    assert normalize_ground_truth("a #### b #### 9", "after_hash") == "9"
    assert normalize_ground_truth("  just 7  ", "after_hash") == "just 7"


def test_last_line_normalizer():
    assert normalize_ground_truth("step one\nstep two\n8\n\n", "last_line") == "8"
    assert normalize_ground_truth("9", "last_line") == "9"
    assert normalize_ground_truth("", "none") == ""


def test_unknown_normalizer_rejected():
    with pytest.raises(IngestError, match="unknown answer normalizer"):
        normalize_ground_truth("x", "shout")


def test_normalizer_applied_during_ingest(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"question": "q", "answer": "work\n#### 12"}])
    tasks, _ = ingest(path, answer_normalizer="after_hash")
    assert tasks[0].answer == "12"


def test_bad_lines_reported_not_fatal(tmp_path):
    path = write_jsonl(
        tmp_path / "c.jsonl",
        [
            {"question": "good", "answer": "1"},
            "this is not json",
            json.dumps([1, 2, 3]),
            {"question": "missing the answer"},
        ],
    )
    tasks, report = ingest(path)
    assert len(tasks) == 1
    assert report.n_read == 4
    assert report.n_skipped == 3
    assert any("line 2" in e and "invalid JSON" in e for e in report.errors)
    assert any("line 3" in e and "expected an object" in e for e in report.errors)
    assert any("line 4" in e and "answer" in e for e in report.errors)


def test_duplicate_ids_skipped(tmp_path):
    path = write_jsonl(
        tmp_path / "c.jsonl",
        [
            {"id": "same", "question": "q1", "answer": "1"},
            {"id": "same", "question": "q2", "answer": "2"},
        ],
    )
    tasks, report = ingest(path, field_map={"question": "question", "answer": "answer", "id": "id"})
    assert len(tasks) == 1 and tasks[0].question == "q1"
    assert report.n_skipped == 1
    assert "duplicate task id" in report.errors[0] and "line 2" in report.errors[0]


def test_blank_lines_ignored(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('\n{"question": "q", "answer": "1"}\n\n\n', encoding="utf-8")
    tasks, report = ingest(path)
    assert len(tasks) == 1 and report.n_read == 1


def test_empty_and_missing_files(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("\n\n")
    with pytest.raises(IngestError, match="empty"):
        ingest(empty)
    with pytest.raises(IngestError, match="not found"):
        ingest(tmp_path / "nope.jsonl")


def test_source_precedence(tmp_path):
    path = write_jsonl(tmp_path / "c.jsonl", [{"question": "q", "answer": "1", "source": "row-level"}])
    tasks, _ = ingest(path, source="config-level")
    assert tasks[0].source == "config-level"
    tasks, _ = ingest(path)
    assert tasks[0].source == "row-level"
