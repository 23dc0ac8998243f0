"""Decomposition parsing, chain answering, redundancy and coverage measures."""
from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ScriptedGateway, role
from stad.decompose import (
    DecomposeError,
    answer_sub_tasks,
    coverage,
    decompose_task,
    redundancy,
    render_steps,
)
from stad.prompts import TemplateSet
from stad.records import SubTask, SubTaskChain, Task

TEMPLATES = TemplateSet()
TEACHER = role("teacher")
JUDGE = role("judge")

TASK = Task(id="t1", question="A question about beads.", answer="18")

YES = '{"score": 1, "justification": "match"}'
NO = '{"score": 0, "justification": "differ"}'


def seg_json(*segments):
    return json.dumps([{"segment": s} for s in segments])


def ans_json(*answers):
    return json.dumps([{"explanation": f"why {a}", "answer": a} for a in answers])


def test_decompose_parses_segments():
    gw = ScriptedGateway([seg_json("first step", "second step")])
    descriptions = decompose_task(gw, TEACHER, TEMPLATES, TASK)
    assert descriptions == ["first step", "second step"]
    assert TASK.question in gw.prompts[0]
    assert "6" in gw.prompts[0]  # default segment ceiling rendered into the prompt


def test_decompose_repairs_prose_wrapped_array():
    raw = 'Here you go:\n[{"segment": "a"}, {"segment": "b"}, {"segment": "c"}]\nEnjoy!'
    gw = ScriptedGateway([raw])
    assert decompose_task(gw, TEACHER, TEMPLATES, TASK) == ["a", "b", "c"]


def test_decompose_bounds():
    with pytest.raises(DecomposeError, match="expected between 2 and 6"):
        decompose_task(ScriptedGateway([seg_json(*"abcdefg")]), TEACHER, TEMPLATES, TASK)
    with pytest.raises(DecomposeError, match="got 1 segments"):
        decompose_task(ScriptedGateway([seg_json("only one")]), TEACHER, TEMPLATES, TASK)
    # A tighter ceiling is enforced when passed through.
    with pytest.raises(DecomposeError):
        decompose_task(
            ScriptedGateway([seg_json("a", "b", "c", "d")]),
            TEACHER, TEMPLATES, TASK, max_segments=3,
        )


def test_decompose_rejects_bad_entries():
    with pytest.raises(DecomposeError, match="no JSON segment list"):
        decompose_task(ScriptedGateway(["not json at all"]), TEACHER, TEMPLATES, TASK)
    with pytest.raises(DecomposeError, match="lacks a 'segment' key"):
        decompose_task(
            ScriptedGateway(['[{"segment": "ok"}, {"step": "nope"}]']),
            TEACHER, TEMPLATES, TASK,
        )


def test_answer_sub_tasks_happy_path():
    gw = ScriptedGateway([ans_json("13", "18"), YES])
    chain = answer_sub_tasks(gw, TEACHER, JUDGE, TEMPLATES, TASK, ["sub a", "sub b"])
    assert chain.task_id == "t1"
    assert chain.k == 2
    assert [s.index for s in chain.sub_tasks] == [1, 2]
    assert [s.answer for s in chain.sub_tasks] == ["13", "18"]
    assert chain.sub_tasks[0].explanation == "why 13"
    assert chain.teacher_final_consistent is True
    # The judge saw the last sub-answer against the task's ground truth.
    assert "18" in gw.prompts[-1]


def test_answer_count_mismatch_retries_with_reminder():
    gw = ScriptedGateway([ans_json("13"), ans_json("13", "18"), YES])
    chain = answer_sub_tasks(gw, TEACHER, JUDGE, TEMPLATES, TASK, ["a", "b"])
    assert chain.k == 2
    assert len(gw.prompts) == 3
    assert "exactly 2 entries" in gw.prompts[1]
    assert gw.prompts[1].startswith(gw.prompts[0])


def test_answer_unrecoverable_mismatch():
    gw = ScriptedGateway([ans_json("1"), ans_json("1", "2", "3")])
    with pytest.raises(DecomposeError, match="count or format mismatch"):
        answer_sub_tasks(gw, TEACHER, JUDGE, TEMPLATES, TASK, ["a", "b"])


def test_answer_entries_need_answer_key():
    gw = ScriptedGateway(['[{"explanation": "no answer"}]', '[{"explanation": "still none"}]'])
    with pytest.raises(DecomposeError):
        answer_sub_tasks(gw, TEACHER, JUDGE, TEMPLATES, TASK, ["a"])


def test_inconsistent_final_answer_is_recorded():
    gw = ScriptedGateway([ans_json("13", "99"), NO])
    chain = answer_sub_tasks(gw, TEACHER, JUDGE, TEMPLATES, TASK, ["a", "b"])
    assert chain.teacher_final_consistent is False


def chain_of(*answers):
    subs = [SubTask(index=i, description=f"s{i}", answer=a) for i, a in enumerate(answers, 1)]
    return SubTaskChain(task_id="t", sub_tasks=subs)


def test_redundancy_frozen_values():
    assert redundancy([chain_of("A", "B", "A")]) == pytest.approx(100.0 / 3, abs=0.01)
    assert redundancy([chain_of("A", "A", "A")]) == 100.0
    assert redundancy([chain_of("1", "2", "3")]) == 0.0
    # Normalization: case and trailing punctuation do not break a match.
    assert redundancy([chain_of("13", "13.")]) == 100.0
    # Across chains nothing is compared: two chains sharing values stay at 0.
    assert redundancy([chain_of("7", "8"), chain_of("7", "8")]) == 0.0


def test_redundancy_edge_cases():
    with pytest.raises(ValueError):
        redundancy([])
    assert redundancy([chain_of("only")]) == 0.0


@given(st.lists(st.lists(st.integers(0, 5), min_size=2, max_size=6), min_size=1, max_size=5))
def test_redundancy_invariances(value_lists):
    chains = [chain_of(*(str(v) for v in values)) for values in value_lists]
    base = redundancy(chains)
    # Within-chain order cannot matter: pairs are unordered.
    reversed_chains = [chain_of(*(str(v) for v in reversed(values))) for values in value_lists]
    assert redundancy(reversed_chains) == pytest.approx(base)
    # Renaming values through a bijection cannot matter either.
    renamed = [chain_of(*(f"v{v}x" for v in values)) for values in value_lists]
    assert redundancy(renamed) == pytest.approx(base)
    assert 0.0 <= base <= 100.0


def test_render_steps_layout():
    text = render_steps(chain_of("3", "9"))
    assert text == "- s1: 3\n- s2: 9"


def test_coverage_prompt_hides_question():
    chains = [chain_of("13", "18")]
    seen = {}

    def script(prompt):
        if "score" in prompt or "equivalent in value" in prompt:
            return YES
        seen["reconstruction"] = prompt
        return "18"

    gw = ScriptedGateway(script)
    pct, results = coverage(gw, TEACHER, JUDGE, TEMPLATES, chains, {"t": TASK})
    assert pct == 100.0
    assert results == [("t", True)]
    assert "- s1: 13" in seen["reconstruction"]
    assert TASK.question not in seen["reconstruction"]


def test_coverage_counts_failures():
    chains = [chain_of("1", "2"), chain_of("3", "4")]
    replies = iter(["2", YES, "4", NO])
    gw = ScriptedGateway(lambda prompt: next(replies))
    pct, results = coverage(gw, TEACHER, JUDGE, TEMPLATES, chains, {"t": TASK})
    assert pct == 50.0
    assert [ok for _, ok in results] == [True, False]
    with pytest.raises(ValueError):
        coverage(gw, TEACHER, JUDGE, TEMPLATES, [], {})
