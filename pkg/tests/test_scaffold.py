"""Scaffolded variants, teacher verification, masking, placeholder controls."""
from __future__ import annotations

import pytest

from conftest import ScriptedGateway, role
from stad.gateway import ModelGateway
from stad.prompts import TemplateSet
from stad.records import ScaffoldedVariant, SubTask, SubTaskChain, Task
from stad.scaffold import (
    PLACEHOLDER,
    ScaffoldError,
    make_placeholder_control,
    make_variants,
    mask_values,
    verify_and_filter,
)
from stad.simulator import SimBackend, SyntheticWorld
from stad.synthetic import build_task

TEMPLATES = TemplateSet()
TEACHER = role("teacher")
JUDGE = role("judge")

YES = '{"score": 1, "justification": ""}'
NO = '{"score": 0, "justification": ""}'


def make_world_task():
    task, truth = build_task(
        "w1", "Noor", "stamps", 20,
        [("sub", 6), ("add", 11), ("div", 5)],
        ["sequential-tracking", "additive-reasoning", "equal-partitioning"],
    )
    chain = SubTaskChain(
        task_id=task.id,
        sub_tasks=[
            SubTask(index=s.index, description=s.description, answer=s.answer)
            for s in truth.steps
        ],
        teacher_final_consistent=True,
    )
    return task, truth, chain


def sim_gateway(tmp_path, tasks, truths):
    world = SyntheticWorld(tasks, truths)
    return ModelGateway(tmp_path / "cache", sim_backend=SimBackend(world))


def test_make_variants_levels_and_injections(tmp_path):
    task, truth, chain = make_world_task()
    gw = sim_gateway(tmp_path, [task], [truth])
    variants = make_variants(gw, TEACHER, TEMPLATES, task, chain)
    assert [v.level for v in variants] == [1, 2]
    for j, variant in enumerate(variants, start=1):
        assert variant.task_id == task.id
        assert variant.injected == [(s.index, s.answer) for s in chain.sub_tasks[:j]]
        assert variant.rewritten_question == truth.rewrites[j - 1]
        assert variant.teacher_verified is False  # not verified yet


def test_two_step_chain_yields_one_variant(tmp_path):
    task, truth = build_task(
        "w2", "Ravi", "acorns", 9, [("add", 5), ("sub", 3)],
        ["additive-reasoning", "sequential-tracking"],
    )
    chain = SubTaskChain(
        task_id=task.id,
        sub_tasks=[SubTask(index=s.index, description=s.description, answer=s.answer) for s in truth.steps],
    )
    gw = sim_gateway(tmp_path, [task], [truth])
    variants = make_variants(gw, TEACHER, TEMPLATES, task, chain)
    assert len(variants) == 1 and variants[0].level == 1


def test_rewrite_marker_retry_and_failure():
    task, _, chain = make_world_task()
    # First reply lacks the marker; the retry provides it.
    gw = ScriptedGateway(
        ["no marker here", "Rewritten Question: patched rewrite",
         "Rewritten Question: second level"]
    )
    variants = make_variants(gw, TEACHER, TEMPLATES, task, chain)
    assert variants[0].rewritten_question == "patched rewrite"
    assert "Reminder" in gw.prompts[1]

    gw = ScriptedGateway(["nope", "still nope"])
    with pytest.raises(ScaffoldError, match="no rewritten question marker"):
        make_variants(gw, TEACHER, TEMPLATES, task, chain)


def test_multiline_rewrite_collapses():
    task, _, chain = make_world_task()
    replies = ["Rewritten Question: line one\n  line two"] * 2
    gw = ScriptedGateway(replies)
    variants = make_variants(gw, TEACHER, TEMPLATES, task, chain)
    assert variants[0].rewritten_question == "line one line two"


def test_mask_values_word_boundaries():
    masked, n = mask_values("I kept 13 of the 130 beads", ["13"])
    assert masked == f"I kept {PLACEHOLDER} of the 130 beads"
    assert n == 1


def test_mask_values_longest_first():
    masked, n = mask_values("13 then 130", ["13", "130"])
    assert masked == f"{PLACEHOLDER} then {PLACEHOLDER}"
    assert n == 2


def test_mask_values_normalization_and_symbols():
    masked, n = mask_values("The budget is $130k overall", ["$130k"])
    assert masked == f"The budget is {PLACEHOLDER} overall"
    assert n == 1
    masked, n = mask_values("They visited Paris twice", ["paris"])
    assert masked == f"They visited {PLACEHOLDER} twice"
    assert n == 1
    # Trailing punctuation on the value is ignored by normalization.
    masked, n = mask_values("answer 42 here", ["42."])
    assert n == 1


def test_mask_values_missing_value():
    masked, n = mask_values("nothing to see", ["99"])
    assert masked == "nothing to see" and n == 0
    masked, n = mask_values("blank values are skipped", [""])
    assert n == 0


def test_placeholder_control_masks_all_injected():
    variant = ScaffoldedVariant(
        task_id="t", level=2,
        rewritten_question="After step one he has 13 left, then 9 remain. How many now?",
        injected=[(1, "13"), (2, "9")],
    )
    control = make_placeholder_control(variant)
    assert control is not None
    assert control.n_masked == 2
    assert "13" not in control.masked_question and "9" not in control.masked_question
    assert control.masked_question.count(PLACEHOLDER) == 2
    assert (control.task_id, control.level) == ("t", 2)


def test_placeholder_control_unalignable():
    variant = ScaffoldedVariant(
        task_id="t", level=2,
        rewritten_question="He has 13 left. How many now?",
        injected=[(1, "13"), (2, "9")],  # 9 never appears in the rewrite
    )
    assert make_placeholder_control(variant) is None


def test_verify_and_filter_scripted():
    tasks = {
        "a": Task(id="a", question="qa", answer="1"),
        "b": Task(id="b", question="qb", answer="2"),
    }
    variants = {
        "a": [ScaffoldedVariant(task_id="a", level=1, rewritten_question="ra1")],
        "b": [
            ScaffoldedVariant(task_id="b", level=1, rewritten_question="rb1"),
            ScaffoldedVariant(task_id="b", level=2, rewritten_question="rb2"),
        ],
    }
    # Call order: (answer, judge) per variant; b's level-2 check fails.
    gw = ScriptedGateway(["1", YES, "2", YES, "99", NO])
    retained, verified, report = verify_and_filter(gw, TEACHER, JUDGE, TEMPLATES, tasks, variants)
    assert retained == ["a"]
    assert [(v.task_id, v.level, v.teacher_verified) for v in verified] == [
        ("a", 1, True), ("b", 1, True), ("b", 2, False),
    ]
    assert report.n_before == 2 and report.n_after == 1
    assert report.level_failures == {"2": 1}
    # The teacher was asked the rewritten questions, not the originals.
    assert any("rb2" in p for p in gw.prompts)


def test_verify_judge_parse_failure_only_shrinks():
    tasks = {"a": Task(id="a", question="qa", answer="1")}
    variants = {"a": [ScaffoldedVariant(task_id="a", level=1, rewritten_question="r")]}
    # Judge replies garbage twice (initial plus retry): scored inconsistent.
    gw = ScriptedGateway(["1", "??", "??"])
    retained, _, report = verify_and_filter(gw, TEACHER, JUDGE, TEMPLATES, tasks, variants)
    assert retained == []
    assert report.level_failures == {"1": 1}
