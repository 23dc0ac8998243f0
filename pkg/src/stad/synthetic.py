"""Synthetic arithmetic word-problem corpus with known decompositions.

Each generated task follows a running-total template: a start quantity and a
chain of operations, one per sub-task. The generator records the full ground
truth (step descriptions, intermediate values, skill labels) plus a closed
form single-line rewrite of the question for every scaffolding level, which
lets the simulator answer every pipeline prompt without a model.

All numbers inside one task (start value, operands, intermediate results)
are pairwise distinct so placeholder masking can never touch an unrelated
number.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .records import RECORD_TYPES, Task

DEFAULT_SKILLS = (
    "sequential-tracking",
    "additive-reasoning",
    "comparative-reasoning",
    "proportional-scaling",
    "equal-partitioning",
    "result-reporting",
)

NAMES = (
    "Mara", "Theo", "Priya", "Jonas", "Aisha", "Felix",
    "Ines", "Marcus", "Noor", "Elena", "Ravi", "Greta",
)

ITEMS = (
    "tokens", "marbles", "stickers", "seashells", "beads",
    "coins", "stamps", "buttons", "acorns", "pebbles",
)

VERIFY_FAIL_TAG = "sim-verify-fail"

MIN_K = 2
MAX_K = 6


@dataclass
class TruthStep:
    """Ground truth for one sub-task of a synthetic question."""

    index: int
    description: str
    explanation: str
    answer: str
    skill: str


@dataclass
class TruthChain:
    """Full ground truth for one synthetic task, rewrites included.

    rewrites[j - 1] holds the scaffolded question at level j.
    """

    task_id: str
    question: str
    final_answer: str
    steps: list[TruthStep] = field(default_factory=list)
    rewrites: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "TruthChain":
        return cls(
            task_id=d["task_id"],
            question=d["question"],
            final_answer=d["final_answer"],
            steps=[TruthStep(**s) for s in d["steps"]],
            rewrites=list(d["rewrites"]),
        )


RECORD_TYPES["TruthChain"] = TruthChain


def _clause(op: str, x: int, name: str, item: str) -> str:
    if op == "sub":
        return f"{name} gives away {x} {item}."
    if op == "add":
        return f"{name} finds {x} more {item}."
    if op == "mul":
        return f"A sorting machine multiplies {name}'s {item} by {x}."
    if op == "div":
        return f"{name} splits the {item} into {x} equal boxes and keeps just one box."
    raise ValueError(f"unknown op {op!r}")


def _solved_clause(op: str, v: int, name: str, item: str) -> str:
    if op == "sub":
        return f"After giving some away, {name} has {v} {item}."
    if op == "add":
        return f"After finding more, {name} has {v} {item}."
    if op == "mul":
        return f"After the sorting machine runs, {name} has {v} {item}."
    if op == "div":
        return f"After keeping one box, {name} has {v} {item}."
    raise ValueError(f"unknown op {op!r}")


def _description(op: str, x: int, item: str) -> str:
    if op == "sub":
        return f"Subtract the {x} {item} given away from the current total"
    if op == "add":
        return f"Add the {x} newly found {item} to the current total"
    if op == "mul":
        return f"Multiply the current total of {item} by {x}"
    if op == "div":
        return f"Divide the current total of {item} by {x} to find how many are kept"
    raise ValueError(f"unknown op {op!r}")


def _explanation(op: str, u: int, x: int, v: int) -> str:
    symbol = {"sub": "-", "add": "+", "mul": "*", "div": "/"}[op]
    return f"Starting from {u}, apply {u} {symbol} {x} = {v}."


def _apply(op: str, u: int, x: int) -> int:
    if op == "sub":
        return u - x
    if op == "add":
        return u + x
    if op == "mul":
        return u * x
    if op == "div":
        return u // x
    raise ValueError(f"unknown op {op!r}")


def build_task(
    task_id: str,
    name: str,
    item: str,
    start: int,
    ops: list[tuple[str, int]],
    skills: list[str],
) -> tuple[Task, TruthChain]:
    """Assemble one task from an explicit op list; values must stay positive."""
    if len(ops) != len(skills):
        raise ValueError("need one skill label per op")
    if not MIN_K <= len(ops) <= MAX_K:
        raise ValueError(f"op count must be within [{MIN_K}, {MAX_K}]")
    clauses = []
    solved = []
    steps = []
    v = start
    k = len(ops)
    for i, (op, x) in enumerate(ops, start=1):
        u = v
        v = _apply(op, u, x)
        if v <= 0:
            raise ValueError(f"op {op} {x} drives the running total to {v}")
        clauses.append(_clause(op, x, name, item))
        solved.append(_solved_clause(op, v, name, item))
        desc = _description(op, x, item)
        if i == k:
            desc += " to obtain the final answer"
        steps.append(
            TruthStep(
                index=i,
                description=desc,
                explanation=_explanation(op, u, x, v),
                answer=str(v),
                skill=skills[i - 1],
            )
        )
    intro = f"{name} starts with {start} {item}."
    outro = f"How many {item} does {name} have in the end?"
    question = " ".join([intro, *clauses, outro])
    rewrites = [
        " ".join([intro, *solved[:j], *clauses[j:], outro]) for j in range(1, k)
    ]
    task = Task(id=task_id, question=question, answer=str(v), source="synthetic", tags=["synthetic"])
    chain = TruthChain(
        task_id=task_id,
        question=question,
        final_answer=str(v),
        steps=steps,
        rewrites=rewrites,
    )
    return task, chain


def _draw_ops(rng: random.Random, k: int) -> tuple[int, list[tuple[str, int]]]:
    """Draw a start value and k ops keeping every number in the task distinct."""
    for _ in range(200):
        start = rng.randint(6, 80)
        used = {start}
        ops: list[tuple[str, int]] = []
        v = start
        ok = True
        for _ in range(k):
            placed = False
            for _ in range(60):
                op = rng.choice(("sub", "add", "mul", "div"))
                if op == "sub":
                    if v < 4:
                        continue
                    x = rng.randint(2, min(v - 1, 30))
                elif op == "add":
                    x = rng.randint(2, 30)
                elif op == "mul":
                    x = rng.randint(2, 4)
                else:
                    divisors = [d for d in range(2, 11) if v % d == 0 and v // d > 0]
                    if not divisors:
                        continue
                    x = rng.choice(divisors)
                nxt = _apply(op, v, x)
                if nxt <= 0 or nxt > 200000:
                    continue
                if x in used or nxt in used or x == nxt:
                    continue
                used.update((x, nxt))
                ops.append((op, x))
                v = nxt
                placed = True
                break
            if not placed:
                ok = False
                break
        if ok:
            return start, ops
    raise RuntimeError("could not draw a distinct-valued op chain")


def gen_synthetic(
    n: int,
    k_range: tuple[int, int] = (MIN_K, MAX_K),
    skills: tuple[str, ...] = DEFAULT_SKILLS,
    seed: int = 0,
    verify_fail_frac: float = 0.0,
    verify_fail_level: int = 2,
) -> tuple[list[Task], list[TruthChain]]:
    """Generate n tasks with K drawn uniformly from k_range, reproducibly.

    verify_fail_frac marks that fraction of tasks with a tag telling the
    simulated teacher to flub the level verify_fail_level rewrite, which
    exercises the verification filter end to end.
    """
    kmin, kmax = k_range
    if not (MIN_K <= kmin <= kmax <= MAX_K):
        raise ValueError(f"k_range must lie within [{MIN_K}, {MAX_K}]")
    if not skills:
        raise ValueError("need at least one skill label")
    rng = random.Random(seed)
    tasks: list[Task] = []
    truths: list[TruthChain] = []
    seen_questions: set[str] = set()
    for i in range(n):
        for _ in range(50):
            k = rng.randint(kmin, kmax)
            name = rng.choice(NAMES)
            item = rng.choice(ITEMS)
            step_skills = [rng.choice(skills) for _ in range(k)]
            start, ops = _draw_ops(rng, k)
            task, chain = build_task(f"syn-{i:04d}", name, item, start, ops, step_skills)
            if task.question not in seen_questions:
                break
        else:
            raise RuntimeError("could not draw a fresh question text")
        seen_questions.add(task.question)
        tasks.append(task)
        truths.append(chain)
    if verify_fail_frac > 0.0:
        n_marked = int(verify_fail_frac * n)
        for idx in rng.sample(range(n), n_marked):
            tasks[idx].tags.append(f"{VERIFY_FAIL_TAG}:{verify_fail_level}")
    return tasks, truths


def world_skills(truths: list[TruthChain]) -> list[str]:
    """Distinct skill labels present in a synthetic corpus, sorted."""
    return sorted({step.skill for chain in truths for step in chain.steps})
