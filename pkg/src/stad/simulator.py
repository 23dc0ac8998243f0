"""Deterministic in-process model backend for offline runs.

The simulator serves every role against a synthetic corpus whose ground
truth it holds. The teacher replays the known decompositions and rewrites,
the judge scores equivalence with a rule-based checker implementing the
consistency guidelines, and each target answers correctly exactly when
every sub-task past the scaffolding level uses a skill the target's profile
knows. Everything is a pure function of (profile, prompt), so repeated calls
agree across processes.

Prompt recognition is tied to the wording of the packaged default templates;
runs that override templates should keep the marker lines intact or use a
live endpoint instead.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .config import RoleConfig
from .normalize import normalize_answer, squash_ws
from .records import Task
from .synthetic import VERIFY_FAIL_TAG, TruthChain, world_skills

WRONG_ANSWER = "-9999"

EMBED_DIM = 64

MARK_DECOMPOSE = "break down the instruction into explicit"
MARK_SUBTASK_ANSWERS = "solve each segment in order"
MARK_REWRITE = "rewrite the original question by incorporating"
MARK_SKILL_GEN = "distinct skills that a learner (or model) must possess"
MARK_SKILL_MAP = "classify it into exactly one of the predefined skills"
MARK_RECONSTRUCTION = "Using only the completed steps below"
MARK_JUDGE = "decide whether the two answers are equivalent in value"
MARK_PROBE = "Complete only the single step requested"
MARK_QUESTION_TAIL = "Now complete the task for the following question:"


class SimulatorError(Exception):
    pass


@dataclass(frozen=True)
class SimModelProfile:
    """What a simulated target can do: its skill set and an error rate."""

    name: str
    known_skills: frozenset[str]
    noise_rate: float = 0.0

    @classmethod
    def from_dict(cls, name: str, d: dict) -> "SimModelProfile":
        return cls(
            name=name,
            known_skills=frozenset(d.get("known_skills", [])),
            noise_rate=float(d.get("noise_rate", 0.0)),
        )


# ---------------------------------------------------------------------------
# Rule-based answer equivalence (the simulated judge)

_EMPTY_MARKERS = {"", "n/a", "na", "none", "null", "unknown", "unspecified", "missing"}

_UNITS = {
    "mg": ("mass", 0.001),
    "milligram": ("mass", 0.001),
    "milligrams": ("mass", 0.001),
    "g": ("mass", 1.0),
    "gram": ("mass", 1.0),
    "grams": ("mass", 1.0),
    "kg": ("mass", 1000.0),
    "kilogram": ("mass", 1000.0),
    "kilograms": ("mass", 1000.0),
    "mm": ("length", 0.001),
    "millimeter": ("length", 0.001),
    "millimeters": ("length", 0.001),
    "cm": ("length", 0.01),
    "centimeter": ("length", 0.01),
    "centimeters": ("length", 0.01),
    "m": ("length", 1.0),
    "meter": ("length", 1.0),
    "meters": ("length", 1.0),
    "km": ("length", 1000.0),
    "kilometer": ("length", 1000.0),
    "kilometers": ("length", 1000.0),
    "ml": ("volume", 0.001),
    "milliliter": ("volume", 0.001),
    "milliliters": ("volume", 0.001),
    "l": ("volume", 1.0),
    "liter": ("volume", 1.0),
    "liters": ("volume", 1.0),
    "s": ("time", 1.0),
    "sec": ("time", 1.0),
    "second": ("time", 1.0),
    "seconds": ("time", 1.0),
    "min": ("time", 60.0),
    "minute": ("time", 60.0),
    "minutes": ("time", 60.0),
    "h": ("time", 3600.0),
    "hr": ("time", 3600.0),
    "hrs": ("time", 3600.0),
    "hour": ("time", 3600.0),
    "hours": ("time", 3600.0),
    "day": ("time", 86400.0),
    "days": ("time", 86400.0),
    "week": ("time", 604800.0),
    "weeks": ("time", 604800.0),
}

_WORD_UNITS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
    "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18,
    "nineteen": 19,
}

_WORD_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}

_WORD_SCALES = {"hundred": 100, "thousand": 1000, "million": 1000000}

_TIME_RE = re.compile(
    r"^(\d{1,2})(?::(\d{2}))?\s*(am|pm|a\.m\.|p\.m\.|o'clock)?$"
)


def _word_number(text: str) -> float | None:
    words = text.replace("-", " ").split()
    words = [w for w in words if w != "and"]
    if not words:
        return None
    total = 0
    current = 0
    for word in words:
        if word in _WORD_UNITS:
            current += _WORD_UNITS[word]
        elif word in _WORD_TENS:
            current += _WORD_TENS[word]
        elif word in _WORD_SCALES:
            scale = _WORD_SCALES[word]
            current = max(current, 1) * scale
            if scale >= 1000:
                total += current
                current = 0
        else:
            return None
    return float(total + current)


def _parse_number(text: str) -> float | None:
    t = text.strip().replace(",", "").replace("$", "")
    if not t:
        return None
    mult = 1.0
    if t.endswith("%"):
        t = t[:-1].strip()
    if t and t[-1] in ("k", "K") and len(t) > 1 and (t[:-1].replace(".", "", 1).lstrip("-").isdigit()):
        mult = 1000.0
        t = t[:-1]
    if "/" in t:
        try:
            return float(Fraction(t))
        except (ValueError, ZeroDivisionError):
            return None
    try:
        return float(t) * mult
    except ValueError:
        return _word_number(t)


def _parse_time(text: str) -> set[int] | None:
    """Plausible minutes-since-midnight values for a clock expression."""
    m = _TIME_RE.match(text.strip())
    if not m:
        return None
    hour = int(m.group(1))
    minute = int(m.group(2) or 0)
    meridiem = m.group(3)
    if hour > 23 or minute > 59:
        return None
    if meridiem in ("am", "a.m."):
        if hour > 12:
            return None
        return {(hour % 12) * 60 + minute}
    if meridiem in ("pm", "p.m."):
        if hour > 12:
            return None
        return {(hour % 12) * 60 + minute + 720}
    if hour >= 13:
        return {hour * 60 + minute}
    # No meridiem: the expression could mean either half of the day.
    base = (hour % 12) * 60 + minute
    return {base, base + 720}


def _split_interval(text: str) -> tuple[str, str] | None:
    for sep in ("–", "—", " to ", "-"):
        if sep in text:
            left, _, right = text.partition(sep)
            if left.strip() and right.strip():
                return left.strip(), right.strip()
    return None


def _parse_quantity(text: str) -> tuple[str, float, float] | None:
    """(dimension, base_value, raw_number) for strings like '2 kg'."""
    m = re.match(r"^(.*?)\s*([a-z.']+)$", text.strip())
    if not m:
        return None
    num_part, unit_part = m.group(1).strip(), m.group(2).strip()
    if unit_part not in _UNITS:
        return None
    value = _parse_number(num_part)
    if value is None:
        return None
    dim, factor = _UNITS[unit_part]
    return dim, value * factor, value


def _clean_answer(text: str) -> str | None:
    out = normalize_answer(text)
    for prefix in ("the answer is", "final answer:", "answer:", "answer is", "answer"):
        if out.startswith(prefix) and len(out) > len(prefix):
            candidate = out[len(prefix):].strip(" :=")
            if candidate:
                out = candidate
                break
    out = out.strip("\"'")
    if out in _EMPTY_MARKERS:
        return None
    return out


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


def answers_equivalent(model_answer: str, ground_truth: str) -> bool:
    """Value equivalence per the consistency guidelines, fully deterministic.

    Empty or unspecified answers never match anything, including themselves.
    """
    a = _clean_answer(model_answer)
    b = _clean_answer(ground_truth)
    if a is None or b is None:
        return False

    ia, ib = _split_interval(a), _split_interval(b)
    if ia and ib:
        sa1, sa2 = _parse_time(ia[0]), _parse_time(ia[1])
        sb1, sb2 = _parse_time(ib[0]), _parse_time(ib[1])
        if all(s is not None for s in (sa1, sa2, sb1, sb2)):
            return bool(sa1 & sb1) and bool(sa2 & sb2)

    ta, tb = _parse_time(a), _parse_time(b)
    if ta is not None and tb is not None:
        return bool(ta & tb)
    if (ta is None) != (tb is None) and (ta or tb) is not None:
        # One side is clearly a clock time; fall through only if the other
        # side is a bare number that could be an hour, e.g. "7" vs "7:00".
        plain = _parse_number(b if ta is not None else a)
        if plain is not None and float(plain).is_integer() and 0 <= plain <= 23:
            other = _parse_time(f"{int(plain)}:00")
            known = ta if ta is not None else tb
            return bool(known & other)
        return False

    qa, qb = _parse_quantity(a), _parse_quantity(b)
    if qa and qb:
        return qa[0] == qb[0] and _close(qa[1], qb[1])
    if qa and not qb:
        nb = _parse_number(b)
        return nb is not None and _close(qa[2], nb)
    if qb and not qa:
        na = _parse_number(a)
        return na is not None and _close(qb[2], na)

    na, nb = _parse_number(a), _parse_number(b)
    if na is not None and nb is not None:
        return _close(na, nb)
    if (na is None) != (nb is None):
        return False

    return a == b


# ---------------------------------------------------------------------------
# Synthetic world: ground truth lookup plus a question-text index


class SyntheticWorld:
    """Index over a synthetic corpus: tasks, truth chains, and question text."""

    def __init__(self, tasks: list[Task], truths: list[TruthChain]):
        self.tasks = {t.id: t for t in tasks}
        self.truths = {c.task_id: c for c in truths}
        missing = set(self.tasks) - set(self.truths)
        if missing:
            raise SimulatorError(f"tasks without truth chains: {sorted(missing)[:3]}")
        self.skills = world_skills(truths)
        # (normalized text, task_id, kind, level); kind in original|scaffold|control
        self._index: list[tuple[str, str, str, int]] = []
        from .scaffold import mask_values  # local import keeps module load order flexible

        for chain in truths:
            self._index.append((squash_ws(chain.question), chain.task_id, "original", 0))
            for j, rewrite in enumerate(chain.rewrites, start=1):
                self._index.append((squash_ws(rewrite), chain.task_id, "scaffold", j))
                injected = [step.answer for step in chain.steps[:j]]
                masked, n_masked = mask_values(rewrite, injected)
                if n_masked:
                    self._index.append((squash_ws(masked), chain.task_id, "control", j))

    def truth_of(self, task_id: str) -> TruthChain:
        if task_id not in self.truths:
            raise SimulatorError(f"unknown task id: {task_id}")
        return self.truths[task_id]

    def resolve(self, prompt: str) -> tuple[str, str, int]:
        """Find which known question text the prompt embeds."""
        normalized = squash_ws(prompt)
        for text, task_id, kind, level in self._index:
            if text in normalized:
                return task_id, kind, level
        raise SimulatorError("prompt does not contain any known question text")


def _noise_flip(profile: SimModelProfile, prompt: str) -> bool:
    if profile.noise_rate <= 0.0:
        return False
    digest = hashlib.sha256(f"{profile.name}\x1f{prompt}".encode("utf-8")).digest()
    frac = int.from_bytes(digest[:8], "big") / float(1 << 64)
    return frac < profile.noise_rate


class SimBackend:
    """Serves teacher, judge, and target completions from the synthetic world."""

    def __init__(
        self,
        world: SyntheticWorld | None = None,
        profiles: dict[str, SimModelProfile] | None = None,
        embed_dim: int = EMBED_DIM,
    ):
        self.world = world
        self.profiles = profiles or {}
        self.embed_dim = embed_dim

    @classmethod
    def from_config(cls, world: SyntheticWorld | None, profile_dicts: dict[str, dict]) -> "SimBackend":
        profiles = {
            name: SimModelProfile.from_dict(name, d) for name, d in profile_dicts.items()
        }
        return cls(world=world, profiles=profiles)

    # -- gateway entry points ------------------------------------------------

    def complete(self, role_cfg: RoleConfig, prompt: str) -> str:
        if role_cfg.role == "judge" or MARK_JUDGE in prompt:
            return self._judge(prompt)
        if role_cfg.role == "teacher":
            return self._teacher(prompt)
        if role_cfg.role == "target":
            return self._target(role_cfg.model_name, prompt)
        raise SimulatorError(f"simulator cannot serve role {role_cfg.role!r}")

    def embed(self, texts: list[str]) -> list[list[float]]:
        """Unit-norm vectors derived from a content hash; stable everywhere."""
        out = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vec = rng.standard_normal(self.embed_dim)
            vec /= np.linalg.norm(vec)
            out.append([float(v) for v in vec])
        return out

    # -- closed-form target behavior ------------------------------------------

    def sim_target_answer(self, profile: SimModelProfile, task_id: str, scaffold_level: int) -> str:
        """Correct final answer iff every step past the level uses a known skill."""
        world = self._require_world()
        chain = world.truth_of(task_id)
        for step in chain.steps:
            if step.index > scaffold_level and step.skill not in profile.known_skills:
                return WRONG_ANSWER
        return chain.final_answer

    def oracle_minimum_k(self, profile: SimModelProfile, task_id: str) -> int:
        """Closed-form minimum scaffolding level for a noise-free profile.

        Equals the largest missing-skill step index before the final step,
        0 when nothing is missing, and -1 when the final step itself is
        missing a skill.
        """
        chain = self._require_world().truth_of(task_id)
        last = chain.steps[-1]
        if last.skill not in profile.known_skills:
            return -1
        missing = [
            s.index for s in chain.steps[:-1] if s.skill not in profile.known_skills
        ]
        return max(missing) if missing else 0

    # -- role handlers ---------------------------------------------------------

    def _require_world(self) -> SyntheticWorld:
        if self.world is None:
            raise SimulatorError("this prompt needs a synthetic world but none is attached")
        return self.world

    def _profile(self, model_name: str) -> SimModelProfile:
        if model_name not in self.profiles:
            raise SimulatorError(f"no simulator profile for target model {model_name!r}")
        return self.profiles[model_name]

    def _teacher(self, prompt: str) -> str:
        if MARK_SKILL_GEN in prompt:
            return self._skill_generation(prompt)
        if MARK_SKILL_MAP in prompt:
            return self._skill_mapping(prompt)
        if MARK_REWRITE in prompt:
            return self._rewrite(prompt)
        if MARK_SUBTASK_ANSWERS in prompt:
            return self._subtask_answers(prompt)
        if MARK_DECOMPOSE in prompt:
            return self._decompose(prompt)
        if MARK_RECONSTRUCTION in prompt:
            return self._reconstruction(prompt)
        return self._teacher_answer(prompt)

    def _tail_after(self, prompt: str, marker: str) -> str:
        pos = prompt.rfind(marker)
        if pos < 0:
            raise SimulatorError(f"prompt is missing expected marker {marker!r}")
        return prompt[pos + len(marker):]

    def _decompose(self, prompt: str) -> str:
        world = self._require_world()
        tail = self._tail_after(prompt, MARK_QUESTION_TAIL)
        task_id, _, _ = world.resolve(tail)
        chain = world.truth_of(task_id)
        return json.dumps([{"segment": s.description} for s in chain.steps])

    def _subtask_answers(self, prompt: str) -> str:
        world = self._require_world()
        tail = self._tail_after(prompt, MARK_QUESTION_TAIL)
        task_id, _, _ = world.resolve(tail)
        chain = world.truth_of(task_id)
        return json.dumps(
            [{"explanation": s.explanation, "answer": s.answer} for s in chain.steps]
        )

    def _rewrite(self, prompt: str) -> str:
        world = self._require_world()
        q_pos = prompt.rfind("Original Question:")
        s_pos = prompt.rfind("Solved Segments:")
        if q_pos < 0 or s_pos < 0 or s_pos <= q_pos:
            raise SimulatorError("rewrite prompt is missing its question or segment block")
        question = prompt[q_pos + len("Original Question:"):s_pos]
        task_id, _, _ = world.resolve(question)
        chain = world.truth_of(task_id)
        level = prompt[s_pos:].count('"segment"')
        if not 1 <= level <= len(chain.rewrites):
            raise SimulatorError(f"rewrite level {level} out of range for {task_id}")
        return f"Rewritten Question: {chain.rewrites[level - 1]}"

    def _skill_generation(self, prompt: str) -> str:
        world = self._require_world()
        m = re.search(r"list (\d+) well-defined skills", prompt)
        if not m:
            raise SimulatorError("skill generation prompt is missing the skill count")
        n = int(m.group(1))
        labels = list(world.skills)
        while len(labels) < n:
            labels.append(f"auxiliary-capability-{len(labels) + 1}")
        lines = [
            f"{i}. {label}: applies {label} when advancing a multi-step solution."
            for i, label in enumerate(labels[:n], start=1)
        ]
        return "\n".join(lines)

    def _skill_mapping(self, prompt: str) -> str:
        world = self._require_world()
        skills_pos = prompt.rfind("Skills (skill ID: description):")
        out_pos = prompt.rfind("Output requirements:")
        prob_pos = prompt.rfind("Problem:")
        sub_pos = prompt.rfind("Sub-Tasks:")
        if min(skills_pos, out_pos, prob_pos, sub_pos) < 0:
            raise SimulatorError("skill mapping prompt is missing a required block")
        by_name: dict[str, int] = {}
        for line in prompt[skills_pos:out_pos].splitlines():
            m = re.match(r"\s*(\d+)\s*:\s*([^:]+?)\s*(?::|$)", line)
            if m:
                by_name[m.group(2).strip().casefold()] = int(m.group(1))
        task_id, _, _ = world.resolve(prompt[prob_pos + len("Problem:"):sub_pos])
        chain = world.truth_of(task_id)
        assignments = [
            {"skill": by_name.get(s.skill.casefold(), -1)} for s in chain.steps
        ]
        return json.dumps(assignments)

    def _reconstruction(self, prompt: str) -> str:
        # First-step descriptions are not unique across chains, so a chain
        # only counts once every one of its step/answer pairs is present.
        world = self._require_world()
        normalized = squash_ws(prompt)
        partial = False
        for chain in world.truths.values():
            if squash_ws(chain.steps[0].description) not in normalized:
                continue
            if all(
                squash_ws(f"{s.description}: {s.answer}") in normalized for s in chain.steps
            ):
                return chain.final_answer
            partial = True
        if partial:
            return WRONG_ANSWER
        raise SimulatorError("reconstruction prompt does not match any known chain")

    def _teacher_answer(self, prompt: str) -> str:
        world = self._require_world()
        task_id, kind, level = world.resolve(prompt)
        if kind == "scaffold":
            task = world.tasks[task_id]
            if f"{VERIFY_FAIL_TAG}:{level}" in task.tags:
                return WRONG_ANSWER
        return world.truth_of(task_id).final_answer

    def _judge(self, prompt: str) -> str:
        a_pos = prompt.find("**Model Output**")
        b_pos = prompt.find("**Ground-truth Answer**")
        c_pos = prompt.find("**Scoring Criteria**")
        if min(a_pos, b_pos, c_pos) < 0 or not a_pos < b_pos < c_pos:
            raise SimulatorError("consistency prompt is missing its answer blocks")
        model_answer = prompt[a_pos + len("**Model Output**"):b_pos].strip()
        ground_truth = prompt[b_pos + len("**Ground-truth Answer**"):c_pos].strip()
        equal = answers_equivalent(model_answer, ground_truth)
        return json.dumps(
            {
                "score": 1 if equal else 0,
                "justification": "values match" if equal else "values differ",
            }
        )

    def _target(self, model_name: str, prompt: str) -> str:
        world = self._require_world()
        profile = self._profile(model_name)
        if MARK_PROBE in prompt:
            right_answer, response = self._probe_answer(profile, prompt)
        else:
            task_id, kind, level = world.resolve(prompt)
            effective_level = 0 if kind == "control" else level
            right_answer = world.truth_of(task_id).final_answer
            response = self.sim_target_answer(profile, task_id, effective_level)
        if _noise_flip(profile, prompt):
            response = right_answer if response == WRONG_ANSWER else WRONG_ANSWER
        return response

    def _probe_answer(self, profile: SimModelProfile, prompt: str) -> tuple[str, str]:
        """(right answer, profile's answer) for a single-step probe."""
        world = self._require_world()
        task_id, _, _ = world.resolve(prompt)
        chain = world.truth_of(task_id)
        normalized = squash_ws(prompt)
        step_pos = normalized.rfind("Step to complete:")
        if step_pos < 0:
            raise SimulatorError("probe prompt is missing its step block")
        step_text = normalized[step_pos:]
        for step in chain.steps:
            if squash_ws(step.description) in step_text:
                given = step.answer if step.skill in profile.known_skills else WRONG_ANSWER
                return step.answer, given
        raise SimulatorError(f"probe step does not match any sub-task of {task_id}")
