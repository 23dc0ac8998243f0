"""Consistency judging: one model call deciding whether two answers agree.

The judge replies with {"score": 0|1, "justification": ...}. An unparsable
reply gets exactly one retry (with a strictness reminder appended so the
retry is a fresh prompt rather than a cache replay); if that also fails the
verdict is false and the parse failure is flagged.
"""
from __future__ import annotations

import logging

from .config import RoleConfig
from .gateway import ModelGateway
from .parsing import iter_json_values
from .prompts import TemplateSet

logger = logging.getLogger(__name__)

JUDGE_PARSE_FAILURE = "judge_parse_failure"

_RETRY_REMINDER = (
    "\n\nReminder: reply with exactly one JSON object of the form "
    '{"score": 0 or 1, "justification": "..."} and nothing else.'
)


class JudgeVerdict:
    """Parsed judge reply; falls back to score 0 when parsing failed."""

    def __init__(self, score: bool, justification: str = "", parse_failure: bool = False):
        self.score = score
        self.justification = justification
        self.parse_failure = parse_failure

    def __bool__(self) -> bool:
        return self.score


def _parse_score(raw: str) -> tuple[bool, str] | None:
    for data in iter_json_values(raw, "{"):
        if not isinstance(data, dict) or "score" not in data:
            continue
        score = data["score"]
        if score in (0, 1, "0", "1", True, False):
            return bool(int(score)), str(data.get("justification", ""))
    return None


def judge_verdict(
    gateway: ModelGateway,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    model_answer: str,
    ground_truth: str,
) -> JudgeVerdict:
    prompt = templates.render(
        "consistency",
        validator_final_answer=model_answer,
        ground_truth=ground_truth,
    )
    raw = gateway.complete(judge_cfg, prompt)
    parsed = _parse_score(raw)
    if parsed is None:
        logger.warning("judge reply was unparsable, retrying once")
        raw = gateway.complete(judge_cfg, prompt + _RETRY_REMINDER)
        parsed = _parse_score(raw)
    if parsed is None:
        logger.warning("judge retry also unparsable; scoring as inconsistent")
        return JudgeVerdict(False, parse_failure=True)
    score, justification = parsed
    return JudgeVerdict(score, justification)


def judge_consistency(
    gateway: ModelGateway,
    judge_cfg: RoleConfig,
    templates: TemplateSet,
    model_answer: str,
    ground_truth: str,
) -> bool:
    """True iff the judge rates the two answers equivalent in value.

    Parse failures count as inconsistent, the conservative choice when this
    gate decides whether a scaffolded variant survives verification.
    """
    return judge_verdict(gateway, judge_cfg, templates, model_answer, ground_truth).score


def extract_answer(response: str, rule: str = "auto") -> str:
    """Pull the final answer out of a model response.

    auto: use a JSON "answer" field when the response carries one, else the
    raw text. json_answer: require the field, empty string when absent.
    raw: always the full response.
    """
    if rule == "raw":
        return response
    for data in iter_json_values(response, "{"):
        if isinstance(data, dict) and "answer" in data:
            return str(data["answer"])
    if rule == "json_answer":
        return ""
    return response
