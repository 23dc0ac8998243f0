"""Run configuration: role blocks, corpus block, and stage overrides.

One structured file (YAML or JSON) drives a run. Secrets never appear in
config; API keys come from environment variables only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

ROLE_TEACHER = "teacher"
ROLE_JUDGE = "judge"
ROLE_TARGET = "target"
ROLE_EMBED = "embed"

ROLE_DEFAULT_TEMPERATURE = {
    ROLE_TEACHER: 0.2,
    ROLE_JUDGE: 0.0,
    ROLE_TARGET: 0.0,
    ROLE_EMBED: 0.0,
}

DEFAULT_MAX_TOKENS = 2048
DEFAULT_API_KEY_ENV = "STAD_API_KEY"


class ConfigError(Exception):
    """Invalid or incomplete run configuration."""


@dataclass(frozen=True)
class RoleConfig:
    """How to reach one model role: endpoint, decoding params, auth env var."""

    role: str
    model_name: str
    endpoint: str = "sim:"
    temperature: float | None = None
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None
    system_prompt: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV

    @property
    def resolved_temperature(self) -> float:
        if self.temperature is not None:
            return self.temperature
        return ROLE_DEFAULT_TEMPERATURE.get(self.role, 0.0)

    @property
    def is_sim(self) -> bool:
        return self.endpoint.startswith("sim:")

    def to_public_dict(self) -> dict:
        return {
            "role": self.role,
            "model_name": self.model_name,
            "endpoint": self.endpoint,
            "temperature": self.resolved_temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


@dataclass
class TargetSpec:
    """A target model under evaluation, plus its simulator profile if any."""

    config: RoleConfig
    known_skills: list[str] = field(default_factory=list)
    noise_rate: float = 0.0


@dataclass
class CorpusConfig:
    path: str = ""
    source: str = ""
    field_map: dict[str, str] = field(default_factory=lambda: {"question": "question", "answer": "answer"})
    answer_normalizer: str = "none"  # none | after_hash | last_line
    extraction: str = "auto"  # auto | json_answer | raw
    truth_path: str = ""


@dataclass
class SkillsConfig:
    m_clusters: int = 40
    n_skills: int = 20
    category: str = "multi-step reasoning problems"
    similarity_threshold: float = 0.78
    linkage: str = "ward"


@dataclass
class EvalConfig:
    eval_all_levels: bool = False
    individual_skills: bool = True


@dataclass
class AnalyzeConfig:
    top_n: int = 5
    min_group: int = 10


@dataclass
class GatewayConfig:
    max_retries: int = 3
    backoff_base: float = 0.25
    max_in_flight: int = 8
    timeout: float = 120.0


@dataclass
class RunConfig:
    run_dir: str
    corpus: CorpusConfig
    teacher: RoleConfig
    judge: RoleConfig
    embed: RoleConfig
    targets: list[TargetSpec] = field(default_factory=list)
    skills: SkillsConfig = field(default_factory=SkillsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    templates_dir: str = ""
    max_segments: int = 6

    def role_summary(self) -> dict[str, dict]:
        roles = {
            ROLE_TEACHER: self.teacher.to_public_dict(),
            ROLE_JUDGE: self.judge.to_public_dict(),
            ROLE_EMBED: self.embed.to_public_dict(),
        }
        roles["targets"] = [t.config.to_public_dict() for t in self.targets]
        return roles

    def sim_profiles(self) -> dict[str, dict]:
        """Simulator profiles keyed by target model name."""
        return {
            t.config.model_name: {"known_skills": t.known_skills, "noise_rate": t.noise_rate}
            for t in self.targets
            if t.config.is_sim
        }


def _require(data: dict, key: str, where: str):
    if key not in data or data[key] in (None, ""):
        raise ConfigError(f"missing required config field: {where}.{key}" if where else f"missing required config field: {key}")
    return data[key]


def _role_from_dict(role: str, data: dict, where: str) -> RoleConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    model_name = _require(data, "model_name", where)
    known = {"model_name", "endpoint", "temperature", "max_tokens", "seed", "system_prompt", "api_key_env"}
    unknown = set(data) - known - {"profile", "known_skills", "noise_rate"}
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return RoleConfig(
        role=role,
        model_name=str(model_name),
        endpoint=str(data.get("endpoint", "sim:")),
        temperature=data.get("temperature"),
        max_tokens=int(data.get("max_tokens", DEFAULT_MAX_TOKENS)),
        seed=data.get("seed"),
        system_prompt=str(data.get("system_prompt", "")),
        api_key_env=str(data.get("api_key_env", DEFAULT_API_KEY_ENV)),
    )


def _target_from_dict(data: dict, where: str) -> TargetSpec:
    cfg = _role_from_dict(ROLE_TARGET, data, where)
    profile = data.get("profile", {}) or {}
    known_skills = list(profile.get("known_skills", data.get("known_skills", [])) or [])
    noise_rate = float(profile.get("noise_rate", data.get("noise_rate", 0.0)) or 0.0)
    if not 0.0 <= noise_rate <= 1.0:
        raise ConfigError(f"{where}.profile.noise_rate must be within [0, 1]")
    return TargetSpec(config=cfg, known_skills=known_skills, noise_rate=noise_rate)


def _build(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    run_dir = _require(data, "run_dir", "")

    corpus_data = data.get("corpus", {}) or {}
    corpus = CorpusConfig(
        path=str(corpus_data.get("path", "")),
        source=str(corpus_data.get("source", "")),
        field_map=dict(corpus_data.get("field_map", {"question": "question", "answer": "answer"})),
        answer_normalizer=str(corpus_data.get("answer_normalizer", "none")),
        extraction=str(corpus_data.get("extraction", "auto")),
        truth_path=str(corpus_data.get("truth_path", "")),
    )
    if corpus.answer_normalizer not in ("none", "after_hash", "last_line"):
        raise ConfigError("corpus.answer_normalizer must be one of: none, after_hash, last_line")
    if corpus.extraction not in ("auto", "json_answer", "raw"):
        raise ConfigError("corpus.extraction must be one of: auto, json_answer, raw")
    if "question" not in corpus.field_map or "answer" not in corpus.field_map:
        raise ConfigError("corpus.field_map must map both 'question' and 'answer'")

    roles = data.get("roles", {}) or {}
    if ROLE_TEACHER not in roles:
        raise ConfigError("missing required config field: roles.teacher")
    if ROLE_JUDGE not in roles:
        raise ConfigError("missing required config field: roles.judge")
    teacher = _role_from_dict(ROLE_TEACHER, roles[ROLE_TEACHER], "roles.teacher")
    judge = _role_from_dict(ROLE_JUDGE, roles[ROLE_JUDGE], "roles.judge")
    if ROLE_EMBED in roles:
        embed = _role_from_dict(ROLE_EMBED, roles[ROLE_EMBED], "roles.embed")
    else:
        embed = RoleConfig(role=ROLE_EMBED, model_name="sim-embedder", endpoint="sim:")

    targets = [
        _target_from_dict(t, f"targets[{i}]") for i, t in enumerate(data.get("targets", []) or [])
    ]

    skills_data = data.get("skills", {}) or {}
    skills = SkillsConfig(
        m_clusters=int(skills_data.get("m", skills_data.get("m_clusters", 40))),
        n_skills=int(skills_data.get("n", skills_data.get("n_skills", 20))),
        category=str(skills_data.get("category", "multi-step reasoning problems")),
        similarity_threshold=float(skills_data.get("similarity_threshold", 0.78)),
        linkage=str(skills_data.get("linkage", "ward")),
    )
    if skills.m_clusters < 1 or skills.n_skills < 1:
        raise ConfigError("skills.m and skills.n must be positive")
    if skills.linkage not in ("ward", "average", "complete"):
        raise ConfigError("skills.linkage must be one of: ward, average, complete")

    eval_data = data.get("eval", {}) or {}
    eval_cfg = EvalConfig(
        eval_all_levels=bool(eval_data.get("eval_all_levels", False)),
        individual_skills=bool(eval_data.get("individual_skills", True)),
    )

    analyze_data = data.get("analyze", {}) or {}
    analyze_cfg = AnalyzeConfig(
        top_n=int(analyze_data.get("top_n", 5)),
        min_group=int(analyze_data.get("min_group", 10)),
    )

    gw_data = data.get("gateway", {}) or {}
    gateway = GatewayConfig(
        max_retries=int(gw_data.get("max_retries", 3)),
        backoff_base=float(gw_data.get("backoff_base", 0.25)),
        max_in_flight=int(gw_data.get("max_in_flight", 8)),
        timeout=float(gw_data.get("timeout", 120.0)),
    )
    if gateway.max_in_flight < 1:
        raise ConfigError("gateway.max_in_flight must be at least 1")

    max_segments = int(data.get("max_segments", 6))
    if not 2 <= max_segments:
        raise ConfigError("max_segments must be at least 2")

    return RunConfig(
        run_dir=str(run_dir),
        corpus=corpus,
        teacher=teacher,
        judge=judge,
        embed=embed,
        targets=targets,
        skills=skills,
        eval=eval_cfg,
        analyze=analyze_cfg,
        gateway=gateway,
        templates_dir=str(data.get("templates_dir", "")),
        max_segments=max_segments,
    )


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"could not parse config {path}: {exc}") from exc
    return _build(data)


def config_from_dict(data: dict) -> RunConfig:
    return _build(data)
