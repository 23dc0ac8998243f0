"""Shared fixtures: synthetic corpora on disk, sim-backed configs, stubs."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import pytest

from stad.config import RoleConfig, config_from_dict
from stad.pipeline import Pipeline
from stad.records import write_records
from stad.synthetic import DEFAULT_SKILLS, TruthChain, gen_synthetic


def role(role_name: str, model: str | None = None, **kw) -> RoleConfig:
    return RoleConfig(role=role_name, model_name=model or f"sim-{role_name}", **kw)


class ScriptedGateway:
    """Gateway stand-in that replays a response queue and records prompts.

    `script` is either a list (FIFO queue, one entry per complete call) or a
    callable mapping the prompt to a response. `embeddings` works the same
    way for embed calls, per text.
    """

    def __init__(self, script=(), embeddings=None):
        self.script = script if callable(script) else list(script)
        self.embeddings = embeddings
        self.prompts: list[str] = []
        self.embed_texts: list[str] = []

    def complete(self, role_cfg, prompt: str) -> str:
        self.prompts.append(prompt)
        if callable(self.script):
            return self.script(prompt)
        if not self.script:
            raise AssertionError(f"scripted gateway exhausted at prompt: {prompt[:80]!r}")
        return self.script.pop(0)

    def embed(self, embed_cfg, texts: list[str]) -> list[list[float]]:
        self.embed_texts.extend(texts)
        if callable(self.embeddings):
            return [self.embeddings(t) for t in texts]
        if self.embeddings is None:
            raise AssertionError("scripted gateway has no embeddings configured")
        return [list(v) for v in self.embeddings[: len(texts)]]


def write_corpus(
    out_dir: Path,
    n: int = 12,
    seed: int = 0,
    k_range: tuple[int, int] = (2, 6),
    verify_fail_frac: float = 0.0,
    verify_fail_level: int = 2,
):
    """Materialize a synthetic corpus + truth file, as the CLI generator does."""
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks, truths = gen_synthetic(
        n,
        k_range=k_range,
        seed=seed,
        verify_fail_frac=verify_fail_frac,
        verify_fail_level=verify_fail_level,
    )
    corpus_path = out_dir / "corpus.jsonl"
    with corpus_path.open("w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(asdict(task), ensure_ascii=False) + "\n")
    truth_path = out_dir / "truth.records"
    write_records(truth_path, TruthChain, truths, meta={"seed": seed})
    return corpus_path, truth_path, tasks, truths


def target_spec(name: str, known_skills, noise_rate: float = 0.0) -> dict:
    return {
        "model_name": name,
        "profile": {"known_skills": list(known_skills), "noise_rate": noise_rate},
    }


def sim_config_dict(
    run_dir: Path,
    corpus_path: Path,
    truth_path: Path,
    targets: list[dict],
    m: int = 8,
    n: int = 6,
    min_group: int = 1,
    top_n: int = 999,
    **extra,
) -> dict:
    data = {
        "run_dir": str(run_dir),
        "corpus": {
            "path": str(corpus_path),
            "source": "synthetic",
            "field_map": {"question": "question", "answer": "answer", "id": "id"},
            "truth_path": str(truth_path),
        },
        "roles": {
            "teacher": {"model_name": "sim-teacher"},
            "judge": {"model_name": "sim-judge"},
            "embed": {"model_name": "sim-embedder"},
        },
        "targets": targets,
        "skills": {"m": m, "n": n},
        "analyze": {"top_n": top_n, "min_group": min_group},
    }
    data.update(extra)
    return data


def build_sim_pipeline(tmp_path: Path, n_tasks: int = 12, seed: int = 0, targets=None, **cfg_kw):
    """Corpus + config + pipeline in one go, all under tmp_path."""
    corpus_path, truth_path, tasks, truths = write_corpus(
        tmp_path / "data", n=n_tasks, seed=seed, k_range=cfg_kw.pop("k_range", (2, 6)),
        verify_fail_frac=cfg_kw.pop("verify_fail_frac", 0.0),
        verify_fail_level=cfg_kw.pop("verify_fail_level", 2),
    )
    if targets is None:
        targets = [
            target_spec("sim-alpha", [s for s in DEFAULT_SKILLS if s != "equal-partitioning"]),
            target_spec("sim-beta", [s for s in DEFAULT_SKILLS if s != "proportional-scaling"]),
        ]
    data = sim_config_dict(
        tmp_path / "run", corpus_path, truth_path, targets, **cfg_kw
    )
    cfg = config_from_dict(data)
    return Pipeline(cfg), tasks, truths


@pytest.fixture
def scripted():
    return ScriptedGateway


@pytest.fixture
def sim_judge_env(tmp_path):
    """A real gateway wired to the rule-based sim judge (no world needed)."""
    from stad.gateway import ModelGateway
    from stad.prompts import TemplateSet
    from stad.simulator import SimBackend

    gateway = ModelGateway(tmp_path / "cache", sim_backend=SimBackend())
    return gateway, role("judge"), TemplateSet()
