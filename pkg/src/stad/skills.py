"""Skill induction: cluster tasks, name skills, map sub-tasks onto them.

Clustering is agglomerative with Ward's criterion over unit-normalized
embeddings. Merges are fully deterministic: at each step the pair with the
smallest variance increase wins, with ties broken by the lower smallest
original member index (then by the other cluster's smallest member).
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .config import RoleConfig
from .gateway import ModelGateway
from .parsing import first_json_array
from .prompts import TemplateSet
from .records import GranularityStats, Skill, SubTaskChain, Task

logger = logging.getLogger(__name__)

OTHER_NAME = "other"

_SKILL_LINE = re.compile(r"^\s*(\d+)[.)]\s*([^:]+?)\s*:\s*(.*?)\s*$")

_COUNT_REMINDER = (
    "\n\nReminder: return exactly {n} numbered lines, each of the form "
    "'1. Skill name: brief explanation', and nothing else."
)

_MAPPING_REMINDER = (
    "\n\nReminder: return a JSON array with exactly {n} objects, one per sub-task, "
    'each of the form {{"skill": <id>}}.'
)


class SkillError(Exception):
    pass


@dataclass
class EmbeddingSet:
    """Unit-normalized embedding matrix with the texts it came from."""

    keys: list[str]
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)


def embed_texts(gateway: ModelGateway, embed_cfg: RoleConfig, texts: list[str]) -> EmbeddingSet:
    if not texts:
        raise SkillError("nothing to embed")
    raw = gateway.embed(embed_cfg, texts)
    dims = {len(v) for v in raw}
    if len(dims) != 1 or 0 in dims:
        raise SkillError(f"embedding dimensions disagree or are empty: {sorted(dims)}")
    matrix = np.asarray(raw, dtype=float)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        raise SkillError("embedding backend returned a zero vector")
    return EmbeddingSet(keys=list(texts), vectors=matrix / norms[:, None])


def cluster_text(task: Task, chain: SubTaskChain) -> str:
    """Text representing a task for clustering: question plus step outline."""
    lines = [task.question]
    lines.extend(s.description for s in chain.sub_tasks)
    return "\n".join(lines)


LINKAGES = ("ward", "average", "complete")


def cluster(emb: EmbeddingSet | np.ndarray, m: int, linkage: str = "ward") -> np.ndarray:
    """Agglomerative cluster labels (0..m-1), deterministic for any input.

    Ward is the default; average and complete linkage share the same merge
    loop with their own distance updates. Labels are canonical: the cluster
    containing the lowest original index gets label 0, the next lowest
    unclaimed index gets 1, and so on.
    """
    if linkage not in LINKAGES:
        raise SkillError(f"unknown linkage {linkage!r}; expected one of {LINKAGES}")
    X = emb.vectors if isinstance(emb, EmbeddingSet) else np.asarray(emb, dtype=float)
    n = len(X)
    if not 1 <= m <= n:
        raise SkillError(f"cannot form {m} clusters from {n} points")

    # For Ward, D holds the merge cost between live clusters (twice the
    # variance increase), seeded with squared Euclidean distances between
    # points; average/complete work on plain Euclidean distances.
    gram = X @ X.T
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * gram
    D = np.maximum(D, 0.0)
    if linkage != "ward":
        D = np.sqrt(D)
    np.fill_diagonal(D, np.inf)

    size = np.ones(n)
    min_member = np.arange(n)
    alive = np.ones(n, dtype=bool)
    assign = np.arange(n)

    for _ in range(n - m):
        live = np.flatnonzero(alive)
        sub = D[np.ix_(live, live)]
        dmin = sub.min()
        ties = np.argwhere(np.isclose(sub, dmin, rtol=0.0, atol=0.0))
        best = None
        best_key = None
        for a, b in ties:
            if a >= b:
                continue
            i, j = live[a], live[b]
            mm = sorted((int(min_member[i]), int(min_member[j])))
            key = (mm[0], mm[1])
            if best_key is None or key < best_key:
                best_key = key
                best = (i, j)
        i, j = best
        # Keep the slot holding the smaller original index.
        if min_member[j] < min_member[i]:
            i, j = j, i
        si, sj = size[i], size[j]
        dij = D[i, j]
        others = np.flatnonzero(alive)
        others = others[(others != i) & (others != j)]
        if len(others):
            sk = size[others]
            if linkage == "ward":
                D[i, others] = (
                    (si + sk) * D[i, others] + (sj + sk) * D[j, others] - sk * dij
                ) / (si + sj + sk)
            elif linkage == "average":
                D[i, others] = (si * D[i, others] + sj * D[j, others]) / (si + sj)
            else:
                D[i, others] = np.maximum(D[i, others], D[j, others])
            D[others, i] = D[i, others]
        size[i] = si + sj
        min_member[i] = min(min_member[i], min_member[j])
        alive[j] = False
        D[j, :] = np.inf
        D[:, j] = np.inf
        assign[assign == j] = i

    slots = sorted(np.flatnonzero(alive), key=lambda s: int(min_member[s]))
    relabel = {slot: lab for lab, slot in enumerate(slots)}
    return np.array([relabel[s] for s in assign], dtype=int)


def representatives(emb: EmbeddingSet | np.ndarray, labels: np.ndarray) -> dict[int, int]:
    """Per cluster, the member closest to the cluster mean (lowest index on ties)."""
    X = emb.vectors if isinstance(emb, EmbeddingSet) else np.asarray(emb, dtype=float)
    out: dict[int, int] = {}
    for label in sorted(set(int(l) for l in labels)):
        members = np.flatnonzero(labels == label)
        mean = X[members].mean(axis=0)
        dists = np.linalg.norm(X[members] - mean, axis=1)
        out[label] = int(members[int(np.argmin(dists))])
    return out


@dataclass
class SkillCatalog:
    """Induced skills with dense ids 1..n plus an overflow bucket."""

    skills: list[Skill]
    other_id: int
    m_clusters: int
    n_skills: int
    names_by_id: dict[int, str] = field(init=False)

    def __post_init__(self):
        self.names_by_id = {s.id: s.name for s in self.skills}
        self.names_by_id[self.other_id] = OTHER_NAME

    def name_of(self, skill_id: int | None) -> str:
        if skill_id is None:
            return OTHER_NAME
        return self.names_by_id.get(skill_id, OTHER_NAME)

    def valid_ids(self) -> set[int]:
        return {s.id for s in self.skills}

    def render_for_mapping(self) -> str:
        return "\n".join(f"{s.id}: {s.name}: {s.description}" for s in self.skills)


def _parse_skill_lines(raw: str, n: int) -> list[Skill] | None:
    entries: list[Skill] = []
    for line in raw.splitlines():
        m = _SKILL_LINE.match(line)
        if not m:
            continue
        number, name, desc = int(m.group(1)), m.group(2).strip(), m.group(3).strip()
        if number != len(entries) + 1:
            continue
        entries.append(Skill(id=number, name=name, description=desc))
    if len(entries) != n:
        return None
    return entries


def induce_skills(
    gateway: ModelGateway,
    teacher_cfg: RoleConfig,
    templates: TemplateSet,
    representative_blocks: list[str],
    n_skills: int,
    category: str,
    m_clusters: int,
) -> SkillCatalog:
    """Name n skills from representative question blocks; wrong counts are fatal."""
    clusters_text = "\n".join(
        f"{i}. {block}" for i, block in enumerate(representative_blocks, start=1)
    )
    prompt = templates.render(
        "skill_generation",
        category=category,
        num_of_skills=n_skills,
        question_clusters=clusters_text,
    )
    raw = gateway.complete(teacher_cfg, prompt)
    skills = _parse_skill_lines(raw, n_skills)
    if skills is None:
        raw = gateway.complete(teacher_cfg, prompt + _COUNT_REMINDER.format(n=n_skills))
        skills = _parse_skill_lines(raw, n_skills)
    if skills is None:
        raise SkillError(f"teacher did not produce exactly {n_skills} numbered skills")
    return SkillCatalog(
        skills=skills, other_id=n_skills + 1, m_clusters=m_clusters, n_skills=n_skills
    )


def representative_block(task: Task, chain: SubTaskChain) -> str:
    steps = ", ".join(json.dumps(s.description, ensure_ascii=False) for s in chain.sub_tasks)
    return f"{task.question} Steps to solve: {steps}"


def assign_skills(
    gateway: ModelGateway,
    teacher_cfg: RoleConfig,
    templates: TemplateSet,
    catalog: SkillCatalog,
    task: Task,
    chain: SubTaskChain,
) -> list[int]:
    """Catalog id per sub-task; anything unusable falls back to the other id."""
    sub_tasks_json = json.dumps(
        [{"sub_task": s.description} for s in chain.sub_tasks], ensure_ascii=False
    )
    prompt = templates.render(
        "skill_mapping",
        skills=catalog.render_for_mapping(),
        question=task.question,
        sub_tasks=sub_tasks_json,
    )
    raw = gateway.complete(teacher_cfg, prompt)
    ids = _parse_mapping(raw, chain.k, catalog)
    if ids is None:
        raw = gateway.complete(
            teacher_cfg, prompt + _MAPPING_REMINDER.format(n=chain.k)
        )
        ids = _parse_mapping(raw, chain.k, catalog)
    if ids is None:
        logger.warning(
            "task %s: mapping reply unusable after retry; assigning all steps to other",
            task.id,
        )
        return [catalog.other_id] * chain.k
    return ids


def _parse_mapping(raw: str, expected: int, catalog: SkillCatalog) -> list[int] | None:
    data = first_json_array(raw)
    if data is None or len(data) != expected:
        return None
    valid = catalog.valid_ids()
    ids: list[int] = []
    for item in data:
        sid = item.get("skill") if isinstance(item, dict) else None
        try:
            sid = int(sid)
        except (TypeError, ValueError):
            sid = None
        ids.append(sid if sid in valid else catalog.other_id)
    return ids


def granularity_stats(
    assigned_ids: list[int],
    catalog: SkillCatalog,
    description_vectors: np.ndarray | None = None,
    threshold: float = 0.78,
) -> GranularityStats:
    """Usage entropy, other rate, and skill-description similarity.

    Entropy is in nats over the non-other usage distribution; the normalized
    form divides by ln(n_skills). The similarity block needs description
    embeddings and at least two distinct skills in actual use.
    """
    if not assigned_ids:
        raise SkillError("no skill assignments to summarize")
    total = len(assigned_ids)
    valid = catalog.valid_ids()
    counts: dict[int, int] = {}
    other = 0
    for sid in assigned_ids:
        if sid in valid:
            counts[sid] = counts.get(sid, 0) + 1
        else:
            other += 1
    non_other = total - other
    entropy = 0.0
    if non_other:
        for c in counts.values():
            q = c / non_other
            entropy -= q * math.log(q)
    n = catalog.n_skills
    normalized = entropy / math.log(n) if n >= 2 else 0.0

    mean_cos: float | None = None
    pct_above: float | None = None
    if description_vectors is not None and len(counts) >= 2 and len(catalog.skills) >= 2:
        V = np.asarray(description_vectors, dtype=float)
        norms = np.linalg.norm(V, axis=1)
        V = V / norms[:, None]
        sims = V @ V.T
        iu = np.triu_indices(len(V), k=1)
        pair_vals = sims[iu]
        mean_cos = float(pair_vals.mean())
        pct_above = float(100.0 * np.mean(pair_vals >= threshold))

    return GranularityStats(
        m_clusters=catalog.m_clusters,
        n_skills=catalog.n_skills,
        entropy_nats=entropy,
        normalized_entropy=normalized,
        other_rate=other / total,
        mean_pairwise_cosine=mean_cos,
        pct_pairs_above_threshold=pct_above,
        similarity_threshold=threshold,
    )
