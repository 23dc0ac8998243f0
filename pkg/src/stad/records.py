"""Record types and line-delimited JSON persistence for pipeline runs.

Every stage file starts with a header line carrying the schema version and
the record type, followed by one JSON object per record. Files round-trip:
load(persist(records)) == records.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Type, TypeVar

SCHEMA_VERSION = 1

MANIFEST_NAME = "manifest"

STAGE_ORDER = [
    "ingest",
    "decompose",
    "answer",
    "scaffold",
    "verify",
    "skills",
    "eval",
    "analyze",
]

STATUS_PENDING = "pending"
STATUS_DONE = "done"
STATUS_FAILED = "failed"


class RecordError(Exception):
    """Base error for record persistence problems."""


class SchemaVersionError(RecordError):
    """Raised when a stage file declares an unexpected schema version."""


class StageMissingError(RecordError):
    """Raised when loading a stage that was never persisted."""


@dataclass
class Task:
    """One benchmark question with its ground-truth answer."""

    id: str
    question: str
    answer: str
    source: str = ""
    tags: list[str] = field(default_factory=list)


@dataclass
class SubTask:
    """A single ordered step of a decomposed task.

    skill_id is the catalog id assigned during skill mapping; None until then.
    """

    index: int
    description: str
    explanation: str = ""
    answer: str = ""
    skill_id: int | None = None


@dataclass
class SubTaskChain:
    """Ordered sub-tasks for one task plus the teacher self-consistency bit."""

    task_id: str
    sub_tasks: list[SubTask] = field(default_factory=list)
    teacher_final_consistent: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "SubTaskChain":
        return cls(
            task_id=d["task_id"],
            sub_tasks=[SubTask(**s) for s in d["sub_tasks"]],
            teacher_final_consistent=d["teacher_final_consistent"],
        )

    @property
    def k(self) -> int:
        return len(self.sub_tasks)


@dataclass
class ScaffoldedVariant:
    """A rewritten question with the first `level` intermediate answers woven in.

    injected holds (sub_task_index, answer_text) pairs, one per revealed step.
    """

    task_id: str
    level: int
    rewritten_question: str
    injected: list[tuple[int, str]] = field(default_factory=list)
    teacher_verified: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ScaffoldedVariant":
        return cls(
            task_id=d["task_id"],
            level=d["level"],
            rewritten_question=d["rewritten_question"],
            injected=[(int(i), str(a)) for i, a in d["injected"]],
            teacher_verified=d["teacher_verified"],
        )


@dataclass
class ControlVariant:
    """A scaffolded variant with every injected value masked by a placeholder."""

    task_id: str
    level: int
    masked_question: str
    n_masked: int


@dataclass
class Skill:
    """One induced skill in the catalog."""

    id: int
    name: str
    description: str = ""


@dataclass
class EvalOutcome:
    """Per (task, target) evaluation record.

    variant_scores is the evaluated prefix over levels 1..n_levels; levels
    past an early stop are simply absent. raw_answers maps str(level) to the
    model's reply, with "0" holding the answer to the original question.
    """

    task_id: str
    target_model: str
    original_correct: bool
    n_levels: int
    variant_scores: list[bool] = field(default_factory=list)
    raw_answers: dict[str, str] = field(default_factory=dict)
    judge_flags: list[str] = field(default_factory=list)


@dataclass
class ProbeOutcome:
    """Result of posing one sub-task on its own to a target model."""

    task_id: str
    target_model: str
    sub_task_index: int
    skill_id: int | None
    correct: bool


@dataclass
class ControlOutcome:
    """Result of evaluating a placeholder control variant."""

    task_id: str
    target_model: str
    level: int
    correct: bool


@dataclass
class ScaffoldProfile:
    """Minimum scaffolding level and bottleneck skills for one (task, target)."""

    task_id: str
    target_model: str
    k: int
    bottleneck: list[str] = field(default_factory=list)
    combination: list[str] = field(default_factory=list)


@dataclass
class FilterReport:
    """Outcome of teacher verification over scaffolded variants."""

    n_before: int
    n_after: int
    level_failures: dict[str, int] = field(default_factory=dict)
    final_inconsistent: int = 0


@dataclass
class DecompositionQuality:
    """Corpus-level redundancy and coverage figures."""

    n_chains: int
    redundancy_pct: float
    coverage_pct: float


@dataclass
class GranularityStats:
    """Skill-catalog granularity diagnostics for one (m, n) configuration.

    Similarity fields are None when fewer than two catalog skills are in use.
    """

    m_clusters: int
    n_skills: int
    entropy_nats: float
    normalized_entropy: float
    other_rate: float
    mean_pairwise_cosine: float | None = None
    pct_pairs_above_threshold: float | None = None
    similarity_threshold: float = 0.78


@dataclass
class CombinationRow:
    """Aggregate scaffolding stats for one (skill sequence, target) group."""

    combination: list[str]
    target_model: str
    n_tasks: int
    pct_k0: float
    pct_kpos: float
    pct_intractable: float
    mean_k_positive: float | None
    mean_k_nonneg: float | None


@dataclass
class BottleneckRow:
    """One ranked bottleneck entry for a target model."""

    target_model: str
    bucket: str
    skills: list[str]
    count: int
    rank: int


@dataclass
class SkillAccuracyRow:
    """Standalone accuracy of one skill for one target model."""

    skill_name: str
    target_model: str
    n_probes: int
    n_correct: int
    accuracy_pct: float


@dataclass
class AblationRow:
    """Scaffolded-vs-control comparison for one target model."""

    target_model: str
    n_tasks: int
    baseline_pct: float
    scaffolded_pct: float
    control_pct: float


@dataclass
class FilteringValidation:
    """Difficulty and topic-distribution comparison before/after filtering."""

    n_before: int
    n_after: int
    acc_before_pct: float
    acc_after_pct: float
    pearson_r: float
    p_value: float
    n_clusters: int
    clusters_reduced: bool = False


RECORD_TYPES: dict[str, type] = {
    cls.__name__: cls
    for cls in (
        Task,
        SubTask,
        SubTaskChain,
        ScaffoldedVariant,
        ControlVariant,
        Skill,
        EvalOutcome,
        ProbeOutcome,
        ControlOutcome,
        ScaffoldProfile,
        FilterReport,
        DecompositionQuality,
        GranularityStats,
        CombinationRow,
        BottleneckRow,
        SkillAccuracyRow,
        AblationRow,
        FilteringValidation,
    )
}

R = TypeVar("R")


def to_record(obj: Any) -> dict:
    return dataclasses.asdict(obj)


def from_record(cls: Type[R], d: dict) -> R:
    if hasattr(cls, "from_dict"):
        return cls.from_dict(d)
    return cls(**d)


def dumps_record(d: dict) -> str:
    return json.dumps(d, ensure_ascii=False, separators=(", ", ": "))


def write_records(
    path: Path,
    record_cls: type,
    records: Iterable[Any],
    meta: dict | None = None,
) -> int:
    """Write a header line plus one JSON line per record. Returns the count."""
    if record_cls.__name__ not in RECORD_TYPES:
        raise RecordError(f"unknown record type {record_cls.__name__!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [to_record(r) for r in records]
    header = {
        "schema_version": SCHEMA_VERSION,
        "record_type": record_cls.__name__,
        "count": len(rows),
    }
    if meta:
        header["meta"] = meta
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(dumps_record(header) + "\n")
        for row in rows:
            fh.write(dumps_record(row) + "\n")
    tmp.replace(path)
    return len(rows)


def _read_header(path: Path, record_cls: type) -> tuple[dict, list[str]]:
    path = Path(path)
    if not path.exists():
        raise StageMissingError(f"stage missing: no records at {path}")
    # Split on \n only: JSON strings may legally carry raw U+0085/U+2028/U+2029,
    # which str.splitlines() would treat as record boundaries.
    with path.open(encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if not any(line.strip() for line in lines):
        raise RecordError(f"empty records file at {path}")
    header = json.loads(lines[0])
    found = header.get("schema_version")
    if found != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"schema version mismatch at {path}: expected {SCHEMA_VERSION}, found {found}"
        )
    declared = header.get("record_type")
    if declared != record_cls.__name__:
        raise RecordError(
            f"record type mismatch at {path}: expected {record_cls.__name__}, found {declared}"
        )
    return header, lines[1:]


def read_records(path: Path, record_cls: Type[R]) -> list[R]:
    header, lines = _read_header(Path(path), record_cls)
    out = [from_record(record_cls, json.loads(line)) for line in lines if line.strip()]
    declared = header.get("count")
    if declared is not None and declared != len(out):
        raise RecordError(
            f"record count mismatch at {path}: header says {declared}, found {len(out)}"
        )
    return out


def read_meta(path: Path, record_cls: type) -> dict:
    header, _ = _read_header(Path(path), record_cls)
    return header.get("meta", {})


@dataclass
class RunManifest:
    """Run-level bookkeeping: what ran, what it produced, and with what roles."""

    run_id: str
    corpus_hash: str = ""
    role_configs: dict[str, dict] = field(default_factory=dict)
    stage_status: dict[str, dict] = field(default_factory=dict)
    created_at: str = ""

    def status_of(self, stage: str) -> str:
        return self.stage_status.get(stage, {}).get("status", STATUS_PENDING)

    def count_of(self, stage: str) -> int | None:
        return self.stage_status.get(stage, {}).get("count")

    def mark(self, stage: str, status: str, count: int | None = None) -> None:
        entry: dict[str, Any] = {"status": status}
        if count is not None:
            entry["count"] = count
        self.stage_status[stage] = entry


class RunDir:
    """A run directory: manifest, per-stage record files, and the response cache."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self._lock = threading.Lock()

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def stage_path(self, stage: str) -> Path:
        return self.root / f"{stage}.records"

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def init_manifest(
        self,
        run_id: str,
        corpus_hash: str = "",
        role_configs: dict[str, dict] | None = None,
    ) -> RunManifest:
        """Create the manifest if absent; an existing manifest is kept as is."""
        if self.exists():
            return self.load_manifest()
        manifest = RunManifest(
            run_id=run_id,
            corpus_hash=corpus_hash,
            role_configs=role_configs or {},
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        self.save_manifest(manifest)
        return manifest

    def load_manifest(self) -> RunManifest:
        if not self.exists():
            raise StageMissingError(f"no manifest at {self.manifest_path}")
        data = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        found = data.pop("schema_version", None)
        if found != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"schema version mismatch at {self.manifest_path}: "
                f"expected {SCHEMA_VERSION}, found {found}"
            )
        return RunManifest(**data)

    def save_manifest(self, manifest: RunManifest) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        data = {"schema_version": SCHEMA_VERSION, **to_record(manifest)}
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        tmp.replace(self.manifest_path)

    def persist(
        self,
        stage: str,
        record_cls: type,
        records: Iterable[Any],
        meta: dict | None = None,
    ) -> int:
        """Write a stage file and mirror its record count into the manifest."""
        count = write_records(self.stage_path(stage), record_cls, records, meta=meta)
        with self._lock:
            manifest = self.load_manifest() if self.exists() else self.init_manifest(self.root.name)
            manifest.mark(stage, STATUS_DONE, count)
            self.save_manifest(manifest)
        return count

    def load(self, stage: str, record_cls: Type[R]) -> list[R]:
        return read_records(self.stage_path(stage), record_cls)

    def load_meta(self, stage: str, record_cls: type) -> dict:
        return read_meta(self.stage_path(stage), record_cls)

    def mark_stage(self, stage: str, status: str, count: int | None = None) -> None:
        with self._lock:
            manifest = self.load_manifest()
            manifest.mark(stage, status, count)
            self.save_manifest(manifest)

    def validate(self) -> list[str]:
        """Check that every completed stage's file exists with the recorded count."""
        problems = []
        manifest = self.load_manifest()
        for stage, entry in manifest.stage_status.items():
            if entry.get("status") != STATUS_DONE:
                continue
            path = self.stage_path(stage)
            if not path.exists():
                problems.append(f"stage {stage} marked done but {path} is missing")
                continue
            expected = entry.get("count")
            if expected is None:
                continue
            with path.open(encoding="utf-8") as fh:
                header = json.loads(fh.readline())
            if header.get("count") != expected:
                problems.append(
                    f"stage {stage} count mismatch: manifest {expected}, file {header.get('count')}"
                )
        return problems


def content_id(question: str, answer: str) -> str:
    """Stable task id derived from the question/answer content."""
    digest = hashlib.sha256(f"{question}\x1f{answer}".encode("utf-8")).hexdigest()
    return f"t-{digest[:16]}"


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
