"""Command-line behavior: exit codes, output, and the synthetic generator."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from conftest import sim_config_dict, target_spec, write_corpus
from stad.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from stad.synthetic import DEFAULT_SKILLS


def write_config(tmp_path: Path, **kw) -> Path:
    corpus_path, truth_path, _, _ = write_corpus(tmp_path / "data", n=kw.pop("n_tasks", 8))
    targets = kw.pop(
        "targets",
        [target_spec("sim-alpha", [s for s in DEFAULT_SKILLS if s != "equal-partitioning"])],
    )
    data = sim_config_dict(tmp_path / "run", corpus_path, truth_path, targets, **kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_gen_synthetic_deterministic(tmp_path, capsys):
    args = ["gen-synthetic", "--n", "10", "--seed", "3", "--k-min", "3", "--k-max", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "wrote 10 tasks" in out
    for name in ("corpus.jsonl", "truth.records"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_full_run_exit_zero(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ingest: 8 records" in out
    assert "analyze: 8 records" in out


def test_single_stage_prints_count(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["ingest", "--config", str(config)]) == EXIT_OK
    assert "ingest: 8 records" in capsys.readouterr().out


def test_premature_stage_exit_three(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["eval", "--config", str(config)]) == EXIT_STAGE
    assert "stage error" in capsys.readouterr().err


def test_bad_config_exit_two(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["run", "--config", str(missing)]) == EXIT_CONFIG

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"run_dir": str(tmp_path / "r")}), encoding="utf-8")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_report_formats(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config)]) == EXIT_OK
    assert main(["report", "--config", str(config), "--format", "csv"]) == EXIT_OK
    out = capsys.readouterr().out
    csvs = [line.split("wrote ", 1)[1] for line in out.splitlines() if "wrote " in line]
    assert csvs and all(p.endswith(".csv") for p in csvs)
    assert main(["report", "--config", str(config), "--format", "markdown"]) == EXIT_OK
    md_line = capsys.readouterr().out.splitlines()[0]
    assert md_line.endswith(".md")


def test_sweep_needs_both_flags(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config), "--upto", "verify"]) == EXIT_OK
    capsys.readouterr()
    assert main(["skills", "--config", str(config), "--sweep-m", "2,4"]) == EXIT_CONFIG
    assert "--sweep-n" in capsys.readouterr().err
    assert (
        main([
            "skills", "--config", str(config),
            "--sweep-m", "2,4", "--sweep-n", "3",
        ])
        == EXIT_OK
    )
    assert "swept 2 configurations" in capsys.readouterr().out


def test_stage_overrides(tmp_path, capsys):
    config = write_config(tmp_path)
    assert main(["run", "--config", str(config), "--upto", "verify"]) == EXIT_OK
    assert main(["skills", "--config", str(config), "--m", "3", "--n", "4"]) == EXIT_OK
    capsys.readouterr()

    from stad.config import load_config
    from stad.pipeline import Pipeline, load_catalog

    catalog = load_catalog(Pipeline(load_config(str(config))).run)
    assert catalog.m_clusters == 3
    assert catalog.n_skills == 4


def test_ablate_and_validate_commands(tmp_path, capsys):
    config = write_config(tmp_path, n_tasks=10)
    assert main(["run", "--config", str(config)]) == EXIT_OK
    capsys.readouterr()
    assert main(["ablate", "--config", str(config)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "scaffolded 100.0%" in out and "control 0.0%" in out
    assert main(["validate-filtering", "--config", str(config)]) == EXIT_OK
    assert "topic r=1.0000" in capsys.readouterr().out


def test_missing_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
