"""Command-line entry point for the scaffolded task design pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import ConfigError, load_config
from .pipeline import Pipeline, StageError
from .records import STAGE_ORDER, write_records
from .reporting import FORMATS
from .synthetic import DEFAULT_SKILLS, MAX_K, MIN_K, gen_synthetic
from .synthetic import TruthChain

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

logger = logging.getLogger("stad")


def _int_list(raw: str) -> list[int]:
    try:
        values = [int(part) for part in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {raw!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stad",
        description="Decompose questions into sub-task chains, scaffold them, "
        "and locate each model's minimum scaffolding level.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", required=True, help="run config (YAML or JSON)")
        return p

    for stage in STAGE_ORDER:
        p = with_config(sub.add_parser(stage, help=f"run the {stage} stage"))
        p.add_argument("--force", action="store_true", help="redo even if marked done")
        if stage == "decompose":
            p.add_argument("--max-segments", type=int, help="segment ceiling override")
        if stage == "skills":
            p.add_argument("--m", type=int, help="cluster count override")
            p.add_argument("--n", type=int, help="skill count override")
            p.add_argument("--sweep-m", type=_int_list, help="cluster counts to sweep")
            p.add_argument("--sweep-n", type=_int_list, help="skill counts to sweep")
        if stage == "eval":
            p.add_argument(
                "--eval-all-levels", action="store_true",
                help="score every scaffolding level instead of early-stopping",
            )

    p = with_config(sub.add_parser("run", help="run every stage in order"))
    p.add_argument("--upto", choices=STAGE_ORDER, help="stop after this stage")
    p.add_argument("--force", action="store_true", help="redo stages marked done")
    p.add_argument("--eval-all-levels", action="store_true")

    with_config(sub.add_parser("ablate", help="placeholder-control ablation"))
    with_config(
        sub.add_parser("validate-filtering", help="difficulty/topic check of the filter")
    )

    p = with_config(sub.add_parser("report", help="render report tables"))
    p.add_argument("--format", choices=FORMATS, default="table")
    p.add_argument("--top-n", type=int, help="bottleneck rows per bucket")
    p.add_argument("--min-group", type=int, help="minimum combination group size")

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus with known truth")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=50, help="number of tasks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-min", type=int, default=MIN_K)
    p.add_argument("--k-max", type=int, default=MAX_K)
    p.add_argument("--verify-fail-frac", type=float, default=0.0,
                   help="fraction of tasks marked to fail teacher verification")
    p.add_argument("--verify-fail-level", type=int, default=2)

    return parser


def _apply_overrides(cfg, args) -> None:
    if getattr(args, "max_segments", None):
        cfg.max_segments = args.max_segments
    if getattr(args, "m", None):
        cfg.skills.m_clusters = args.m
    if getattr(args, "n", None):
        cfg.skills.n_skills = args.n
    if getattr(args, "eval_all_levels", False):
        cfg.eval.eval_all_levels = True
    if getattr(args, "top_n", None):
        cfg.analyze.top_n = args.top_n
    if getattr(args, "min_group", None):
        cfg.analyze.min_group = args.min_group


def _cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks, truths = gen_synthetic(
        args.n,
        k_range=(args.k_min, args.k_max),
        seed=args.seed,
        verify_fail_frac=args.verify_fail_frac,
        verify_fail_level=args.verify_fail_level,
    )
    corpus_path = out / "corpus.jsonl"
    with corpus_path.open("w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(asdict(task), ensure_ascii=False) + "\n")
    truth_path = out / "truth.records"
    write_records(truth_path, TruthChain, truths, meta={"seed": args.seed})
    print(f"wrote {len(tasks)} tasks to {corpus_path}")
    print(f"wrote truth chains to {truth_path}")
    print(f"skills in play: {', '.join(DEFAULT_SKILLS)}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command == "gen-synthetic":
        return _cmd_gen_synthetic(args)

    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        pipe = Pipeline(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            counts = pipe.run_all(upto=args.upto, force=args.force)
            for stage, count in counts.items():
                print(f"{stage}: {count} records")
        elif args.command == "ablate":
            for row in pipe.run_ablation():
                print(
                    f"{row.target_model}: baseline {row.baseline_pct:.1f}% "
                    f"scaffolded {row.scaffolded_pct:.1f}% control {row.control_pct:.1f}%"
                )
        elif args.command == "validate-filtering":
            v = pipe.run_validation()
            print(
                f"accuracy {v.acc_before_pct:.1f}% -> {v.acc_after_pct:.1f}% "
                f"(n {v.n_before} -> {v.n_after}); topic r={v.pearson_r:.4f}"
            )
        elif args.command == "report":
            for path in pipe.write_reports(fmt=args.format):
                print(f"wrote {path}")
        elif args.command == "skills" and (args.sweep_m or args.sweep_n):
            if not (args.sweep_m and args.sweep_n):
                print("sweep needs both --sweep-m and --sweep-n", file=sys.stderr)
                return EXIT_CONFIG
            rows = pipe.run_sweep(args.sweep_m, args.sweep_n)
            print(f"swept {len(rows)} configurations")
        else:
            count = pipe.run_stage(args.command, force=args.force)
            print(f"{args.command}: {count} records")
    except StageError as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
