"""Command-line entry points.

Verbs: run, replay, baseline, filter, sample, report. Configuration
precedence: built-in defaults < --config JSON file < environment
variables < explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .orchestrator import BASELINE_MODES
from .pipeline import (
    MODE_FILTER_DATASET,
    MODE_GUARDED,
    MODE_REPLAY,
    MODE_REPORT,
    RunManifest,
    run_pipeline,
)
from .policy import PolicyConfig, config_from_env, config_from_mapping
from .reporting import render_report


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file of config overrides")
    parser.add_argument("--n-candidates", type=int, dest="n_candidates")
    parser.add_argument("--graph-min-score", type=float, dest="graph_min_score")
    parser.add_argument("--graph-drop-tolerance", type=float, dest="graph_drop_tolerance")
    parser.add_argument("--meta-trigger-threshold", type=float, dest="meta_trigger_threshold")
    parser.add_argument(
        "--missing-constraint-trigger-threshold",
        type=float,
        dest="missing_constraint_trigger_threshold",
    )
    parser.add_argument("--min-repair-chars", type=int, dest="min_repair_chars")
    parser.add_argument(
        "--graph-guard",
        action=argparse.BooleanOptionalAction,
        dest="enable_graph_guard",
        default=None,
    )
    parser.add_argument(
        "--equation-support",
        action=argparse.BooleanOptionalAction,
        dest="equation_support",
        default=None,
        help="require equation support (disable for the ablation)",
    )
    parser.add_argument(
        "--relax-missing-constraint",
        action=argparse.BooleanOptionalAction,
        dest="relax_missing_constraint",
        default=None,
    )
    parser.add_argument(
        "--weak-reasoner-mode",
        action=argparse.BooleanOptionalAction,
        dest="weak_reasoner_mode",
        default=None,
    )


def _build_config(args: argparse.Namespace) -> PolicyConfig:
    config = PolicyConfig()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as handle:
            config = config_from_mapping(json.load(handle), base=config)
    config = config_from_env(base=config)
    overrides = {}
    for name in (
        "n_candidates",
        "graph_min_score",
        "graph_drop_tolerance",
        "meta_trigger_threshold",
        "missing_constraint_trigger_threshold",
        "min_repair_chars",
        "enable_graph_guard",
        "relax_missing_constraint",
        "weak_reasoner_mode",
    ):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "equation_support", None) is not None:
        overrides["disable_equation_support"] = not args.equation_support
    return config.with_overrides(**overrides) if overrides else config


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", type=Path, required=True)
    parser.add_argument("--output-dir", type=Path, required=True)
    parser.add_argument("--provider", choices=("replay", "remote"), default="replay")
    parser.add_argument("--cache", type=Path, help="candidate cache for the replay provider")
    parser.add_argument("--resume", action="store_true")
    parser.add_argument("--harm-budget", type=float, default=None)
    _add_config_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trace-repair",
        description="Guarded selective replacement for cached reasoning traces.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="guarded repair over a dataset")
    _add_run_flags(run_cmd)

    replay_cmd = commands.add_parser("replay", help="guarded repair from a candidate cache")
    _add_run_flags(replay_cmd)

    baseline_cmd = commands.add_parser("baseline", help="direct-regeneration baselines")
    baseline_cmd.add_argument("--mode", choices=BASELINE_MODES, required=True)
    baseline_cmd.add_argument(
        "--triggered-ids",
        type=Path,
        help="trigger set from a prior guarded run (one id per line); "
        "recomputed deterministically when omitted",
    )
    _add_run_flags(baseline_cmd)

    filter_cmd = commands.add_parser("filter", help="numeric answer filtering")
    filter_cmd.add_argument("--dataset", type=Path, required=True)
    filter_cmd.add_argument("--output-dir", type=Path, required=True)

    sample_cmd = commands.add_parser("sample", help="filter then sample a subset")
    sample_cmd.add_argument("--dataset", type=Path, required=True)
    sample_cmd.add_argument("--output-dir", type=Path, required=True)
    sample_cmd.add_argument("--size", type=int, required=True)
    sample_cmd.add_argument("--seed", type=int, required=True)

    report_cmd = commands.add_parser("report", help="recompute a report from predictions")
    report_cmd.add_argument("--predictions", type=Path, required=True)
    report_cmd.add_argument("--output-dir", type=Path, required=True)
    report_cmd.add_argument("--harm-budget", type=float, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    if args.command in ("run", "replay", "baseline"):
        if args.command == "baseline":
            mode = args.mode
            triggered = getattr(args, "triggered_ids", None)
        else:
            mode = MODE_REPLAY if args.command == "replay" else MODE_GUARDED
            triggered = None
        manifest = RunManifest(
            mode=mode,
            dataset_path=args.dataset,
            output_dir=args.output_dir,
            config=_build_config(args),
            provider=args.provider,
            cache_path=args.cache,
            triggered_ids_path=triggered,
            resume=args.resume,
            harm_budget=args.harm_budget,
        )
        result = run_pipeline(manifest)
        print(render_report(result.report), end="")
        return 0

    if args.command == "filter":
        manifest = RunManifest(
            mode=MODE_FILTER_DATASET,
            dataset_path=args.dataset,
            output_dir=args.output_dir,
        )
        result = run_pipeline(manifest)
        print(json.dumps(result.filter_counts, indent=2))
        return 0

    if args.command == "sample":
        manifest = RunManifest(
            mode=MODE_FILTER_DATASET,
            dataset_path=args.dataset,
            output_dir=args.output_dir,
            seed=args.seed,
            sample_size=args.size,
        )
        result = run_pipeline(manifest)
        print(f"sampled ids written to {result.paths['sample_ids']}")
        return 0

    if args.command == "report":
        manifest = RunManifest(
            mode=MODE_REPORT,
            dataset_path=args.predictions,
            output_dir=args.output_dir,
            predictions_path=args.predictions,
            harm_budget=args.harm_budget,
        )
        result = run_pipeline(manifest)
        print(render_report(result.report), end="")
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
