"""End-to-end runs: diagnose, trigger, repair or preserve, evaluate, write.

Every run writes the same artifact set into its output directory:

    predictions.jsonl   one line per example (answers + transition)
    candidates.jsonl    one line per generation attempt (the replay cache)
    risk_log.jsonl      initial risk categories + candidate acceptance pattern
    report.json         the structured run report
    report.txt          the same report as a plain table
    progress.jsonl      per-example checkpoint, appended as examples finish

Final artifacts are serialized once, in example-id order, so interrupted
runs can resume from progress.jsonl and still produce byte-identical
output.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .answers import ReasoningTrace, answers_equivalent, normalize_answer
from .datasets import DatasetRecord, FilterResult, filter_numeric, load_dataset, sample_subset, write_dataset
from .diagnostics import diagnose
from .orchestrator import (
    BASELINE_MODES,
    CandidateRecord,
    MODE_SOLVE_ALL,
    baseline_example,
    repair_example,
)
from .policy import PolicyConfig, trigger
from .providers import RemoteProvider, ReplayProvider
from .reporting import (
    RunReport,
    TransitionLabel,
    compute_report,
    render_report,
)
from .risk_graph import risk_categories

log = logging.getLogger(__name__)

MODE_GUARDED = "guarded"
MODE_REPLAY = "replay"
MODE_FILTER_DATASET = "filter_dataset"
MODE_REPORT = "report"

RUN_MODES = (MODE_GUARDED, MODE_REPLAY, *BASELINE_MODES, MODE_FILTER_DATASET, MODE_REPORT)

# Consecutive examples whose generations all fail at the transport level
# before the run is declared dead and aborted for a later resume.
OUTAGE_EXAMPLE_LIMIT = 3


class ProviderOutageError(RuntimeError):
    """Sustained provider failure; the run checkpoint allows a resume."""

PREDICTIONS_FILE = "predictions.jsonl"
CANDIDATES_FILE = "candidates.jsonl"
RISK_LOG_FILE = "risk_log.jsonl"
RISK_SUMMARY_FILE = "risk_summary.json"
REPORT_JSON_FILE = "report.json"
REPORT_TEXT_FILE = "report.txt"
PROGRESS_FILE = "progress.jsonl"


@dataclass
class RunManifest:
    mode: str
    dataset_path: Path
    output_dir: Path
    config: PolicyConfig = field(default_factory=PolicyConfig)
    provider: str = "replay"
    cache_path: Path | None = None
    triggered_ids_path: Path | None = None
    seed: int | None = None
    sample_size: int | None = None
    predictions_path: Path | None = None
    resume: bool = False
    harm_budget: float | None = None

    def validate(self) -> None:
        if self.mode not in RUN_MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {RUN_MODES}")
        if self.mode == MODE_FILTER_DATASET and self.sample_size is not None and self.seed is None:
            raise ValueError("sampling requires a seed")
        if (
            self.provider == "replay"
            and self.mode in (MODE_REPLAY, MODE_GUARDED, *BASELINE_MODES)
            and self.cache_path is None
        ):
            raise ValueError("replay provider requires a candidate cache path")


@dataclass
class PipelineResult:
    report: RunReport | None
    paths: dict[str, Path]
    filter_counts: dict[str, int] | None = None


def _build_provider(manifest: RunManifest):
    if manifest.provider == "replay":
        return ReplayProvider.from_jsonl(manifest.cache_path)
    if manifest.provider == "remote":
        return RemoteProvider()
    raise ValueError(f"unknown provider {manifest.provider!r}")


def _load_triggered_ids(path: Path | None) -> set[str] | None:
    if path is None:
        return None
    ids = set()
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                ids.add(line)
    return ids


def _risk_log_entry(
    record: DatasetRecord,
    diag0,
    triggered: bool,
    records: tuple[CandidateRecord, ...] | list[CandidateRecord],
    accepted_index: int | None,
) -> dict:
    return {
        "example_id": record.example_id,
        "initial_risks": risk_categories(diag0.graph),
        "initial_score": diag0.graph.score,
        "initial_diagnosis": diag0.graph.diagnosis,
        "meta_category": diag0.meta.category,
        "triggered": triggered,
        "accepted_attempt": accepted_index,
        "candidates": [
            {
                "attempt_index": item.attempt_index,
                "clean": item.clean,
                "graph_clean": item.graph_clean,
                "answer_changed": item.answer_changed,
                "accepted": bool(item.verdict and item.verdict.accepted),
                "rejection_reasons": list(item.verdict.rejection_reasons) if item.verdict else [],
            }
            for item in records
        ],
    }


def _process_example(
    record: DatasetRecord,
    manifest: RunManifest,
    provider,
    triggered_ids: set[str] | None,
) -> dict:
    """Run one example end to end; returns its progress payload."""
    cfg = manifest.config
    r0 = ReasoningTrace.from_text(record.cached_initial_trace or "")
    diag0 = diagnose(record.problem_text, r0)
    decision = trigger(diag0.meta, diag0.graph, r0, cfg)

    final = r0
    records: tuple[CandidateRecord, ...] = ()
    accepted_index = None

    mode = manifest.mode
    if mode in (MODE_GUARDED, MODE_REPLAY):
        if decision.triggered:
            outcome = repair_example(
                record.example_id,
                record.problem_text,
                r0,
                diag0,
                decision,
                provider,
                cfg,
            )
            final, records, accepted_index = (
                outcome.final_trace,
                outcome.records,
                outcome.accepted_index,
            )
    elif mode in BASELINE_MODES:
        if mode == MODE_SOLVE_ALL:
            targeted = True
        elif triggered_ids is not None:
            targeted = record.example_id in triggered_ids
        else:
            targeted = decision.triggered
        if targeted:
            outcome = baseline_example(
                mode,
                record.example_id,
                record.problem_text,
                r0,
                diag0,
                decision,
                provider,
                cfg,
            )
            final, records, accepted_index = (
                outcome.final_trace,
                outcome.records,
                outcome.accepted_index,
            )
    else:
        raise ValueError(f"mode {mode!r} does not process examples")

    prediction = {
        "example_id": record.example_id,
        "initial_answer": r0.answer.canonical,
        "final_answer": final.answer.canonical,
        "gold_answer": record.gold_answer,
        "triggered": decision.triggered,
        "trigger_reasons": sorted(decision.reasons),
        "accepted": accepted_index is not None,
        "accepted_attempt": accepted_index,
        "final_trace": final.text,
    }
    return {
        "example_id": record.example_id,
        "prediction": prediction,
        "candidates": [item.to_json_dict() for item in records],
        "risk": _risk_log_entry(record, diag0, decision.triggered, records, accepted_index),
    }


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def risk_log_summary(risk_rows: list[dict]) -> dict:
    """Acceptance-decision pattern counts derived from the risk log."""
    patterns = accepted = noop = 0
    changing = changing_accepted = 0
    changing_accepted_graph_clean = 0
    graph_clean = graph_risky = 0
    for row in risk_rows:
        for candidate in row["candidates"]:
            patterns += 1
            if candidate["accepted"]:
                accepted += 1
            if "no_op" in candidate["rejection_reasons"]:
                noop += 1
            if candidate["answer_changed"]:
                changing += 1
                if candidate["accepted"]:
                    changing_accepted += 1
                    if candidate["graph_clean"]:
                        changing_accepted_graph_clean += 1
            if candidate["graph_clean"] is True:
                graph_clean += 1
            elif candidate["graph_clean"] is False:
                graph_risky += 1
    return {
        "patterns_inspected": patterns,
        "accepted_patterns": accepted,
        "rejected_patterns": patterns - accepted,
        "noop_rejections": noop,
        "answer_changing_candidates": changing,
        "answer_changing_accepted": changing_accepted,
        "answer_changing_rejected": changing - changing_accepted,
        "accepted_answer_changing_graph_clean": changing_accepted_graph_clean,
        "candidate_graph_clean_patterns": graph_clean,
        "candidate_graph_risk_patterns": graph_risky,
    }


def _labels_from_predictions(predictions: list[dict]) -> list[TransitionLabel]:
    labels = []
    for row in predictions:
        gold = normalize_answer(row["gold_answer"])
        initial = normalize_answer(row["initial_answer"])
        final = normalize_answer(row["final_answer"])
        labels.append(
            TransitionLabel(
                example_id=row["example_id"],
                initially_correct=answers_equivalent(initial, gold),
                finally_correct=answers_equivalent(final, gold),
                triggered=row["triggered"],
                accepted=row["accepted"],
            )
        )
    return labels


def _finalize_run(
    manifest: RunManifest, results: list[dict], dataset: list[DatasetRecord]
) -> PipelineResult:
    output = manifest.output_dir
    results = sorted(results, key=lambda item: item["example_id"])

    predictions = [item["prediction"] for item in results]
    candidate_rows = [row for item in results for row in item["candidates"]]
    risk_rows = [item["risk"] for item in results]

    labels = _labels_from_predictions(predictions)
    records = [CandidateRecord.from_json_dict(row) for row in candidate_rows]
    gold_by_id = {record.example_id: record.gold_answer for record in dataset}
    report = compute_report(
        labels, records, gold_by_id, harm_budget=manifest.harm_budget
    )

    paths = {
        "predictions": output / PREDICTIONS_FILE,
        "candidates": output / CANDIDATES_FILE,
        "risk_log": output / RISK_LOG_FILE,
        "risk_summary": output / RISK_SUMMARY_FILE,
        "report_json": output / REPORT_JSON_FILE,
        "report_text": output / REPORT_TEXT_FILE,
    }
    _write_jsonl(paths["predictions"], predictions)
    _write_jsonl(paths["candidates"], candidate_rows)
    _write_jsonl(paths["risk_log"], risk_rows)
    _write_jsonl(paths["risk_summary"], [risk_log_summary(risk_rows)])
    _write_jsonl(paths["report_json"], [report.to_json_dict()])
    with open(paths["report_text"], "w", encoding="utf-8") as handle:
        handle.write(render_report(report))
    return PipelineResult(report=report, paths=paths)


def _run_examples(manifest: RunManifest) -> PipelineResult:
    dataset = load_dataset(manifest.dataset_path)
    provider = _build_provider(manifest)
    triggered_ids = _load_triggered_ids(manifest.triggered_ids_path)

    manifest.output_dir.mkdir(parents=True, exist_ok=True)
    progress_path = manifest.output_dir / PROGRESS_FILE

    completed: dict[str, dict] = {}
    if manifest.resume and progress_path.exists():
        with open(progress_path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    payload = json.loads(line)
                    completed[payload["example_id"]] = payload
        log.info("resuming: %d examples already complete", len(completed))
    elif progress_path.exists():
        progress_path.unlink()

    results = list(completed.values())
    outage_streak = 0
    with open(progress_path, "a", encoding="utf-8") as progress:
        for record in dataset:
            if record.example_id in completed:
                continue
            payload = _process_example(record, manifest, provider, triggered_ids)
            candidates = payload["candidates"]
            transport_dead = bool(candidates) and all(
                row["error"] is not None and row["error"].startswith("transport")
                for row in candidates
            )
            if transport_dead:
                # Keep the example out of the durable checkpoint so a resume
                # regenerates it once the provider is back.
                outage_streak += 1
                results.append(payload)
                if outage_streak >= OUTAGE_EXAMPLE_LIMIT:
                    raise ProviderOutageError(
                        f"{outage_streak} consecutive examples lost every "
                        f"generation to transport failures; resume with "
                        f"--resume once the provider recovers"
                    )
                continue
            outage_streak = 0
            results.append(payload)
            progress.write(json.dumps(payload, ensure_ascii=False) + "\n")
            progress.flush()
    return _finalize_run(manifest, results, dataset)


def _run_filter(manifest: RunManifest) -> PipelineResult:
    dataset = load_dataset(manifest.dataset_path)
    manifest.output_dir.mkdir(parents=True, exist_ok=True)
    result: FilterResult = filter_numeric(dataset)

    paths = {
        "numeric_pool": manifest.output_dir / "numeric_pool.jsonl",
        "filter_counts": manifest.output_dir / "filter_counts.json",
    }
    write_dataset(result.kept, paths["numeric_pool"])
    counts = {
        "pool": len(dataset),
        "kept": len(result.kept),
        "rejected": result.counts(),
        "rejected_ids": result.rejected_ids,
    }
    with open(paths["filter_counts"], "w", encoding="utf-8") as handle:
        json.dump(counts, handle, ensure_ascii=False, indent=2)
        handle.write("\n")

    if manifest.sample_size is not None:
        subset = sample_subset(result.kept, manifest.sample_size, manifest.seed)
        paths["sample"] = manifest.output_dir / f"sample_seed{manifest.seed}.jsonl"
        paths["sample_ids"] = manifest.output_dir / f"sample_seed{manifest.seed}_ids.txt"
        write_dataset(subset, paths["sample"])
        with open(paths["sample_ids"], "w", encoding="utf-8") as handle:
            for record in subset:
                handle.write(record.example_id + "\n")
    return PipelineResult(report=None, paths=paths, filter_counts=counts["rejected"])


def _run_report(manifest: RunManifest) -> PipelineResult:
    predictions_path = manifest.predictions_path or (
        manifest.output_dir / PREDICTIONS_FILE
    )
    predictions = []
    with open(predictions_path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                predictions.append(json.loads(line))
    labels = _labels_from_predictions(predictions)

    candidates_path = predictions_path.parent / CANDIDATES_FILE
    records = None
    gold_by_id = None
    if candidates_path.exists():
        records = []
        with open(candidates_path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    records.append(CandidateRecord.from_json_dict(json.loads(line)))
        gold_by_id = {row["example_id"]: row["gold_answer"] for row in predictions}

    report = compute_report(labels, records, gold_by_id, harm_budget=manifest.harm_budget)
    manifest.output_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report_json": manifest.output_dir / REPORT_JSON_FILE,
        "report_text": manifest.output_dir / REPORT_TEXT_FILE,
    }
    _write_jsonl(paths["report_json"], [report.to_json_dict()])
    with open(paths["report_text"], "w", encoding="utf-8") as handle:
        handle.write(render_report(report))
    return PipelineResult(report=report, paths=paths)


def run_pipeline(manifest: RunManifest) -> PipelineResult:
    """Dispatch a manifest to the matching run mode."""
    manifest.validate()
    if manifest.mode == MODE_FILTER_DATASET:
        return _run_filter(manifest)
    if manifest.mode == MODE_REPORT:
        return _run_report(manifest)
    return _run_examples(manifest)
