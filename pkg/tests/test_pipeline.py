import json

import pytest

from synthetic_run import (
    EXPECTED_ACCEPTED,
    EXPECTED_ATTEMPTS,
    GROUP_NOOP,
    GROUP_RETRY,
    GROUP_SAFE_FIX,
    GROUP_UNSAFE,
    write_synthetic_run,
)
from trace_repair.cli import main
from trace_repair.pipeline import (
    MODE_FILTER_DATASET,
    MODE_REPLAY,
    MODE_REPORT,
    PROGRESS_FILE,
    RunManifest,
    run_pipeline,
)
from trace_repair.datasets import DatasetRecord, write_dataset
from trace_repair.providers import ReplayCacheMiss


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    directory = tmp_path_factory.mktemp("synthetic")
    dataset_path, cache_path = write_synthetic_run(directory)
    return directory, dataset_path, cache_path


def _replay_manifest(output_dir, dataset_path, cache_path, **kwargs):
    from pathlib import Path

    return RunManifest(
        mode=MODE_REPLAY,
        dataset_path=Path(dataset_path),
        output_dir=Path(output_dir),
        cache_path=Path(cache_path),
        **kwargs,
    )


class TestReplayRun:
    def test_expected_transitions(self, synthetic, tmp_path):
        directory, dataset_path, cache_path = synthetic
        result = run_pipeline(_replay_manifest(tmp_path / "run", dataset_path, cache_path))
        report = result.report
        assert report.total == 50
        assert report.accepted == EXPECTED_ACCEPTED
        assert report.fixed == EXPECTED_ACCEPTED
        assert report.broken == 0
        assert report.attempts == EXPECTED_ATTEMPTS

        predictions = {
            row["example_id"]: row
            for row in map(json.loads, open(result.paths["predictions"]))
        }
        for example_id in GROUP_SAFE_FIX:
            assert predictions[example_id]["accepted"]
        for example_id in GROUP_UNSAFE + GROUP_NOOP:
            assert not predictions[example_id]["accepted"]
            assert predictions[example_id]["final_answer"] == predictions[example_id][
                "initial_answer"
            ]

    def test_untriggered_traces_preserved_verbatim(self, synthetic, tmp_path):
        from synthetic_run import GROUP_CLEAN, build_synthetic_run

        directory, dataset_path, cache_path = synthetic
        result = run_pipeline(_replay_manifest(tmp_path / "run", dataset_path, cache_path))
        cached = {r.example_id: r.cached_initial_trace for r in build_synthetic_run()[0]}
        predictions = {
            row["example_id"]: row
            for row in map(json.loads, open(result.paths["predictions"]))
        }
        for example_id in GROUP_CLEAN:
            assert not predictions[example_id]["triggered"]
            assert predictions[example_id]["final_trace"] == cached[example_id]

    def test_retry_path_exercised(self, synthetic, tmp_path):
        directory, dataset_path, cache_path = synthetic
        result = run_pipeline(_replay_manifest(tmp_path / "run", dataset_path, cache_path))
        retried = {
            row["example_id"]
            for row in map(json.loads, open(result.paths["candidates"]))
            if row["retried"]
        }
        assert retried == set(GROUP_RETRY[:4])

    def test_risk_log_schema(self, synthetic, tmp_path):
        directory, dataset_path, cache_path = synthetic
        result = run_pipeline(_replay_manifest(tmp_path / "run", dataset_path, cache_path))
        rows = [json.loads(line) for line in open(result.paths["risk_log"])]
        assert len(rows) == 50
        for row in rows:
            assert {"example_id", "initial_risks", "initial_score", "triggered", "candidates"} <= set(row)
        noop_row = [row for row in rows if row["example_id"] == GROUP_NOOP[0]][0]
        assert [c["rejection_reasons"] for c in noop_row["candidates"]] == [["no_op"]] * 3

    def test_risk_summary_identities(self, synthetic, tmp_path):
        directory, dataset_path, cache_path = synthetic
        result = run_pipeline(_replay_manifest(tmp_path / "run", dataset_path, cache_path))
        summary = json.loads(open(result.paths["risk_summary"]).read())
        assert summary["patterns_inspected"] == EXPECTED_ATTEMPTS
        assert summary["accepted_patterns"] == EXPECTED_ACCEPTED
        assert (
            summary["accepted_patterns"] + summary["rejected_patterns"]
            == summary["patterns_inspected"]
        )
        assert summary["noop_rejections"] == 3 * len(GROUP_NOOP)
        assert (
            summary["answer_changing_accepted"] + summary["answer_changing_rejected"]
            == summary["answer_changing_candidates"]
        )
        # Under the main configuration every accepted answer-changing
        # candidate is graph-clean.
        assert (
            summary["accepted_answer_changing_graph_clean"]
            == summary["answer_changing_accepted"]
        )

    def test_byte_identical_across_runs(self, synthetic, tmp_path):
        directory, dataset_path, cache_path = synthetic
        first = run_pipeline(_replay_manifest(tmp_path / "a", dataset_path, cache_path))
        second = run_pipeline(_replay_manifest(tmp_path / "b", dataset_path, cache_path))
        for key in ("predictions", "candidates", "risk_log", "report_json", "report_text"):
            assert first.paths[key].read_bytes() == second.paths[key].read_bytes()

    def test_resume_matches_uninterrupted(self, synthetic, tmp_path):
        directory, dataset_path, cache_path = synthetic
        # Remove one cache entry so the run crashes partway through.
        rows = [json.loads(line) for line in open(cache_path)]
        crash_id = GROUP_NOOP[2]
        partial_cache = tmp_path / "partial_cache.jsonl"
        with open(partial_cache, "w") as handle:
            for row in rows:
                if row["example_id"] != crash_id:
                    handle.write(json.dumps(row) + "\n")

        crash_dir = tmp_path / "crash"
        with pytest.raises(ReplayCacheMiss):
            run_pipeline(_replay_manifest(crash_dir, dataset_path, partial_cache))
        assert (crash_dir / PROGRESS_FILE).exists()

        resumed = run_pipeline(
            _replay_manifest(crash_dir, dataset_path, cache_path, resume=True)
        )
        fresh = run_pipeline(_replay_manifest(tmp_path / "fresh", dataset_path, cache_path))
        for key in ("predictions", "candidates", "risk_log", "report_json"):
            assert resumed.paths[key].read_bytes() == fresh.paths[key].read_bytes()


class TestGuardsEndToEnd:
    def test_equation_support_guard_prevents_broken_correct(self, tmp_path):
        # A correct-but-triggered trace gets a clean-looking candidate whose
        # final answer is not derived by any verified equation. The main
        # configuration preserves the correct answer; the ablation without
        # equation support accepts the candidate and breaks it.
        record = DatasetRecord(
            example_id="x1",
            problem_text=(
                "Noah packs 3 boxes with 4 pens each, plus 5 erasers and 11 "
                "rulers. How many pens does Noah pack in all?"
            ),
            gold_answer="12",
            cached_initial_trace="3 * 4 = 12\nFinal Answer: 12",
        )
        dataset_path = tmp_path / "one.jsonl"
        write_dataset([record], dataset_path)
        unsupported = json.dumps(
            {"steps": ["3 * 4 = 12", "5 + 11 = 16"], "final_answer": "20"}
        )
        cache_path = tmp_path / "cache.jsonl"
        cache_path.write_text(
            "\n".join(
                json.dumps(
                    {"example_id": "x1", "attempt_index": attempt, "raw_output": unsupported}
                )
                for attempt in range(3)
            )
            + "\n"
        )

        main_run = run_pipeline(
            _replay_manifest(tmp_path / "main", dataset_path, cache_path)
        )
        assert main_run.report.broken == 0
        assert main_run.report.accepted == 0
        candidates = [json.loads(line) for line in open(main_run.paths["candidates"])]
        assert all(
            "unsupported_answer" in row["verdict"]["rejection_reasons"]
            for row in candidates
        )

        from trace_repair.policy import PolicyConfig

        ablated = run_pipeline(
            _replay_manifest(
                tmp_path / "ablated",
                dataset_path,
                cache_path,
                config=PolicyConfig(disable_equation_support=True),
            )
        )
        assert ablated.report.accepted == 1
        assert ablated.report.broken == 1
        assert ablated.report.harm_rate == 100.0


class TestReportMode:
    def test_recomputes_identically_without_provider(self, synthetic, tmp_path):
        from pathlib import Path

        directory, dataset_path, cache_path = synthetic
        run = run_pipeline(_replay_manifest(tmp_path / "run", dataset_path, cache_path))
        manifest = RunManifest(
            mode=MODE_REPORT,
            dataset_path=Path(dataset_path),
            output_dir=tmp_path / "report",
            predictions_path=run.paths["predictions"],
        )
        recomputed = run_pipeline(manifest)
        assert recomputed.report.to_json_dict() == run.report.to_json_dict()


class TestFilterMode:
    def test_filter_and_sample(self, tmp_path):
        records = [
            DatasetRecord(f"n{i}", f"How many things? {i} and {i + 1}.", str(i), None)
            for i in range(30)
        ]
        records.append(DatasetRecord("y", "Does it fit? 2 boxes.", "yes", None))
        records.append(DatasetRecord("r", "How many? 1 or 2.", "2:3", None))
        dataset_path = tmp_path / "pool.jsonl"
        write_dataset(records, dataset_path)

        manifest = RunManifest(
            mode=MODE_FILTER_DATASET,
            dataset_path=dataset_path,
            output_dir=tmp_path / "filtered",
            seed=42,
            sample_size=10,
        )
        result = run_pipeline(manifest)
        counts = json.load(open(result.paths["filter_counts"]))
        assert counts["pool"] == 32
        assert counts["kept"] == 30
        assert counts["kept"] + sum(counts["rejected"].values()) == counts["pool"]
        sample_ids = open(result.paths["sample_ids"]).read().split()
        assert len(sample_ids) == 10
        assert len(set(sample_ids)) == 10

    def test_sampling_requires_seed(self, tmp_path):
        manifest = RunManifest(
            mode=MODE_FILTER_DATASET,
            dataset_path=tmp_path / "x.jsonl",
            output_dir=tmp_path,
            sample_size=5,
        )
        with pytest.raises(ValueError, match="seed"):
            run_pipeline(manifest)


class TestCli:
    def test_replay_verb(self, synthetic, tmp_path, capsys):
        directory, dataset_path, cache_path = synthetic
        code = main(
            [
                "replay",
                "--dataset",
                str(dataset_path),
                "--cache",
                str(cache_path),
                "--output-dir",
                str(tmp_path / "cli_run"),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "final accuracy" in out
        assert "90.00" in out

    def test_filter_verb(self, tmp_path, capsys):
        records = [DatasetRecord("a", "How many? 1 and 2.", "3", None)]
        dataset_path = tmp_path / "tiny.jsonl"
        write_dataset(records, dataset_path)
        code = main(
            ["filter", "--dataset", str(dataset_path), "--output-dir", str(tmp_path / "f")]
        )
        assert code == 0

    def test_report_verb(self, synthetic, tmp_path, capsys):
        directory, dataset_path, cache_path = synthetic
        run = run_pipeline(_replay_manifest(tmp_path / "base", dataset_path, cache_path))
        code = main(
            [
                "report",
                "--predictions",
                str(run.paths["predictions"]),
                "--output-dir",
                str(tmp_path / "rep"),
            ]
        )
        assert code == 0
        assert "90.00" in capsys.readouterr().out

    def test_ablation_flags_change_config(self, synthetic, tmp_path):
        directory, dataset_path, cache_path = synthetic
        code = main(
            [
                "replay",
                "--dataset",
                str(dataset_path),
                "--cache",
                str(cache_path),
                "--output-dir",
                str(tmp_path / "ablate"),
                "--no-graph-guard",
                "--n-candidates",
                "3",
            ]
        )
        assert code == 0

    def test_config_file_and_env_precedence(self, synthetic, tmp_path, monkeypatch):
        directory, dataset_path, cache_path = synthetic
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps({"n_candidates": 1, "min_repair_chars": 10}))
        # Environment overrides the file; flags would override both.
        monkeypatch.setenv("LLM_REPAIR_NUM_CANDIDATES", "3")
        code = main(
            [
                "replay",
                "--dataset",
                str(dataset_path),
                "--cache",
                str(cache_path),
                "--output-dir",
                str(tmp_path / "cfgrun"),
                "--config",
                str(config_path),
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "cfgrun" / "report.json").read_text())
        # n_candidates=3 from the environment: the no-op group still burns
        # three attempts per example, as in the default run.
        assert report["attempts"] == 50
