import json

import pytest

from trace_repair.answers import ReasoningTrace
from trace_repair.datasets import DatasetRecord
from trace_repair.diagnostics import diagnose
from trace_repair.orchestrator import (
    MODE_DIRECT_BESTOF3_GATED,
    MODE_SOLVE_ALL,
    MODE_SOLVE_TRIGGERED,
    ProviderTransportError,
    STYLE_HINT_GUIDED,
    STYLE_SOLVE_FRESH,
    STYLE_STRICT_CONCISE,
    build_prompt,
    parse_candidate,
    repair_example,
    run_baseline,
    style_for_attempt,
)
from trace_repair.policy import PolicyConfig, trigger
from trace_repair.providers import ReplayCacheMiss, ReplayEntry, ReplayProvider

CFG = PolicyConfig()
PROBLEM = "Liam has 14 stickers and buys 8 more stickers. How many stickers in total?"
WRONG_INITIAL = "14 + 8 = 23\nFinal Answer: 23"
GOOD = json.dumps({"steps": ["14 + 8 = 22"], "final_answer": "22"})
NOOP = json.dumps({"steps": ["14 + 8 = 23"], "final_answer": "23"})
MALFORMED = "Sure! Here is my corrected attempt: the total is 22."


def _context(initial_text=WRONG_INITIAL):
    r0 = ReasoningTrace.from_text(initial_text)
    diag0 = diagnose(PROBLEM, r0)
    decision = trigger(diag0.meta, diag0.graph, r0, CFG)
    return r0, diag0, decision


class TestPrompts:
    def test_style_cycling(self):
        assert style_for_attempt(0) == STYLE_HINT_GUIDED
        assert style_for_attempt(1) == STYLE_STRICT_CONCISE
        assert style_for_attempt(2) == STYLE_SOLVE_FRESH
        assert style_for_attempt(3) == STYLE_HINT_GUIDED

    def test_skeleton_content(self):
        r0, diag0, _ = _context()
        spec = build_prompt("ex1", PROBLEM, r0.text, diag0, 0)
        rendered = spec.render()
        assert rendered.startswith("System: Return only valid JSON. No markdown.")
        assert '"steps"' in rendered and '"final_answer"' in rendered
        assert "Use at most 4 steps." in rendered
        assert "final_answer is number-only." in rendered
        assert f"Problem: {PROBLEM}" in rendered
        assert "Initial: 14 + 8 = 23" in rendered
        assert "Hint: " in rendered
        assert "Meta error: arithmetic_error" in rendered

    def test_solve_fresh_mentions_warning_signal(self):
        r0, diag0, _ = _context()
        spec = build_prompt("ex1", PROBLEM, r0.text, diag0, 2)
        assert "warning signal" in spec.render()
        assert "at most four compact steps" in spec.render()

    def test_direct_mode_omits_initial_and_hint(self):
        r0, diag0, _ = _context()
        spec = build_prompt("ex1", PROBLEM, r0.text, diag0, 0, include_initial=False)
        rendered = spec.render()
        assert "Initial:" not in rendered
        assert "Hint:" not in rendered
        assert "Semantic error:" not in rendered
        assert "Meta error:" not in rendered

    def test_retry_prompt_embeds_malformed_output(self):
        import dataclasses

        r0, diag0, _ = _context()
        spec = build_prompt("ex1", PROBLEM, r0.text, diag0, 0)
        retry = dataclasses.replace(spec, retry_of=MALFORMED)
        assert MALFORMED in retry.render()
        assert "Rewrite only the malformed output" in retry.render()
        assert retry.prompt_hash() != spec.prompt_hash()

    def test_hint_shows_false_claim(self):
        r0, diag0, _ = _context()
        spec = build_prompt("ex1", PROBLEM, r0.text, diag0, 0)
        assert "14 + 8 = 23" in spec.diagnostic_hint


class TestParseCandidate:
    def test_valid(self):
        parsed = parse_candidate(GOOD)
        assert parsed.final_answer == "22"
        assert parsed.trace_text() == "14 + 8 = 22\nFinal Answer: 22"

    def test_fenced(self):
        assert parse_candidate(f"```json\n{GOOD}\n```") is not None
        assert parse_candidate(f"```\n{GOOD}\n```") is not None

    @pytest.mark.parametrize(
        "raw",
        [
            '{"answer": 12}',
            '{"steps": "not a list", "final_answer": "12"}',
            '{"steps": [1, 2], "final_answer": "12"}',
            '{"steps": ["x"], "final_answer": 12}',
            '{"steps": ["x"], "final_answer": "12 apples"}',
            '{"steps": ["x"], "final_answer": "12", "extra": true}',
            "not json at all",
            "",
        ],
    )
    def test_failures(self, raw):
        assert parse_candidate(raw) is None


class TestRepairExample:
    def test_first_accepted_wins_and_short_circuits(self):
        r0, diag0, decision = _context()
        # Only attempts 0 and 1 exist in the cache; consulting attempt 2
        # would raise a loud cache miss.
        provider = ReplayProvider(
            {
                ("ex1", 0): ReplayEntry(NOOP),
                ("ex1", 1): ReplayEntry(GOOD),
            }
        )
        outcome = repair_example("ex1", PROBLEM, r0, diag0, decision, provider, CFG)
        assert outcome.accepted_index == 1
        assert outcome.final_trace.answer.canonical == "22"
        assert [record.attempt_index for record in outcome.records] == [0, 1]

    def test_all_rejected_preserves_initial(self):
        r0, diag0, decision = _context()
        provider = ReplayProvider(
            {("ex1", attempt): ReplayEntry(NOOP) for attempt in range(3)}
        )
        outcome = repair_example("ex1", PROBLEM, r0, diag0, decision, provider, CFG)
        assert not outcome.accepted
        assert outcome.final_trace is r0
        assert len(outcome.records) == 3

    def test_malformed_then_retry(self):
        r0, diag0, decision = _context()
        provider = ReplayProvider({("ex1", 0): ReplayEntry(MALFORMED, retry_output=GOOD)})
        outcome = repair_example("ex1", PROBLEM, r0, diag0, decision, provider, CFG)
        assert outcome.accepted_index == 0
        assert outcome.records[0].retried
        assert outcome.records[0].retry_output == GOOD

    def test_retry_budget_is_one(self):
        r0, diag0, decision = _context()
        provider = ReplayProvider(
            {
                ("ex1", 0): ReplayEntry(MALFORMED, retry_output=MALFORMED),
                ("ex1", 1): ReplayEntry(GOOD),
            }
        )
        outcome = repair_example("ex1", PROBLEM, r0, diag0, decision, provider, CFG)
        assert outcome.records[0].retried
        assert outcome.records[0].parsed is None
        assert outcome.accepted_index == 1

    def test_cache_miss_is_loud(self):
        r0, diag0, decision = _context()
        provider = ReplayProvider({})
        with pytest.raises(ReplayCacheMiss):
            repair_example("ex1", PROBLEM, r0, diag0, decision, provider, CFG)

    def test_transport_failure_continues(self):
        r0, diag0, decision = _context()

        class FlakyProvider:
            identity = "flaky"

            def generate(self, prompt, max_tokens, temperature):
                if prompt.attempt_index == 0:
                    raise ProviderTransportError("connection reset")
                return GOOD

        outcome = repair_example("ex1", PROBLEM, r0, diag0, decision, FlakyProvider(), CFG)
        assert outcome.records[0].error is not None
        assert outcome.accepted_index == 1

    def test_call_budget(self):
        r0, diag0, decision = _context()
        calls = []

        class CountingProvider:
            identity = "counting"

            def generate(self, prompt, max_tokens, temperature):
                calls.append((prompt.attempt_index, prompt.is_retry, max_tokens))
                return MALFORMED

        outcome = repair_example(
            "ex1", PROBLEM, r0, diag0, decision, CountingProvider(), CFG
        )
        assert not outcome.accepted
        # N generations at 768 tokens plus at most one 512-token retry each.
        assert len(calls) == 2 * CFG.n_candidates
        assert {tokens for _, is_retry, tokens in calls if is_retry} == {512}
        assert {tokens for _, is_retry, tokens in calls if not is_retry} == {768}

    def test_replay_determinism(self):
        r0, diag0, decision = _context()
        provider = ReplayProvider(
            {
                ("ex1", 0): ReplayEntry(NOOP),
                ("ex1", 1): ReplayEntry(MALFORMED, retry_output=GOOD),
            }
        )
        first = repair_example("ex1", PROBLEM, r0, diag0, decision, provider, CFG)
        second = repair_example("ex1", PROBLEM, r0, diag0, decision, provider, CFG)
        assert [r.to_json_dict() for r in first.records] == [
            r.to_json_dict() for r in second.records
        ]
        assert first.final_trace.text == second.final_trace.text


def _dataset():
    return [
        DatasetRecord("a", PROBLEM, "22", WRONG_INITIAL),
        DatasetRecord(
            "b",
            "Maya has 11 marbles and buys 6 more marbles. How many marbles in total?",
            "17",
            "11 + 6 = 17\nFinal Answer: 17",
        ),
    ]


class TestBaselines:
    def test_solve_all_calls_every_example(self):
        cache = {
            ("a", 0): ReplayEntry(GOOD),
            ("b", 0): ReplayEntry(json.dumps({"steps": ["11 + 6 = 17"], "final_answer": "17"})),
        }
        finals, records = run_baseline(MODE_SOLVE_ALL, _dataset(), ReplayProvider(cache), CFG)
        assert len(records) == 2
        assert finals["a"].answer.canonical == "22"
        assert finals["b"].answer.canonical == "17"

    def test_solve_triggered_only_touches_triggered(self):
        cache = {("a", 0): ReplayEntry(GOOD)}
        finals, records = run_baseline(
            MODE_SOLVE_TRIGGERED, _dataset(), ReplayProvider(cache), CFG
        )
        # Example b is clean and never triggered; no cache entry needed.
        assert len(records) == 1
        assert finals["b"].text == _dataset()[1].cached_initial_trace

    def test_solve_all_accepts_unconditionally(self):
        # Even a no-op regeneration replaces the trace in solve_all.
        cache = {
            ("a", 0): ReplayEntry(NOOP),
            ("b", 0): ReplayEntry(json.dumps({"steps": ["11 + 6 = 17"], "final_answer": "17"})),
        }
        finals, _ = run_baseline(MODE_SOLVE_ALL, _dataset(), ReplayProvider(cache), CFG)
        assert finals["a"].answer.canonical == "23"

    def test_direct_gated_applies_gates(self):
        unsupported = json.dumps({"steps": ["it is clear"], "final_answer": "99"})
        cache = {
            ("a", 0): ReplayEntry(unsupported),
            ("a", 1): ReplayEntry(unsupported),
            ("a", 2): ReplayEntry(unsupported),
        }
        finals, records = run_baseline(
            MODE_DIRECT_BESTOF3_GATED,
            _dataset(),
            ReplayProvider(cache),
            CFG,
            triggered_ids={"a"},
        )
        assert finals["a"].answer.canonical == "23"  # preserved
        assert len(records) == 3

    def test_direct_gated_accepts_supported_fix(self):
        cache = {("a", 0): ReplayEntry(GOOD)}
        finals, records = run_baseline(
            MODE_DIRECT_BESTOF3_GATED,
            _dataset(),
            ReplayProvider(cache),
            CFG,
            triggered_ids={"a"},
        )
        assert finals["a"].answer.canonical == "22"
        assert len(records) == 1

    def test_solve_all_keeps_trace_when_output_never_parses(self):
        # An output that stays malformed after the retry has no answer to
        # substitute; the cached trace survives even in accept-all mode.
        cache = {
            ("a", 0): ReplayEntry(MALFORMED, retry_output=MALFORMED),
            ("b", 0): ReplayEntry(json.dumps({"steps": ["11 + 6 = 17"], "final_answer": "17"})),
        }
        finals, records = run_baseline(MODE_SOLVE_ALL, _dataset(), ReplayProvider(cache), CFG)
        assert finals["a"].text == WRONG_INITIAL
        assert len(records) == 2
        assert records[0].retried
