"""Best-of-N candidate generation and guarded selection loop.

For each triggered example the orchestrator builds attempt-specific
prompts, asks the provider for up to N JSON candidates, applies at most
one format retry per attempt, and runs cleanliness, re-diagnosis, and
the acceptance policy. The first accepted candidate wins; otherwise the
cached trace is preserved unchanged.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from typing import Protocol

from .answers import NUMERIC_KINDS, ReasoningTrace, answers_equivalent, normalize_answer
from .diagnostics import CATEGORY_CLEAN, DiagnosisReport, diagnose
from .policy import (
    REJECT_UNCLEAN,
    AcceptanceVerdict,
    PolicyConfig,
    TriggerDecision,
    accept_policy,
    is_clean,
)
from .risk_graph import has_high_risk, risk_categories

log = logging.getLogger(__name__)

STYLE_HINT_GUIDED = "hint_guided"
STYLE_STRICT_CONCISE = "strict_concise"
STYLE_SOLVE_FRESH = "solve_fresh"

_STYLE_CYCLE = (STYLE_HINT_GUIDED, STYLE_STRICT_CONCISE, STYLE_SOLVE_FRESH)

_STYLE_LINES = {
    STYLE_HINT_GUIDED: (
        "Use the diagnostic hint as guidance when helpful; change the answer "
        "only if the previous answer is not supported by the problem."
    ),
    STYLE_STRICT_CONCISE: (
        "Prioritize strict formatting and concise arithmetic; preserve the "
        "original answer if it is defensible."
    ),
    STYLE_SOLVE_FRESH: (
        "Solve from the original problem in at most four compact steps, "
        "treating the initial reasoning only as a warning signal."
    ),
}

SCHEMA_TEXT = '{\n  "steps": ["short arithmetic step"],\n  "final_answer": "number"\n}'

SYSTEM_TEXT = "Return only valid JSON. No markdown."

RETRY_INSTRUCTION = (
    "The previous output was malformed. Rewrite only the malformed output as "
    "a valid JSON object matching the schema, without prose outside JSON."
)


class ProviderTransportError(RuntimeError):
    """Transport-level failure talking to a candidate provider."""


@dataclass(frozen=True)
class PromptSpec:
    example_id: str
    attempt_index: int
    style: str
    problem_text: str
    initial_reasoning: str
    diagnostic_hint: str
    semantic_error: str
    meta_error: str
    schema_text: str = SCHEMA_TEXT
    retry_of: str | None = None

    @property
    def is_retry(self) -> bool:
        return self.retry_of is not None

    def user_text(self) -> str:
        lines = [
            "Schema:",
            self.schema_text,
            "",
            "Rules:",
            "- Use at most 4 steps.",
            "- Prefer arithmetic equations.",
            "- final_answer is number-only.",
            "- Use but do not mention the hint.",
            f"- Attempt style: {_STYLE_LINES[self.style]}",
            "",
            f"Problem: {self.problem_text}",
        ]
        for label, value in (
            ("Initial", self.initial_reasoning),
            ("Hint", self.diagnostic_hint),
            ("Semantic error", self.semantic_error),
            ("Meta error", self.meta_error),
        ):
            if value:
                lines.append(f"{label}: {value}")
        if self.retry_of is not None:
            lines.extend(["", RETRY_INSTRUCTION, "", f"Malformed output: {self.retry_of}"])
        return "\n".join(lines)

    def render(self) -> str:
        return f"System: {SYSTEM_TEXT}\n\n{self.user_text()}"

    def prompt_hash(self) -> str:
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()


class CandidateProvider(Protocol):
    """Behavioral contract for candidate generators."""

    identity: str

    def generate(self, prompt: PromptSpec, max_tokens: int, temperature: float) -> str:
        ...


def style_for_attempt(attempt_index: int) -> str:
    return _STYLE_CYCLE[attempt_index % len(_STYLE_CYCLE)]


def _claim_text(check) -> str:
    claimed = check.claimed_result
    value = str(claimed.numerator) if claimed.denominator == 1 else str(claimed)
    return f"{check.lhs_text} = {value}"


def render_hint(diag0: DiagnosisReport) -> str:
    """Deterministic diagnostic hint text built from the initial diagnosis."""
    parts: list[str] = []
    bad = [check for check in diag0.checks if not check.verified]
    if bad:
        shown = "; ".join(_claim_text(check) for check in bad[:3])
        parts.append(f"incorrect arithmetic: {shown}")
    if diag0.missing_quantities:
        parts.append(
            "unused problem quantities: " + ", ".join(diag0.missing_quantities[:5])
        )
    high = [risk.category for risk in diag0.graph.risks if risk.severity == "high"]
    if high:
        parts.append("semantic risks: " + ", ".join(sorted(set(high))))
    if diag0.meta.category != CATEGORY_CLEAN:
        parts.append(f"diagnosis: {diag0.meta.category}")
    return "; ".join(parts) if parts else "none"


def build_prompt(
    example_id: str,
    problem_text: str,
    initial_text: str,
    diag0: DiagnosisReport,
    attempt_index: int,
    include_initial: bool = True,
) -> PromptSpec:
    """Fill the fixed prompt skeleton for one repair attempt.

    Direct-regeneration baselines set include_initial=False, which drops
    the initial trace and every diagnostic field from the prompt.
    """
    if include_initial:
        initial = initial_text if initial_text.strip() else "(empty)"
        hint = render_hint(diag0)
        semantic = ", ".join(sorted(set(risk_categories(diag0.graph)))) or "none"
        meta = diag0.meta.category
    else:
        initial = hint = semantic = meta = ""
    return PromptSpec(
        example_id=example_id,
        attempt_index=attempt_index,
        style=style_for_attempt(attempt_index),
        problem_text=problem_text,
        initial_reasoning=initial,
        diagnostic_hint=hint,
        semantic_error=semantic,
        meta_error=meta,
    )


@dataclass(frozen=True)
class ParsedCandidate:
    steps: tuple[str, ...]
    final_answer: str

    def trace_text(self) -> str:
        return "\n".join(self.steps + (f"Final Answer: {self.final_answer}",))


def _strip_fences(raw: str) -> str:
    text = raw.strip()
    if not text.startswith("```"):
        return text
    first_break = text.find("\n")
    if first_break < 0:
        return text
    text = text[first_break + 1 :]
    if text.rstrip().endswith("```"):
        text = text.rstrip()[: -3]
    return text.strip()


def parse_candidate(raw: str) -> ParsedCandidate | None:
    """Parse one provider output against the strict candidate schema.

    Markdown fences are stripped first; anything else that deviates from
    {"steps": [str, ...], "final_answer": "<number>"} is a parse failure,
    which makes the attempt eligible for the single format retry.
    """
    try:
        payload = json.loads(_strip_fences(raw))
    except (json.JSONDecodeError, ValueError):
        return None
    if not isinstance(payload, dict) or set(payload.keys()) != {"steps", "final_answer"}:
        return None
    steps = payload["steps"]
    final_answer = payload["final_answer"]
    if not isinstance(steps, list) or not all(isinstance(step, str) for step in steps):
        return None
    if not isinstance(final_answer, str):
        return None
    if normalize_answer(final_answer).kind not in NUMERIC_KINDS:
        return None
    return ParsedCandidate(steps=tuple(steps), final_answer=final_answer)


@dataclass
class CandidateRecord:
    example_id: str
    attempt_index: int
    prompt_hash: str
    raw_output: str
    retry_output: str | None = None
    parsed: ParsedCandidate | None = None
    retried: bool = False
    clean: bool = False
    clean_reason: str | None = None
    graph_clean: bool | None = None
    answer_changed: bool | None = None
    verdict: AcceptanceVerdict | None = None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "attempt_index": self.attempt_index,
            "prompt_hash": self.prompt_hash,
            "raw_output": self.raw_output,
            "retry_output": self.retry_output,
            "parsed": (
                {"steps": list(self.parsed.steps), "final_answer": self.parsed.final_answer}
                if self.parsed
                else None
            ),
            "retried": self.retried,
            "clean": self.clean,
            "clean_reason": self.clean_reason,
            "graph_clean": self.graph_clean,
            "answer_changed": self.answer_changed,
            "verdict": (
                {
                    "accepted": self.verdict.accepted,
                    "path": self.verdict.path,
                    "rejection_reasons": list(self.verdict.rejection_reasons),
                }
                if self.verdict
                else None
            ),
            "error": self.error,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "CandidateRecord":
        parsed = payload.get("parsed")
        verdict = payload.get("verdict")
        return cls(
            example_id=payload["example_id"],
            attempt_index=payload["attempt_index"],
            prompt_hash=payload.get("prompt_hash", ""),
            raw_output=payload.get("raw_output", ""),
            retry_output=payload.get("retry_output"),
            parsed=(
                ParsedCandidate(tuple(parsed["steps"]), parsed["final_answer"])
                if parsed
                else None
            ),
            retried=payload.get("retried", False),
            clean=payload.get("clean", False),
            clean_reason=payload.get("clean_reason"),
            graph_clean=payload.get("graph_clean"),
            answer_changed=payload.get("answer_changed"),
            verdict=(
                AcceptanceVerdict(
                    accepted=verdict["accepted"],
                    path=verdict["path"],
                    rejection_reasons=tuple(verdict["rejection_reasons"]),
                )
                if verdict
                else None
            ),
            error=payload.get("error"),
        )


@dataclass(frozen=True)
class RepairOutcome:
    final_trace: ReasoningTrace
    records: tuple[CandidateRecord, ...]
    accepted_index: int | None

    @property
    def accepted(self) -> bool:
        return self.accepted_index is not None


def _generate_and_parse(
    provider: CandidateProvider,
    spec: PromptSpec,
    cfg: PolicyConfig,
    record: CandidateRecord,
) -> ParsedCandidate | None:
    """One generation plus at most one format retry; updates the record."""
    try:
        raw = provider.generate(spec, cfg.repair_max_tokens, cfg.temperature)
    except ProviderTransportError as exc:
        record.error = f"transport: {exc}"
        return None
    record.raw_output = raw
    parsed = parse_candidate(raw)
    if parsed is not None:
        return parsed
    retry_spec = replace(spec, retry_of=raw)
    record.retried = True
    try:
        retry_raw = provider.generate(retry_spec, cfg.retry_max_tokens, cfg.temperature)
    except ProviderTransportError as exc:
        record.error = f"transport on retry: {exc}"
        return None
    record.retry_output = retry_raw
    return parse_candidate(retry_raw)


def _evaluate_candidate(
    problem_text: str,
    r0: ReasoningTrace,
    diag0: DiagnosisReport,
    trigger_decision: TriggerDecision,
    parsed: ParsedCandidate,
    cfg: PolicyConfig,
    record: CandidateRecord,
    accept_all: bool = False,
) -> ReasoningTrace | None:
    """Gate one parsed candidate; returns the trace when it is accepted."""
    candidate = ReasoningTrace.from_text(parsed.trace_text())
    if accept_all:
        record.clean = True
        record.verdict = None
        return candidate
    clean = is_clean(candidate.text, cfg, initial_length=len(r0.text))
    record.clean = clean.ok
    record.clean_reason = clean.reason
    if not clean.ok:
        record.verdict = AcceptanceVerdict.rejected(REJECT_UNCLEAN)
        return None
    diag_c = diagnose(problem_text, candidate)
    record.graph_clean = not has_high_risk(diag_c.graph)
    verdict = accept_policy(r0, candidate, diag0, diag_c, trigger_decision, cfg)
    record.verdict = verdict
    return candidate if verdict.accepted else None


def repair_example(
    example_id: str,
    problem_text: str,
    r0: ReasoningTrace,
    diag0: DiagnosisReport,
    trigger_decision: TriggerDecision,
    provider: CandidateProvider,
    cfg: PolicyConfig,
    include_initial: bool = True,
    n_attempts: int | None = None,
    accept_all: bool = False,
) -> RepairOutcome:
    """Guarded best-of-N selection loop for one triggered example.

    A transport failure on one attempt records a generation failure and
    moves on; a fully failed example preserves the cached trace. No
    further attempts are generated once a candidate is accepted.
    """
    attempts = cfg.n_candidates if n_attempts is None else n_attempts
    records: list[CandidateRecord] = []
    for attempt_index in range(attempts):
        spec = build_prompt(
            example_id, problem_text, r0.text, diag0, attempt_index, include_initial
        )
        record = CandidateRecord(
            example_id=example_id,
            attempt_index=attempt_index,
            prompt_hash=spec.prompt_hash(),
            raw_output="",
        )
        records.append(record)
        parsed = _generate_and_parse(provider, spec, cfg, record)
        if parsed is None:
            if record.error is None:
                record.error = "parse_failure"
            continue
        record.parsed = parsed
        candidate_answer = ReasoningTrace.from_text(parsed.trace_text()).answer
        record.answer_changed = not answers_equivalent(r0.answer, candidate_answer)
        accepted = _evaluate_candidate(
            problem_text, r0, diag0, trigger_decision, parsed, cfg, record, accept_all
        )
        if accepted is not None:
            return RepairOutcome(
                final_trace=accepted,
                records=tuple(records),
                accepted_index=attempt_index,
            )
    return RepairOutcome(final_trace=r0, records=tuple(records), accepted_index=None)


MODE_SOLVE_ALL = "solve_all"
MODE_SOLVE_TRIGGERED = "solve_triggered"
MODE_DIRECT_BESTOF3_GATED = "direct_bestof3_gated"

BASELINE_MODES = (MODE_SOLVE_ALL, MODE_SOLVE_TRIGGERED, MODE_DIRECT_BESTOF3_GATED)


def baseline_example(
    mode: str,
    example_id: str,
    problem_text: str,
    r0: ReasoningTrace,
    diag0: DiagnosisReport,
    trigger_decision: TriggerDecision,
    provider: CandidateProvider,
    cfg: PolicyConfig,
) -> RepairOutcome:
    """Direct-regeneration baseline step for a single example.

    solve_all and solve_triggered accept every parsed output with a single
    attempt; the gated best-of-3 baseline keeps all gates but drops the
    initial trace and diagnostic hint from the prompt.
    """
    if mode in (MODE_SOLVE_ALL, MODE_SOLVE_TRIGGERED):
        return repair_example(
            example_id,
            problem_text,
            r0,
            diag0,
            trigger_decision,
            provider,
            cfg,
            include_initial=False,
            n_attempts=1,
            accept_all=True,
        )
    if mode == MODE_DIRECT_BESTOF3_GATED:
        return repair_example(
            example_id,
            problem_text,
            r0,
            diag0,
            trigger_decision,
            provider,
            cfg,
            include_initial=False,
        )
    raise ValueError(f"unknown baseline mode: {mode}")


def run_baseline(
    mode: str,
    dataset,
    provider: CandidateProvider,
    cfg: PolicyConfig,
    triggered_ids: set[str] | None = None,
):
    """Run a baseline over a dataset; returns (finals by id, records).

    Triggered modes require the trigger set of a prior guarded run; when
    none is supplied the deterministic trigger is recomputed, which gives
    the same set.
    """
    from .policy import trigger as trigger_fn

    finals: dict[str, ReasoningTrace] = {}
    all_records: list[CandidateRecord] = []
    for record in dataset:
        r0 = ReasoningTrace.from_text(record.cached_initial_trace or "")
        diag0 = diagnose(record.problem_text, r0)
        decision = trigger_fn(diag0.meta, diag0.graph, r0, cfg)
        if mode == MODE_SOLVE_ALL:
            targeted = True
        elif triggered_ids is not None:
            targeted = record.example_id in triggered_ids
        else:
            targeted = decision.triggered
        if not targeted:
            finals[record.example_id] = r0
            continue
        outcome = baseline_example(
            mode, record.example_id, record.problem_text, r0, diag0, decision, provider, cfg
        )
        finals[record.example_id] = outcome.final_trace
        all_records.extend(outcome.records)
    return finals, all_records
