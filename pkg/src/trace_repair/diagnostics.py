"""Deterministic trace diagnostics: coverage, meta score, and the bundle.

The meta score is a convex combination on [0, 1]:

    meta = 0.5 * equation_verification_rate
         + 0.3 * constraint_coverage
         + 0.2 * format_score

with generation failures forced to zero. The weights live here as module
constants so alternate tunings stay in one place.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .answers import ReasoningTrace
from .equations import EquationCheck, check_equations, naming_conflicts, parse_number
from .risk_graph import GraphReport, semantic_graph_check

CATEGORY_CLEAN = "clean"
CATEGORY_GENERATION_FAILURE = "generation_failure"
CATEGORY_ARITHMETIC_ERROR = "arithmetic_error"
CATEGORY_LOGICAL_CONTRADICTION = "logical_contradiction"
CATEGORY_MISSING_CONSTRAINT = "missing_constraint"
CATEGORY_LOW_SYMBOLIC_COVERAGE = "low_symbolic_coverage"

META_CATEGORIES = (
    CATEGORY_CLEAN,
    CATEGORY_GENERATION_FAILURE,
    CATEGORY_ARITHMETIC_ERROR,
    CATEGORY_LOGICAL_CONTRADICTION,
    CATEGORY_MISSING_CONSTRAINT,
    CATEGORY_LOW_SYMBOLIC_COVERAGE,
)

WEIGHT_EQUATIONS = 0.5
WEIGHT_COVERAGE = 0.3
WEIGHT_FORMAT = 0.2

# Numeric mentions counted for coverage: digit-based forms only. Number
# words belong to the risk-graph mention extractor, not to coverage.
_MENTION_RE = re.compile(
    r"(?<![\w.,/:])[-+]?(?:\d+/\d+|\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+\.\d*|\.\d+|\d+)"
)


@dataclass(frozen=True)
class MetaDiagnosis:
    category: str
    meta_score: float
    equation_verification_rate: float
    constraint_coverage: float
    format_score: float


def numeric_mentions(text: str) -> set[Fraction]:
    """Distinct normalized numeric mentions in a text."""
    values = set()
    for match in _MENTION_RE.finditer(text):
        value = parse_number(match.group(0))
        if value is not None:
            values.add(value)
    return values


def constraint_coverage(problem_text: str, trace_text: str) -> float:
    """Fraction of the problem's numeric mentions used by the trace.

    A mention counts as used when it appears literally in the trace or as
    an operand of any scanned equation. An empty constraint set is fully
    covered by definition.
    """
    problem_values = numeric_mentions(problem_text)
    if not problem_values:
        return 1.0
    trace_values = numeric_mentions(trace_text)
    for check in check_equations(trace_text):
        trace_values.update(check.operands)
    covered = sum(1 for value in problem_values if value in trace_values)
    return covered / len(problem_values)


def _format_score(trace: ReasoningTrace) -> float:
    if not trace.has_answer:
        return 0.0
    if trace.extraction.answer_line_count == 1:
        return 1.0
    if trace.extraction.answer_line_count == 0:
        return 0.5
    return 0.0


def meta_diagnose(
    problem_text: str,
    trace: ReasoningTrace,
    checks: list[EquationCheck],
    coverage: float,
) -> MetaDiagnosis:
    """Assign the meta category and score for one trace.

    Category priority: generation_failure > arithmetic_error >
    logical_contradiction > missing_constraint > low_symbolic_coverage >
    clean. A clean verdict requires at least one verified equation, full
    coverage, and an extractable answer.
    """
    has_answer = trace.has_answer and not trace.is_empty

    if checks:
        rate = sum(1 for check in checks if check.verified) / len(checks)
    else:
        rate = 0.0
    format_score = _format_score(trace)

    if not has_answer:
        return MetaDiagnosis(
            category=CATEGORY_GENERATION_FAILURE,
            meta_score=0.0,
            equation_verification_rate=rate,
            constraint_coverage=coverage,
            format_score=0.0,
        )

    if any(not check.verified for check in checks):
        category = CATEGORY_ARITHMETIC_ERROR
    elif naming_conflicts(trace.text):
        category = CATEGORY_LOGICAL_CONTRADICTION
    elif coverage < 1.0:
        category = CATEGORY_MISSING_CONSTRAINT
    elif not checks:
        category = CATEGORY_LOW_SYMBOLIC_COVERAGE
    else:
        category = CATEGORY_CLEAN

    score = WEIGHT_EQUATIONS * rate + WEIGHT_COVERAGE * coverage + WEIGHT_FORMAT * format_score
    score = min(1.0, max(0.0, score))
    return MetaDiagnosis(
        category=category,
        meta_score=score,
        equation_verification_rate=rate,
        constraint_coverage=coverage,
        format_score=format_score,
    )


@dataclass(frozen=True)
class DiagnosisReport:
    """The full deterministic diagnostic bundle for one trace."""

    checks: tuple[EquationCheck, ...]
    coverage: float
    meta: MetaDiagnosis
    graph: GraphReport
    missing_quantities: tuple[str, ...]


def _fraction_text(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def diagnose(problem_text: str, trace: ReasoningTrace | str) -> DiagnosisReport:
    """Run every deterministic diagnostic for one (problem, trace) pair."""
    if isinstance(trace, str):
        trace = ReasoningTrace.from_text(trace)
    checks = check_equations(trace.text)
    coverage = constraint_coverage(problem_text, trace.text)
    meta = meta_diagnose(problem_text, trace, checks, coverage)
    graph = semantic_graph_check(problem_text, trace.text)

    trace_values = numeric_mentions(trace.text)
    for check in checks:
        trace_values.update(check.operands)
    missing = sorted(
        numeric_mentions(problem_text) - trace_values,
    )
    return DiagnosisReport(
        checks=tuple(checks),
        coverage=coverage,
        meta=meta,
        graph=graph,
        missing_quantities=tuple(_fraction_text(value) for value in missing),
    )
