"""Final-answer extraction and canonical answer normalization.

Supported answer forms: integers, decimals, comma-grouped numbers,
fractions, colon-formed ratio/time strings, and yes/no words. Every
comparison in the pipeline goes through the canonical value produced
here, so the rules are deliberately strict and order-independent.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from fractions import Fraction

log = logging.getLogger(__name__)

KIND_INTEGER = "integer"
KIND_DECIMAL = "decimal"
KIND_FRACTION = "fraction"
KIND_RATIO_OR_TIME = "ratio_or_time"
KIND_YES_NO = "yes_no"
KIND_NONE = "none"

NUMERIC_KINDS = frozenset({KIND_INTEGER, KIND_DECIMAL, KIND_FRACTION})
ALL_KINDS = NUMERIC_KINDS | {KIND_RATIO_OR_TIME, KIND_YES_NO, KIND_NONE}

_FRACTION_PART = r"\d+/\d+"
_RATIO_PART = r"\d+(?:\.\d+)?:\d+(?:\.\d+)?"
_COMMA_PART = r"\d{1,3}(?:,\d{3})+(?:\.\d+)?"
_DECIMAL_PART = r"\d+\.\d*|\.\d+"
_INT_PART = r"\d+"

# Answer-like tokens. Boundary lookbehind keeps us from starting a token in
# the middle of a larger number ("059" inside "1,059") or after a letter.
ANSWER_TOKEN_RE = re.compile(
    r"(?<![\w.,/:])"
    rf"(?:[-+]?(?:{_FRACTION_PART}|{_RATIO_PART}|{_COMMA_PART}|{_DECIMAL_PART}|{_INT_PART})"
    r"|(?:yes|no)\b)",
    re.IGNORECASE,
)

# Explicit final-answer markers. Nothing beyond these three phrases counts.
MARKER_RE = re.compile(r"final\s+answer\s*(?:is\b|:)|answer\s*:", re.IGNORECASE)
_MARKER_LINE_RE = re.compile(r"^\s*(?:final\s+answer\s*(?:is\b|:)|answer\s*:)", re.IGNORECASE)

_RATIO_RE = re.compile(r"^[-+]?\d+(?:\.\d+)?\s*:\s*[-+]?\d+(?:\.\d+)?$")
_FRACTION_RE = re.compile(r"^([-+]?\d+)\s*/\s*(\d+)$")
_COMMA_RE = re.compile(r"^[-+]?\d{1,3}(?:,\d{3})+(?:\.\d+)?$")
_INT_RE = re.compile(r"^[-+]?\d+$")
_DECIMAL_RE = re.compile(r"^[-+]?(?:\d+\.\d*|\.\d+)$")

_PAREN_RE = re.compile(r"\([^)]*\)")
_CURRENCY_CHARS = "$€£"
_TRAIL_PUNCT = ".,;:!?'\"*"
_LEAD_PUNCT = ",;:!?'\"*"  # no dot: keep bare-decimal answers like ".5"


@dataclass(frozen=True)
class AnswerValue:
    """A candidate answer in raw and canonical form."""

    raw_text: str
    canonical: str
    kind: str

    @property
    def is_numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS


@dataclass(frozen=True)
class ExtractionResult:
    value: AnswerValue
    marker_found: bool
    marker_span: tuple[int, int] | None
    answer_line_count: int


NO_ANSWER = AnswerValue(raw_text="", canonical="", kind=KIND_NONE)


def _canonical_number(text: str) -> str | None:
    """Minimal canonical form for a plain integer or decimal string."""
    if _INT_RE.match(text):
        return str(int(text))
    if _DECIMAL_RE.match(text):
        negative = text.lstrip().startswith("-")
        body = text.lstrip("+-")
        int_part, _, frac_part = body.partition(".")
        frac_part = frac_part.rstrip("0")
        int_part = str(int(int_part)) if int_part else "0"
        if not frac_part:
            value = int_part
        else:
            value = f"{int_part}.{frac_part}"
        if negative and value.strip("0.") != "":
            return "-" + value
        return value
    return None


def normalize_answer(raw: str) -> AnswerValue:
    """Normalize an answer string into a canonical comparable value.

    Strips unit parentheses, currency symbols, and surrounding punctuation,
    removes thousands separators, collapses integral decimals ("12.0" to
    "12"), reduces fractions to lowest terms, and classifies the result.
    Unparseable input keeps a trimmed lowercase copy with kind "none".
    """
    text = _PAREN_RE.sub(" ", raw)
    for ch in _CURRENCY_CHARS:
        text = text.replace(ch, "")
    if "%" in text:
        log.debug("percent sign stripped during normalization: %r", raw)
        text = text.replace("%", "")
    text = text.strip().rstrip(_TRAIL_PUNCT).lstrip(_LEAD_PUNCT).strip()

    if not text:
        return AnswerValue(raw_text=raw, canonical="", kind=KIND_NONE)

    lowered = text.lower()
    if lowered in ("yes", "no"):
        return AnswerValue(raw_text=raw, canonical=lowered, kind=KIND_YES_NO)

    if _RATIO_RE.match(text):
        left, _, right = text.partition(":")
        left_c = _canonical_number(left.strip())
        right_c = _canonical_number(right.strip())
        if left_c is not None and right_c is not None:
            return AnswerValue(raw_text=raw, canonical=f"{left_c}:{right_c}", kind=KIND_RATIO_OR_TIME)

    frac_match = _FRACTION_RE.match(text)
    if frac_match:
        numerator = int(frac_match.group(1))
        denominator = int(frac_match.group(2))
        if denominator != 0:
            reduced = Fraction(numerator, denominator)
            if reduced.denominator == 1:
                return AnswerValue(raw_text=raw, canonical=str(reduced.numerator), kind=KIND_INTEGER)
            return AnswerValue(
                raw_text=raw,
                canonical=f"{reduced.numerator}/{reduced.denominator}",
                kind=KIND_FRACTION,
            )

    if _COMMA_RE.match(text):
        text = text.replace(",", "")

    canonical = _canonical_number(text)
    if canonical is not None:
        kind = KIND_INTEGER if "." not in canonical else KIND_DECIMAL
        return AnswerValue(raw_text=raw, canonical=canonical, kind=kind)

    return AnswerValue(raw_text=raw, canonical=raw.strip().lower(), kind=KIND_NONE)


def extract_answer(trace_text: str) -> ExtractionResult:
    """Extract the final answer from free-form trace text.

    When an explicit marker is present the answer is the last answer-like
    token after the last marker; text before the marker is never consulted.
    Without a marker the last answer-like token anywhere wins. Absence of
    an answer is a valid result, not an error.
    """
    markers = list(MARKER_RE.finditer(trace_text))
    marker_found = bool(markers)
    marker_span = (markers[-1].start(), markers[-1].end()) if markers else None

    search_start = markers[-1].end() if markers else 0
    region = trace_text[search_start:]
    tokens = list(ANSWER_TOKEN_RE.finditer(region))

    if tokens:
        value = normalize_answer(tokens[-1].group(0))
    else:
        value = NO_ANSWER

    answer_line_count = sum(
        1 for line in trace_text.splitlines() if _MARKER_LINE_RE.match(line)
    )
    return ExtractionResult(
        value=value,
        marker_found=marker_found,
        marker_span=marker_span,
        answer_line_count=answer_line_count,
    )


def as_fraction(value: AnswerValue) -> Fraction | None:
    """Exact rational value for numeric kinds, None otherwise."""
    if value.kind not in NUMERIC_KINDS:
        return None
    try:
        return Fraction(value.canonical)
    except (ValueError, ZeroDivisionError):
        return None


def _ratio_components(value: AnswerValue) -> tuple[Fraction, Fraction] | None:
    left, _, right = value.canonical.partition(":")
    try:
        return Fraction(left), Fraction(right)
    except (ValueError, ZeroDivisionError):
        return None


def answers_equivalent(a: AnswerValue, b: AnswerValue) -> bool:
    """True when two normalized answers denote the same value.

    Canonical string equality is checked first, then exact numeric
    equality, then component-wise reduced-ratio equality for two
    colon-formed values. Symmetric and reflexive by construction.
    """
    if a.canonical == b.canonical and a.kind == b.kind:
        return True
    fa = as_fraction(a)
    fb = as_fraction(b)
    if fa is not None and fb is not None:
        return fa == fb
    if a.kind == KIND_RATIO_OR_TIME and b.kind == KIND_RATIO_OR_TIME:
        ra = _ratio_components(a)
        rb = _ratio_components(b)
        if ra is None or rb is None:
            return False
        return ra[0] * rb[1] == ra[1] * rb[0]
    return False


@dataclass(frozen=True)
class ReasoningTrace:
    """A problem's cached or candidate solution text plus its final answer."""

    text: str
    extraction: ExtractionResult

    @classmethod
    def from_text(cls, text: str) -> "ReasoningTrace":
        return cls(text=text, extraction=extract_answer(text))

    @property
    def answer(self) -> AnswerValue:
        return self.extraction.value

    @property
    def has_answer(self) -> bool:
        return self.extraction.value.kind != KIND_NONE

    @property
    def is_empty(self) -> bool:
        return not self.text.strip()
