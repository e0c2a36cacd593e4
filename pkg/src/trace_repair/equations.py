"""Arithmetic equation scanning and exact verification.

Finds every "A op B = C" claim plus LCM/GCD forms in a trace and checks
them with exact rational arithmetic; no floating tolerance anywhere.
Also scans the restricted derivational naming statements ("Number of
trays = 23", "the greatest common divisor is 15") that the support and
contradiction checks consume.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

OP_ADD = "add"
OP_SUB = "sub"
OP_MUL = "mul"
OP_DIV = "div"
OP_LCM = "lcm"
OP_GCD = "gcd"

_OP_SYMBOLS = {
    "+": OP_ADD,
    "-": OP_SUB,
    "*": OP_MUL,
    "x": OP_MUL,
    "X": OP_MUL,
    "×": OP_MUL,
    "/": OP_DIV,
    "÷": OP_DIV,
}

_NUM = r"(?:\d+/\d+|\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+\.\d*|\.\d+|\d+)"
_SIGNED_NUM = rf"[-+]?{_NUM}"

_EQUATION_RE = re.compile(
    r"(?<![\d.,/:])"
    rf"(?P<a>{_SIGNED_NUM})"
    r"\s*(?P<op>[+\-*/xX×÷])\s*"
    rf"(?P<b>{_SIGNED_NUM})"
    r"\s*=\s*"
    rf"(?P<c>{_SIGNED_NUM})",
)

_LCM_GCD_RE = re.compile(
    r"\b(?P<fn>lcm|gcd)\s*\(\s*(?P<a>[-+]?\d+)\s*,\s*(?P<b>[-+]?\d+)\s*\)\s*=\s*"
    rf"(?P<c>{_SIGNED_NUM})",
    re.IGNORECASE,
)

# "<noun phrase> = number", not followed by more arithmetic. The phrase may
# not contain digits, so the tail of "3 + 4 = 7" never matches.
_NAMING_RE = re.compile(
    rf"\b(?P<name>[A-Za-z][A-Za-z' ]{{0,60}}?)\s*=\s*(?P<value>{_SIGNED_NUM})"
    r"(?!\s*[+\-*/xX×÷=]\s*[\d(])(?![\d.,:/])"
)

_IS_NAMING_RE = re.compile(
    rf"\bthe\s+(?:greatest\s+common\s+divisor|least\s+common\s+multiple)\s+is\s+(?P<value>{_SIGNED_NUM})",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class EquationCheck:
    lhs_text: str
    operands: tuple[Fraction, ...]
    operator: str
    claimed_result: Fraction
    verified: bool
    position: int


def parse_number(token: str) -> Fraction | None:
    """Exact rational value of a numeric token; None if unparseable."""
    text = token.strip().replace(",", "")
    sign = 1
    if text.startswith(("+", "-")):
        if text[0] == "-":
            sign = -1
        text = text[1:]
    try:
        if "/" in text:
            num, _, den = text.partition("/")
            if int(den) == 0:
                return None
            return sign * Fraction(int(num), int(den))
        return sign * Fraction(text)
    except (ValueError, ZeroDivisionError):
        return None


def _verify(operator: str, a: Fraction, b: Fraction, claimed: Fraction) -> bool:
    if operator == OP_ADD:
        return a + b == claimed
    if operator == OP_SUB:
        return a - b == claimed
    if operator == OP_MUL:
        return a * b == claimed
    if operator == OP_DIV:
        if b == 0:
            return False
        return a / b == claimed
    if operator in (OP_LCM, OP_GCD):
        if a.denominator != 1 or b.denominator != 1:
            return False
        fn = math.lcm if operator == OP_LCM else math.gcd
        return Fraction(fn(int(a), int(b))) == claimed
    raise ValueError(f"unknown operator {operator!r}")


def check_equations(trace_text: str) -> list[EquationCheck]:
    """Scan a trace for binary arithmetic and LCM/GCD equations.

    Every match is verified exactly; division by zero never verifies.
    Zero matches is a valid empty result.
    """
    checks: list[EquationCheck] = []

    for match in _EQUATION_RE.finditer(trace_text):
        a = parse_number(match.group("a"))
        b = parse_number(match.group("b"))
        c = parse_number(match.group("c"))
        if a is None or b is None or c is None:
            continue
        operator = _OP_SYMBOLS[match.group("op")]
        checks.append(
            EquationCheck(
                lhs_text=trace_text[match.start() : match.end("b")],
                operands=(a, b),
                operator=operator,
                claimed_result=c,
                verified=_verify(operator, a, b, c),
                position=match.start(),
            )
        )

    for match in _LCM_GCD_RE.finditer(trace_text):
        a = parse_number(match.group("a"))
        b = parse_number(match.group("b"))
        c = parse_number(match.group("c"))
        if a is None or b is None or c is None:
            continue
        operator = OP_LCM if match.group("fn").lower() == "lcm" else OP_GCD
        checks.append(
            EquationCheck(
                lhs_text=trace_text[match.start() : match.end("b") + 1],
                operands=(a, b),
                operator=operator,
                claimed_result=c,
                verified=_verify(operator, a, b, c),
                position=match.start(),
            )
        )

    checks.sort(key=lambda check: check.position)
    return checks


@dataclass(frozen=True)
class NamingStatement:
    name: str
    value: Fraction
    position: int


# Leading filler that is not part of the derived-quantity name itself.
_NAME_FILLER = frozenset({
    "the", "a", "an", "and", "or", "so", "then", "but", "now", "also",
    "later", "next", "finally", "therefore", "thus", "hence", "we", "he",
    "she", "they", "it", "is", "get", "gives", "giving",
})


def _trim_name(raw: str) -> str:
    words = raw.lower().split()
    while len(words) > 1 and words[0] in _NAME_FILLER:
        words.pop(0)
    return " ".join(words)


def naming_statements(text: str) -> list[NamingStatement]:
    """Derivational naming statements, keyed by the lowercase phrase."""
    statements: list[NamingStatement] = []
    for match in _NAMING_RE.finditer(text):
        value = parse_number(match.group("value"))
        if value is None:
            continue
        name = _trim_name(match.group("name"))
        if not name:
            continue
        statements.append(NamingStatement(name=name, value=value, position=match.start()))
    for match in _IS_NAMING_RE.finditer(text):
        value = parse_number(match.group("value"))
        if value is None:
            continue
        name = " ".join(match.group(0)[: match.start("value") - match.start()].lower().split())
        statements.append(NamingStatement(name=name, value=value, position=match.start()))
    statements.sort(key=lambda statement: statement.position)
    return statements


def naming_conflicts(text: str) -> list[tuple[str, tuple[Fraction, ...]]]:
    """Names asserted with two or more distinct values."""
    by_name: dict[str, list[Fraction]] = {}
    for statement in naming_statements(text):
        by_name.setdefault(statement.name, []).append(statement.value)
    conflicts = []
    for name, values in by_name.items():
        distinct = sorted(set(values))
        if len(distinct) > 1:
            conflicts.append((name, tuple(distinct)))
    return conflicts


def verified_results(checks: list[EquationCheck]) -> set[Fraction]:
    return {check.claimed_result for check in checks if check.verified}
