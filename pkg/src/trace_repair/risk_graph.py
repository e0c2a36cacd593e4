"""Surface semantic-risk graph over quantity mentions.

Builds lightweight quantity graphs for problem and trace from
deterministic surface patterns (no parser, no learned model), emits risk
signals from five checks, and scores the trace by subtracting per-risk
penalties from 1.0, clipped to [0, 1]. The signals are recall-oriented
diagnostic features: most warnings are benign and the downstream
acceptance policy is responsible for filtering them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .answers import ReasoningTrace, as_fraction
from .equations import OP_ADD, OP_DIV, OP_MUL, OP_SUB, EquationCheck, check_equations

RISK_QUANTITY_BINDING = "quantity_binding_error"
RISK_COMPARISON = "comparison_warning"
RISK_RATE_MISSING = "per_entity_rate_missing"
RISK_CHANGE_EVENT = "change_event_misinterpretation"
RISK_ANSWER_FORMAT = "answer_format_warning"
RISK_TIMES_MORE = "times_more_interpretation"
RISK_EQUALLY_SPLIT = "equally_split_interpretation"
RISK_GENERATION_FAILURE = "generation_failure"

RISK_CATEGORIES = (
    RISK_QUANTITY_BINDING,
    RISK_COMPARISON,
    RISK_RATE_MISSING,
    RISK_CHANGE_EVENT,
    RISK_ANSWER_FORMAT,
    RISK_TIMES_MORE,
    RISK_EQUALLY_SPLIT,
    RISK_GENERATION_FAILURE,
)

SEVERITY_HIGH = "high"
SEVERITY_WARNING = "warning"

# Categories that are always high severity. Quantity-binding conflicts are
# high only when the trace reuses a binding the problem attaches to a
# different value; weaker mismatches stay warnings.
HIGH_RISK_CATEGORIES = frozenset(
    {RISK_TIMES_MORE, RISK_RATE_MISSING, RISK_EQUALLY_SPLIT, RISK_CHANGE_EVENT}
)

DIAGNOSIS_OK = "ok"
DIAGNOSIS_GENERATION_FAILURE = "generation_failure"

EDGE_AGGREGATION = "aggregation"
EDGE_COMPARISON = "comparison"
EDGE_RATE = "rate"
EDGE_CHANGE_EVENT = "change_event"
EDGE_PART_WHOLE = "part_whole"

DIRECTION_INCREASE = "increase"
DIRECTION_DECREASE = "decrease"
DIRECTION_UNKNOWN = "unknown"

PENALTIES = {SEVERITY_HIGH: 0.35, SEVERITY_WARNING: 0.15}

WINDOW_TOKENS = 5

NUMBER_WORDS: dict[str, int] = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11,
    "twelve": 12, "thirteen": 13, "fourteen": 14, "fifteen": 15,
    "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50, "sixty": 60,
    "seventy": 70, "eighty": 80, "ninety": 90, "dozen": 12,
}

_DECREASE_VERBS = frozenset({
    "gave", "give", "gives", "given", "lost", "lose", "loses",
    "spent", "spend", "spends", "removed", "remove", "removes",
})
_INCREASE_VERBS = frozenset({
    "bought", "buy", "buys", "received", "receive", "receives",
    "added", "add", "adds",
})
CHANGE_VERBS = _DECREASE_VERBS | _INCREASE_VERBS

RATE_MARKERS = frozenset({"each", "per", "every"})
AGGREGATION_MARKERS = frozenset({"total", "together", "altogether"})
COMPARATIVE_MARKERS = frozenset({"more", "fewer", "less"})

PREDICATE_LEXICON = (
    COMPARATIVE_MARKERS
    | AGGREGATION_MARKERS
    | RATE_MARKERS
    | CHANGE_VERBS
    | {"left", "remaining", "remain", "remains", "all"}
)

_STOPWORDS = frozenset({
    "a", "an", "the", "of", "to", "in", "on", "at", "and", "or", "with",
    "for", "from", "by", "his", "her", "their", "its", "he", "she", "they",
    "it", "we", "you", "i", "is", "are", "was", "were", "be", "been",
    "has", "have", "had", "do", "does", "did", "how", "many", "much",
    "what", "when", "who", "than", "then", "there", "some", "if", "as",
    "that", "this", "these", "those", "will", "would", "can", "could",
    "about", "now", "so", "but", "not", "out", "up", "other",
})
_ARITH_WORDS = frozenset({
    "plus", "minus", "times", "divided", "equals", "sum", "difference",
    "final", "answer", "step", "result",
})
_UNIT_EXCLUSIONS = _STOPWORDS | _ARITH_WORDS | PREDICATE_LEXICON | set(NUMBER_WORDS)

_TOKEN_RE = re.compile(r"\$?\d[\d,]*(?:\.\d+)?(?:/\d+)?|[A-Za-z]+(?:'[A-Za-z]+)?")
_SENTENCE_BREAK_RE = re.compile(r"[.!?]")


@dataclass(frozen=True)
class _Token:
    text: str
    start: int
    end: int
    sentence: int
    sentence_initial: bool


@dataclass(frozen=True)
class QuantityNode:
    surface: str
    value: Fraction
    unit_phrase: str
    entity_mention: str
    predicate_context: frozenset[str]
    window: tuple[int, int]
    token_index: int


@dataclass(frozen=True)
class RelationEdge:
    kind: str
    members: tuple[int, ...]
    direction: str = DIRECTION_UNKNOWN
    marker_node: int | None = None
    source: str = "marker"


@dataclass(frozen=True)
class QuantityGraph:
    nodes: tuple[QuantityNode, ...]
    edges: tuple[RelationEdge, ...]


EMPTY_GRAPH = QuantityGraph(nodes=(), edges=())


@dataclass(frozen=True)
class RiskSignal:
    category: str
    severity: str
    evidence: tuple[str, ...]


@dataclass(frozen=True)
class GraphReport:
    problem_graph: QuantityGraph
    trace_graph: QuantityGraph
    risks: tuple[RiskSignal, ...]
    score: float
    diagnosis: str


def has_high_risk(report: GraphReport) -> bool:
    return any(risk.severity == SEVERITY_HIGH for risk in report.risks)


def risk_categories(report: GraphReport) -> list[str]:
    return [risk.category for risk in report.risks]


def _tokenize(text: str) -> list[_Token]:
    breaks = [match.start() for match in _SENTENCE_BREAK_RE.finditer(text)]
    tokens: list[_Token] = []
    previous_end = 0
    for match in _TOKEN_RE.finditer(text):
        sentence = sum(1 for position in breaks if position < match.start())
        gap = text[previous_end : match.start()]
        sentence_initial = previous_end == 0 or bool(_SENTENCE_BREAK_RE.search(gap))
        tokens.append(
            _Token(
                text=match.group(0),
                start=match.start(),
                end=match.end(),
                sentence=sentence,
                sentence_initial=sentence_initial,
            )
        )
        previous_end = match.end()
    return tokens


def _token_value(token: _Token) -> Fraction | None:
    text = token.text
    lowered = text.lower()
    if lowered in NUMBER_WORDS:
        return Fraction(NUMBER_WORDS[lowered])
    if not any(ch.isdigit() for ch in text):
        return None
    text = text.lstrip("$").replace(",", "")
    try:
        if "/" in text:
            num, _, den = text.partition("/")
            if int(den) == 0:
                return None
            return Fraction(int(num), int(den))
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        return None


def _is_unit_candidate(token: _Token) -> bool:
    text = token.text
    return (
        text.isalpha()
        and len(text) > 1
        and text.lower() not in _UNIT_EXCLUSIONS
    )


def extract_quantities(text: str) -> list[QuantityNode]:
    """Turn every numeric mention into an annotated quantity node.

    Digit strings, number words, fractions, and money expressions all
    count. Unit phrase, entity mention, and predicate context come from a
    five-token window on each side.
    """
    tokens = _tokenize(text)
    nodes: list[QuantityNode] = []
    for index, token in enumerate(tokens):
        value = _token_value(token)
        if value is None:
            continue
        window_tokens = tokens[max(0, index - WINDOW_TOKENS) : index + WINDOW_TOKENS + 1]

        unit = ""
        if token.text.startswith("$"):
            unit = "dollars"
        else:
            for other in tokens[index + 1 : index + WINDOW_TOKENS + 1]:
                if _is_unit_candidate(other):
                    unit = other.text.lower()
                    break
            if not unit:
                for other in reversed(tokens[max(0, index - WINDOW_TOKENS) : index]):
                    if _is_unit_candidate(other):
                        unit = other.text.lower()
                        break

        entity = ""
        best_distance = None
        for offset, other in enumerate(window_tokens):
            other_index = max(0, index - WINDOW_TOKENS) + offset
            if other_index == index:
                continue
            word = other.text.split("'")[0]
            if not word or not word[0].isupper() or not word.isalpha():
                continue
            if other.sentence_initial or word.lower() in _UNIT_EXCLUSIONS:
                continue
            distance = abs(other_index - index)
            key = (distance, 0 if other_index < index else 1)
            if best_distance is None or key < best_distance:
                best_distance = key
                entity = word

        predicate = frozenset(
            other.text.lower()
            for other in window_tokens
            if other.text.lower() in PREDICATE_LEXICON
        )

        nodes.append(
            QuantityNode(
                surface=token.text,
                value=value,
                unit_phrase=unit,
                entity_mention=entity,
                predicate_context=predicate,
                window=(window_tokens[0].start, window_tokens[-1].end),
                token_index=index,
            )
        )
    return nodes


def _nodes_by_value(nodes: tuple[QuantityNode, ...] | list[QuantityNode]) -> dict[Fraction, list[int]]:
    mapping: dict[Fraction, list[int]] = {}
    for index, node in enumerate(nodes):
        mapping.setdefault(node.value, []).append(index)
    return mapping


def _match_operands_to_nodes(
    values: tuple[Fraction, ...], nodes: list[QuantityNode]
) -> list[int]:
    by_value = _nodes_by_value(nodes)
    members: list[int] = []
    used: set[int] = set()
    for value in values:
        for index in by_value.get(value, []):
            if index not in used:
                members.append(index)
                used.add(index)
                break
    return members


def build_relation_graph(nodes: list[QuantityNode], text: str) -> QuantityGraph:
    """Add relation edges over extracted nodes from deterministic templates."""
    tokens = _tokenize(text)
    lowered = [token.text.lower() for token in tokens]
    checks = check_equations(text)
    edges: list[RelationEdge] = []

    def nodes_near(token_index: int, limit: int = WINDOW_TOKENS) -> list[int]:
        return [
            index
            for index, node in enumerate(nodes)
            if abs(node.token_index - token_index) <= limit
        ]

    # Aggregation: total/together/altogether/"in all"/"in total" markers
    # plus additive equations.
    for position, word in enumerate(lowered):
        is_marker = word in AGGREGATION_MARKERS or (
            word == "in"
            and position + 1 < len(lowered)
            and lowered[position + 1] in ("all", "total")
        )
        if not is_marker:
            continue
        members = nodes_near(position)
        if members:
            edges.append(RelationEdge(kind=EDGE_AGGREGATION, members=tuple(members)))
    for check in checks:
        if check.operator != OP_ADD:
            continue
        members = _match_operands_to_nodes(
            check.operands + (check.claimed_result,), nodes
        )
        if len(members) >= 2:
            edges.append(
                RelationEdge(kind=EDGE_AGGREGATION, members=tuple(members), source="equation")
            )

    # Comparison: "more than" / "fewer than" / "less than".
    for position, word in enumerate(lowered):
        if word not in COMPARATIVE_MARKERS:
            continue
        if position + 1 >= len(lowered) or lowered[position + 1] != "than":
            continue
        direction = DIRECTION_INCREASE if word == "more" else DIRECTION_DECREASE
        before = [i for i, node in enumerate(nodes) if 0 <= position - node.token_index <= WINDOW_TOKENS]
        after = [i for i, node in enumerate(nodes) if 0 < node.token_index - position <= WINDOW_TOKENS]
        members: list[int] = []
        if before:
            members.append(before[-1])
        if after:
            members.append(after[0])
        if members:
            edges.append(
                RelationEdge(
                    kind=EDGE_COMPARISON, members=tuple(members), direction=direction
                )
            )

    # Rate: each/per/every markers plus multiplicative contexts.
    for position, word in enumerate(lowered):
        if word not in RATE_MARKERS:
            continue
        candidates = [
            (abs(node.token_index - position), 0 if node.token_index < position else 1, index)
            for index, node in enumerate(nodes)
            if abs(node.token_index - position) <= WINDOW_TOKENS
        ]
        if not candidates:
            continue
        candidates.sort()
        per_index = candidates[0][2]
        members = [per_index]
        partner = [
            (abs(node.token_index - nodes[per_index].token_index), index)
            for index, node in enumerate(nodes)
            if index != per_index
        ]
        if partner:
            partner.sort()
            members.append(partner[0][1])
        edges.append(
            RelationEdge(kind=EDGE_RATE, members=tuple(members), marker_node=per_index)
        )
    for check in checks:
        if check.operator != OP_MUL:
            continue
        members = _match_operands_to_nodes(check.operands, nodes)
        if len(members) == 2:
            edges.append(
                RelationEdge(
                    kind=EDGE_RATE,
                    members=tuple(members),
                    marker_node=members[1],
                    source="equation",
                )
            )

    # Change events: one edge per node carrying a change verb.
    for index, node in enumerate(nodes):
        verbs = node.predicate_context & CHANGE_VERBS
        if not verbs:
            continue
        direction = DIRECTION_UNKNOWN
        for verb in sorted(verbs):
            if verb in _DECREASE_VERBS:
                direction = DIRECTION_DECREASE
                break
            if verb in _INCREASE_VERBS:
                direction = DIRECTION_INCREASE
                break
        node_sentence = _sentence_of(tokens, node.token_index)
        base = None
        best = None
        for other_index, other in enumerate(nodes):
            if other_index == index:
                continue
            if _sentence_of(tokens, other.token_index) != node_sentence:
                continue
            distance = abs(other.token_index - node.token_index)
            key = (distance, 0 if other.token_index < node.token_index else 1)
            if best is None or key < best:
                best = key
                base = other_index
        members = (index,) if base is None else (index, base)
        edges.append(
            RelationEdge(kind=EDGE_CHANGE_EVENT, members=members, direction=direction)
        )

    # Part-whole: a total-marked node explained by two subgroup quantities.
    for index, node in enumerate(nodes):
        if not (node.predicate_context & (AGGREGATION_MARKERS | {"all"})):
            continue
        others = [i for i in range(len(nodes)) if i != index]
        found = False
        for first_position, first in enumerate(others):
            for second in others[first_position + 1 :]:
                if nodes[first].value + nodes[second].value == node.value:
                    edges.append(
                        RelationEdge(
                            kind=EDGE_PART_WHOLE, members=(first, second, index)
                        )
                    )
                    found = True
                    break
            if found:
                break

    return QuantityGraph(nodes=tuple(nodes), edges=tuple(edges))


def _sentence_of(tokens: list[_Token], token_index: int) -> int:
    if 0 <= token_index < len(tokens):
        return tokens[token_index].sentence
    return -1


def _binding_tokens(node: QuantityNode) -> frozenset[str]:
    words = set()
    for chunk in (node.unit_phrase, node.entity_mention):
        for word in chunk.lower().split():
            if word and word not in _STOPWORDS:
                words.add(_stem(word))
    return frozenset(words)


def _stem(word: str) -> str:
    if len(word) > 3 and word.endswith("s"):
        return word[:-1]
    return word


def _check_quantity_binding(
    problem_graph: QuantityGraph, trace_graph: QuantityGraph
) -> list[RiskSignal]:
    """Same number bound to a different entity/unit than in the problem."""
    signals: list[RiskSignal] = []
    problem_values = _nodes_by_value(problem_graph.nodes)
    seen_values: set[Fraction] = set()

    for trace_node in trace_graph.nodes:
        if trace_node.value in seen_values:
            continue
        same_value = problem_values.get(trace_node.value)
        if not same_value:
            continue
        trace_binding = _binding_tokens(trace_node)
        if not trace_binding:
            continue
        same_binding: set[str] = set()
        for index in same_value:
            same_binding |= _binding_tokens(problem_graph.nodes[index])
        if not same_binding:
            continue
        if trace_binding & same_binding:
            continue
        other_binding: set[str] = set()
        for value, indices in problem_values.items():
            if value == trace_node.value:
                continue
            for index in indices:
                other_binding |= _binding_tokens(problem_graph.nodes[index])
        seen_values.add(trace_node.value)
        evidence = (
            f"trace uses {trace_node.surface} with "
            f"'{trace_node.unit_phrase or trace_node.entity_mention}'; "
            f"problem binds it to '{' '.join(sorted(same_binding))}'",
        )
        if trace_binding & other_binding:
            severity = SEVERITY_HIGH
        else:
            severity = SEVERITY_WARNING
        signals.append(
            RiskSignal(category=RISK_QUANTITY_BINDING, severity=severity, evidence=evidence)
        )
    return signals


_TIMES_MORE_RE = re.compile(r"\b([A-Za-z]+|\d+)\s+times\s+more\b", re.IGNORECASE)
_EQUAL_SPLIT_RE = re.compile(
    r"\b(?:split|share[sd]?|divid\w*|distribut\w*)\b[^.!?]*\b(?:equally|evenly)\b"
    r"|\b(?:equally|evenly)\b[^.!?]*\b(?:among|between|split|share[sd]?|divid\w*)\b",
    re.IGNORECASE,
)


def _word_or_digit_value(token: str) -> Fraction | None:
    lowered = token.lower()
    if lowered in NUMBER_WORDS:
        return Fraction(NUMBER_WORDS[lowered])
    if token.isdigit():
        return Fraction(int(token))
    return None


def _check_comparisons(
    problem_text: str,
    problem_graph: QuantityGraph,
    trace_graph: QuantityGraph,
    trace_checks: list[EquationCheck],
) -> list[RiskSignal]:
    signals: list[RiskSignal] = []

    trace_has_comparison = any(edge.kind == EDGE_COMPARISON for edge in trace_graph.edges)
    addsub_operands: set[Fraction] = set()
    for check in trace_checks:
        if check.operator in (OP_ADD, OP_SUB):
            addsub_operands.update(check.operands)

    for edge in problem_graph.edges:
        if edge.kind != EDGE_COMPARISON or not edge.members:
            continue
        delta = problem_graph.nodes[edge.members[0]].value
        if trace_has_comparison or delta in addsub_operands:
            continue
        signals.append(
            RiskSignal(
                category=RISK_COMPARISON,
                severity=SEVERITY_WARNING,
                evidence=(
                    f"comparison over {problem_graph.nodes[edge.members[0]].surface} "
                    "is not applied in the trace",
                ),
            )
        )
        break

    match = _TIMES_MORE_RE.search(problem_text)
    if match:
        multiplier = _word_or_digit_value(match.group(1))
        if multiplier is not None:
            multiplied = {
                operand
                for check in trace_checks
                if check.operator == OP_MUL
                for operand in check.operands
            }
            if multiplier not in multiplied and multiplier + 1 not in multiplied:
                signals.append(
                    RiskSignal(
                        category=RISK_TIMES_MORE,
                        severity=SEVERITY_HIGH,
                        evidence=(f"'{match.group(0)}' has no multiplication in the trace",),
                    )
                )
    return signals


def _check_rate_usage(
    problem_graph: QuantityGraph,
    problem_text: str,
    trace_checks: list[EquationCheck],
) -> list[RiskSignal]:
    signals: list[RiskSignal] = []
    muldiv_operands: set[Fraction] = set()
    for check in trace_checks:
        if check.operator in (OP_MUL, OP_DIV):
            muldiv_operands.update(check.operands)

    seen: set[Fraction] = set()
    for edge in problem_graph.edges:
        if edge.kind != EDGE_RATE or edge.source != "marker" or edge.marker_node is None:
            continue
        per_node = problem_graph.nodes[edge.marker_node]
        if per_node.value in seen:
            continue
        seen.add(per_node.value)
        if per_node.value in muldiv_operands:
            continue
        signals.append(
            RiskSignal(
                category=RISK_RATE_MISSING,
                severity=SEVERITY_HIGH,
                evidence=(
                    f"per-quantity {per_node.surface} "
                    f"({per_node.unit_phrase or 'no unit'}) is never multiplied",
                ),
            )
        )

    if _EQUAL_SPLIT_RE.search(problem_text):
        has_division = any(check.operator == OP_DIV for check in trace_checks)
        if not has_division:
            signals.append(
                RiskSignal(
                    category=RISK_EQUALLY_SPLIT,
                    severity=SEVERITY_HIGH,
                    evidence=("equal split in the problem but no division in the trace",),
                )
            )
    return signals


def _check_change_events(
    problem_graph: QuantityGraph, trace_checks: list[EquationCheck]
) -> list[RiskSignal]:
    signals: list[RiskSignal] = []
    seen_pairs: set[frozenset[Fraction]] = set()
    for edge in problem_graph.edges:
        if edge.kind != EDGE_CHANGE_EVENT or len(edge.members) < 2:
            continue
        if edge.direction == DIRECTION_UNKNOWN:
            continue
        changed = problem_graph.nodes[edge.members[0]].value
        base = problem_graph.nodes[edge.members[1]].value
        if changed == base:
            continue
        pair = {changed, base}
        if frozenset(pair) in seen_pairs:
            continue
        seen_pairs.add(frozenset(pair))

        def has(operator: str) -> bool:
            return any(
                check.operator == operator and set(check.operands) == pair
                for check in trace_checks
            )

        if edge.direction == DIRECTION_DECREASE and has(OP_ADD) and not has(OP_SUB):
            wrong, right = "added", "removed"
        elif edge.direction == DIRECTION_INCREASE and has(OP_SUB) and not has(OP_ADD):
            wrong, right = "subtracted", "added"
        else:
            continue
        signals.append(
            RiskSignal(
                category=RISK_CHANGE_EVENT,
                severity=SEVERITY_HIGH,
                evidence=(
                    f"{problem_graph.nodes[edge.members[0]].surface} should be "
                    f"{right} but the trace {wrong} it",
                ),
            )
        )
    return signals


_ASKS_DIFFERENCE_RE = re.compile(
    r"how\s+(?:many|much)\s+(?:more|fewer|less)\b|\bdifference\b|\bleft\b|\bremain(?:s|ing)?\b",
    re.IGNORECASE,
)
_ASKS_TOTAL_RE = re.compile(
    r"\bin\s+all\b|\bin\s+total\b|\baltogether\b|\btotal\b|\bsum\b", re.IGNORECASE
)


def _question_part(problem_text: str) -> str:
    sentences = re.split(r"(?<=[.!?])\s+", problem_text)
    questions = [sentence for sentence in sentences if "?" in sentence]
    if questions:
        return " ".join(questions)
    return sentences[-1] if sentences else problem_text


def _check_answer_format(
    problem_text: str, trace: ReasoningTrace, trace_checks: list[EquationCheck]
) -> list[RiskSignal]:
    question = _question_part(problem_text)
    if _ASKS_DIFFERENCE_RE.search(question):
        requested = "difference"
    elif _ASKS_TOTAL_RE.search(question):
        requested = "total"
    else:
        return []

    final_value = as_fraction(trace.answer)
    if final_value is None:
        return []
    derivations = [check for check in trace_checks if check.claimed_result == final_value]
    if not derivations:
        return []
    operator = derivations[-1].operator

    mismatch = (requested == "difference" and operator == OP_ADD) or (
        requested == "total" and operator == OP_SUB
    )
    if not mismatch:
        return []
    return [
        RiskSignal(
            category=RISK_ANSWER_FORMAT,
            severity=SEVERITY_WARNING,
            evidence=(f"question asks for a {requested}; answer derived by {operator}",),
        )
    ]


def semantic_graph_check(problem_text: str, trace_text: str) -> GraphReport:
    """Run the five risk checks and produce the clipped score.

    An empty or answerless trace is a generation failure with score 0.
    """
    problem_nodes = extract_quantities(problem_text)
    problem_graph = build_relation_graph(problem_nodes, problem_text)

    trace = ReasoningTrace.from_text(trace_text)
    if trace.is_empty or not trace.has_answer:
        return GraphReport(
            problem_graph=problem_graph,
            trace_graph=EMPTY_GRAPH,
            risks=(
                RiskSignal(
                    category=RISK_GENERATION_FAILURE,
                    severity=SEVERITY_WARNING,
                    evidence=("empty or answerless trace",),
                ),
            ),
            score=0.0,
            diagnosis=DIAGNOSIS_GENERATION_FAILURE,
        )

    trace_nodes = extract_quantities(trace_text)
    trace_graph = build_relation_graph(trace_nodes, trace_text)
    trace_checks = check_equations(trace_text)

    risks: list[RiskSignal] = []
    risks.extend(_check_quantity_binding(problem_graph, trace_graph))
    risks.extend(_check_comparisons(problem_text, problem_graph, trace_graph, trace_checks))
    risks.extend(_check_rate_usage(problem_graph, problem_text, trace_checks))
    risks.extend(_check_change_events(problem_graph, trace_checks))
    risks.extend(_check_answer_format(problem_text, trace, trace_checks))

    deduped: list[RiskSignal] = []
    seen: set[tuple[str, tuple[str, ...]]] = set()
    for risk in risks:
        key = (risk.category, risk.evidence)
        if key not in seen:
            seen.add(key)
            deduped.append(risk)

    score = 1.0
    for risk in deduped:
        score -= PENALTIES[risk.severity]
    score = min(1.0, max(0.0, score))

    return GraphReport(
        problem_graph=problem_graph,
        trace_graph=trace_graph,
        risks=tuple(deduped),
        score=score,
        diagnosis=DIAGNOSIS_OK,
    )


_SCORE_EPS = 1e-9


def graph_guard(
    initial: GraphReport,
    candidate: GraphReport,
    min_score: float,
    drop_tolerance: float,
) -> bool:
    """Candidate-side safety gate over the two graph reports.

    Passes only when the candidate is not a generation failure, carries no
    high-severity risk, meets the minimum score, and does not drop more
    than the tolerance below the initial trace's score.
    """
    if candidate.diagnosis == DIAGNOSIS_GENERATION_FAILURE:
        return False
    if has_high_risk(candidate):
        return False
    if candidate.score + _SCORE_EPS < min_score:
        return False
    if candidate.score + _SCORE_EPS < initial.score - drop_tolerance:
        return False
    return True
