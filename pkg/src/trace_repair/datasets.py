"""Dataset loading, numeric filtering, and reproducible sampling.

Datasets are UTF-8 JSONL files with one record per line:

    {"example_id": ..., "problem_text": ..., "gold_answer": ...,
     "cached_initial_trace": ...}

The sampler is pinned so sampled id lists can be reproduced in any
language: a Fisher-Yates shuffle driven by 32-bit MT19937 draws (CPython's
``random.Random(seed).getrandbits(32)``, i.e. the reference mt19937
``genrand_uint32`` stream seeded via ``init_by_array`` over the seed's
little-endian 32-bit words) with rejection sampling to avoid modulo bias.
The first ``size`` shuffled indices are kept and returned in pool order.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .answers import (
    KIND_NONE,
    KIND_RATIO_OR_TIME,
    KIND_YES_NO,
    NUMERIC_KINDS,
    normalize_answer,
)

REJECT_QUESTION_TYPE = "non_numeric_question_type"
REJECT_AMBIGUOUS_FORMAT = "ambiguous_answer_format"
REJECT_YES_NO = "yes_no_answer"

REJECTION_CATEGORIES = (REJECT_QUESTION_TYPE, REJECT_AMBIGUOUS_FORMAT, REJECT_YES_NO)

_REQUIRED_FIELDS = ("example_id", "problem_text", "gold_answer")

_CATEGORICAL_QUESTION_RE = re.compile(
    r"\b(?:which|who|whom|whose)\b|\bwhat\s+(?:kind|type|color|colour|shape|name)\b",
    re.IGNORECASE,
)
_NUMERIC_ASK_RE = re.compile(
    r"\bhow\s+(?:many|much|long|far|old|tall|heavy|fast)\b"
    r"|\bwhat\s+(?:number|fraction|percent(?:age)?)\b"
    r"|\btotal\b|\bsum\b|\bdifference\b|\baverage\b",
    re.IGNORECASE,
)


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input. Always fatal."""


@dataclass(frozen=True)
class DatasetRecord:
    example_id: str
    problem_text: str
    gold_answer: str
    cached_initial_trace: str | None = None

    def to_json_dict(self) -> dict:
        payload = {
            "example_id": self.example_id,
            "problem_text": self.problem_text,
            "gold_answer": self.gold_answer,
        }
        if self.cached_initial_trace is not None:
            payload["cached_initial_trace"] = self.cached_initial_trace
        return payload


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Parse a JSONL dataset file, preserving file order.

    A malformed line or a duplicate example id aborts with the offending
    line number.
    """
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{line_number}: invalid JSON: {exc}") from exc
            if not isinstance(payload, dict):
                raise DatasetError(f"{path}:{line_number}: record is not an object")
            for name in _REQUIRED_FIELDS:
                if name not in payload:
                    raise DatasetError(f"{path}:{line_number}: missing field {name!r}")
            example_id = str(payload["example_id"])
            if example_id in seen:
                raise DatasetError(f"{path}:{line_number}: duplicate example_id {example_id!r}")
            seen.add(example_id)
            trace = payload.get("cached_initial_trace")
            records.append(
                DatasetRecord(
                    example_id=example_id,
                    problem_text=str(payload["problem_text"]),
                    gold_answer=str(payload["gold_answer"]),
                    cached_initial_trace=str(trace) if trace is not None else None,
                )
            )
    return records


def write_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n")


@dataclass
class FilterResult:
    kept: list[DatasetRecord]
    rejected_ids: dict[str, list[str]] = field(
        default_factory=lambda: {category: [] for category in REJECTION_CATEGORIES}
    )

    def counts(self) -> dict[str, int]:
        return {category: len(ids) for category, ids in self.rejected_ids.items()}

    @property
    def total(self) -> int:
        return len(self.kept) + sum(len(ids) for ids in self.rejected_ids.values())


def filter_numeric(pool: Sequence[DatasetRecord]) -> FilterResult:
    """Keep only examples whose normalized answers are plain numbers.

    Rejection order: likely categorical question types first (a which/who
    style question without a numeric ask), then yes/no answers, then
    colon-formed or otherwise ambiguous answer formats. Every record lands
    in exactly one bucket, so kept + rejections = pool size.
    """
    result = FilterResult(kept=[])
    for record in pool:
        if _CATEGORICAL_QUESTION_RE.search(record.problem_text) and not _NUMERIC_ASK_RE.search(
            record.problem_text
        ):
            result.rejected_ids[REJECT_QUESTION_TYPE].append(record.example_id)
            continue
        value = normalize_answer(record.gold_answer)
        if value.kind in NUMERIC_KINDS:
            result.kept.append(record)
        elif value.kind == KIND_YES_NO:
            result.rejected_ids[REJECT_YES_NO].append(record.example_id)
        else:
            # ratio/time strings may denote either ratios or clock times,
            # and anything unparseable is equally ambiguous.
            assert value.kind in (KIND_RATIO_OR_TIME, KIND_NONE)
            result.rejected_ids[REJECT_AMBIGUOUS_FORMAT].append(record.example_id)
    return result


def _randbelow(rng: random.Random, n: int) -> int:
    # Rejection sampling over raw 32-bit draws keeps the procedure
    # reproducible from the documented MT19937 stream alone.
    span = (1 << 32) // n * n
    while True:
        draw = rng.getrandbits(32)
        if draw < span:
            return draw % n


def sample_subset(
    pool: Sequence[DatasetRecord], size: int, seed: int
) -> list[DatasetRecord]:
    """Uniform sample without replacement; deterministic in (pool, seed).

    See the module docstring for the pinned shuffle procedure. The subset
    is returned in pool order.
    """
    if size < 0 or size > len(pool):
        raise ValueError(f"sample size {size} out of range for pool of {len(pool)}")
    rng = random.Random(seed)
    indices = list(range(len(pool)))
    for position in range(len(indices) - 1, 0, -1):
        other = _randbelow(rng, position + 1)
        indices[position], indices[other] = indices[other], indices[position]
    chosen = sorted(indices[:size])
    return [pool[index] for index in chosen]
