"""Core data types shared across the pipeline: queries, answers, documents,
run records, and binary indicator matrices."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SOURCE_TAGS = ("search", "wiki", "parametric")

CHUNK_SEPARATOR = "\n"

INDICATOR_KEYS = (
    "answer_correct",
    "retriever_error",
    "hallucination_error",
    "extraction_error",
    "lucky_guess",
)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    text = _ARTICLE_RE.sub(" ", text)
    return " ".join(text.split())


def normalized_tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


@dataclass(frozen=True)
class Query:
    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("query id must be non-empty")
        if not self.text:
            raise ValueError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class GoldAnswerSet:
    """Accepted answer aliases, deduplicated by normalized form."""

    aliases: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.aliases:
            raise ValueError("gold answer set needs at least one alias")

    @classmethod
    def from_aliases(cls, aliases: Iterable[str]) -> "GoldAnswerSet":
        kept: list[str] = []
        seen: set[str] = set()
        for alias in aliases:
            norm = normalize_answer(alias)
            if norm in seen:
                continue
            seen.add(norm)
            kept.append(alias)
        return cls(tuple(kept))


@dataclass(frozen=True)
class Chunk:
    text: str
    source_tag: str
    rank_score: float | None = None

    def __post_init__(self) -> None:
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"unknown source tag {self.source_tag!r}")


@dataclass(frozen=True)
class Document:
    chunks: tuple[Chunk, ...] = ()

    @property
    def text(self) -> str:
        return CHUNK_SEPARATOR.join(c.text for c in self.chunks)

    def is_empty(self) -> bool:
        return not self.text.strip()

    @classmethod
    def from_text(cls, text: str, source_tag: str = "search") -> "Document":
        if not text:
            return cls(())
        return cls((Chunk(text, source_tag),))


def contains_answer(document: Document | str, answers: GoldAnswerSet) -> int:
    """1 iff any normalized alias occurs as a contiguous token run in the
    normalized document text."""
    text = document.text if isinstance(document, Document) else document
    doc_tokens = normalized_tokens(text)
    for alias in answers.aliases:
        alias_tokens = normalized_tokens(alias)
        if not alias_tokens:
            continue
        width = len(alias_tokens)
        for start in range(len(doc_tokens) - width + 1):
            if doc_tokens[start : start + width] == alias_tokens:
                return 1
    return 0


@dataclass(frozen=True)
class CandidateAnswer:
    retriever_index: int
    text: str
    token_count: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.retriever_index < 0:
            raise ValueError("retriever_index must be non-negative")
        if self.token_count < 0:
            object.__setattr__(self, "token_count", len(self.text.split()))
        elif self.token_count != len(self.text.split()):
            raise ValueError("token_count does not match whitespace tokenization")


@dataclass(frozen=True)
class RunRecord:
    """One (sample, retriever) outcome: the document seen by the reader, the
    generated answer, and the five error/correctness indicators."""

    sample_id: str
    retriever: str
    document_text: str
    answer: str
    indicators: Mapping[str, int]
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        missing = [k for k in INDICATOR_KEYS if k not in self.indicators]
        if missing:
            raise ValueError(f"record {self.sample_id}/{self.retriever} missing indicators: {missing}")

    def to_json(self) -> str:
        payload = {
            "sample_id": self.sample_id,
            "retriever": self.retriever,
            "document_text": self.document_text,
            "answer": self.answer,
            "indicators": {k: int(self.indicators[k]) for k in INDICATOR_KEYS},
        }
        if self.flags:
            payload["flags"] = list(self.flags)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "RunRecord":
        return cls(
            sample_id=raw["sample_id"],
            retriever=raw["retriever"],
            document_text=raw["document_text"],
            answer=raw["answer"],
            indicators={k: int(v) for k, v in raw["indicators"].items()},
            flags=tuple(raw.get("flags", ())),
        )


def base_indicators(
    document: Document | str,
    answer: str,
    gold: GoldAnswerSet,
    answer_correct: int,
) -> dict[str, int]:
    """Derive the five indicators from one record's document/answer pair.

    The extraction-error and lucky-guess entries are products of the three
    base indicators, so they never need separate measurement.
    """
    doc_has_gold = contains_answer(document, gold)
    answer_set = GoldAnswerSet((answer,)) if answer else None
    answer_grounded = contains_answer(document, answer_set) if answer_set else 0
    i_a = int(answer_correct)
    i_er = 1 - doc_has_gold
    i_eh = 1 - answer_grounded
    return {
        "answer_correct": i_a,
        "retriever_error": i_er,
        "hallucination_error": i_eh,
        "extraction_error": (1 - i_er) * (1 - i_eh) * (1 - i_a),
        "lucky_guess": i_er * i_eh * i_a,
    }


class IndicatorMatrix:
    """N x M binary matrix with sample ids on rows and retriever names on
    columns."""

    def __init__(
        self,
        values: np.ndarray | Sequence[Sequence[int]],
        row_ids: Sequence[str],
        column_ids: Sequence[str],
    ) -> None:
        arr = np.asarray(values, dtype=np.int64)
        if arr.ndim != 2:
            raise ValueError("indicator matrix must be 2-dimensional")
        if arr.shape != (len(row_ids), len(column_ids)):
            raise ValueError(
                f"shape {arr.shape} does not match {len(row_ids)} rows x {len(column_ids)} columns"
            )
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("indicator entries must be exactly 0 or 1")
        self.values = arr
        self.row_ids = tuple(row_ids)
        self.column_ids = tuple(column_ids)

    @classmethod
    def from_records(
        cls,
        records: Iterable[RunRecord],
        indicator: str = "answer_correct",
        row_order: Sequence[str] | None = None,
        column_order: Sequence[str] | None = None,
    ) -> "IndicatorMatrix":
        records = list(records)
        rows = list(row_order) if row_order is not None else _first_seen(r.sample_id for r in records)
        cols = list(column_order) if column_order is not None else _first_seen(r.retriever for r in records)
        cell: dict[tuple[str, str], int] = {}
        for r in records:
            cell[(r.sample_id, r.retriever)] = int(r.indicators[indicator])
        values = np.zeros((len(rows), len(cols)), dtype=np.int64)
        for i, sid in enumerate(rows):
            for j, name in enumerate(cols):
                key = (sid, name)
                if key not in cell:
                    raise ValueError(f"missing record for sample {sid!r}, retriever {name!r}")
                values[i, j] = cell[key]
        return cls(values, rows, cols)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_ids.index(name)]

    def accuracies(self) -> dict[str, float]:
        means = self.values.mean(axis=0)
        return {name: float(means[j]) for j, name in enumerate(self.column_ids)}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IndicatorMatrix):
            return NotImplemented
        return (
            self.row_ids == other.row_ids
            and self.column_ids == other.column_ids
            and np.array_equal(self.values, other.values)
        )


def _first_seen(items: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out
