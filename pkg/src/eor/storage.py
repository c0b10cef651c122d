"""JSON Lines / JSON / CSV persistence helpers with deterministic output."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

from .domain import GoldAnswerSet, Query


def read_jsonl(path: str | Path) -> list[dict]:
    rows: list[dict] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    return rows


def append_jsonl(path: str | Path, record: dict | str) -> None:
    line = record if isinstance(record, str) else json.dumps(record, sort_keys=True)
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def dump_json(path: str | Path, payload) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def canonical_hash(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def load_dataset(path: str | Path) -> list[tuple[Query, GoldAnswerSet]]:
    """Load a question set: JSON Lines, one {question, answers[, id]} per line.

    Malformed lines are rejected with their line number.
    """
    samples: list[tuple[Query, GoldAnswerSet]] = []
    seen_ids: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(raw, dict):
                raise ValueError(f"{path}:{lineno}: expected an object")
            question = raw.get("question")
            if not isinstance(question, str) or not question.strip():
                raise ValueError(f"{path}:{lineno}: missing or empty 'question'")
            answers = raw.get("answers")
            if not isinstance(answers, list) or not answers:
                raise ValueError(f"{path}:{lineno}: 'answers' must be a non-empty list")
            if not all(isinstance(a, str) and a.strip() for a in answers):
                raise ValueError(f"{path}:{lineno}: every answer alias must be a non-empty string")
            sample_id = raw.get("id", f"s{lineno - 1:05d}")
            if not isinstance(sample_id, str) or not sample_id:
                raise ValueError(f"{path}:{lineno}: 'id' must be a non-empty string")
            if sample_id in seen_ids:
                raise ValueError(f"{path}:{lineno}: duplicate sample id {sample_id!r}")
            seen_ids.add(sample_id)
            samples.append((Query(sample_id, question), GoldAnswerSet.from_aliases(answers)))
    return samples
