"""Deterministic offline backends: a toy reader transport, rerank and
similarity scorers, and a synthetic question world.

These let the whole pipeline run end to end with zero network access. The
toy world models questions "what is the capital of countryN?" whose gold
answer is the single token "capitalN"; documents and reader behavior are
derived from content hashes, so record/replay cycles are reproducible.
"""

from __future__ import annotations

import hashlib
import re

from .domain import normalized_tokens
from .reader import Transport

_COUNTRY_RE = re.compile(r"country(\d+)")
_GOLD_RE = re.compile(r"^capital\d+$")
_DECOY_RE = re.compile(r"^decoy\w+$")


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def toy_question(i: int) -> str:
    return f"what is the capital of country{i}?"


def toy_gold(i: int) -> str:
    return f"capital{i}"


def toy_dataset(n_samples: int) -> list[dict]:
    rows = []
    for i in range(n_samples):
        aliases = [toy_gold(i)]
        if i % 5 == 0:
            aliases.append(f"city{i}")
        rows.append({"id": f"q{i:05d}", "question": toy_question(i), "answers": aliases})
    return rows


def toy_source_chunks(kind: str, i: int, n_chunks: int, hit_rate: int) -> list[dict]:
    """Fixture chunks for one query: the gold token appears in one chunk for
    hit_rate percent of queries, decoys elsewhere."""
    has_gold = stable_hash(f"{kind}{i}") % 100 < hit_rate
    gold_pos = stable_hash(f"{kind}pos{i}") % n_chunks
    chunks = []
    for j in range(n_chunks):
        words = [f"country{i}", "report", f"{kind}note{j}"]
        if has_gold and j == gold_pos:
            words.append(toy_gold(i))
        else:
            words.append(f"decoy{i}{kind}{j}")
        words.append(f"closing{j}")
        chunks.append({"text": " ".join(words), "score": round(1.0 - j * 0.1, 3)})
    return chunks


def _country_index(text: str) -> int | None:
    match = _COUNTRY_RE.search(text)
    return int(match.group(1)) if match else None


def _pick(tokens: list[str], pattern: re.Pattern) -> list[str]:
    return [t for t in tokens if pattern.match(t)]


class ToyReaderTransport:
    """Reader service double: answers are computed from the prompt alone.

    Counts calls so tests can assert on network traffic.
    """

    def __init__(self) -> None:
        self.calls = 0

    def __call__(self, payload: dict) -> dict:
        self.calls += 1
        prompt = payload["prompt"]
        if prompt.startswith("Generate a background document"):
            return {"text": self._background(prompt)}
        if prompt.startswith("Please truthfully summarize"):
            return {"text": self._summary(prompt)}
        if prompt.startswith("Assuming the following paragraphs are true:"):
            return {"text": self._grounded_answer(prompt)}
        return {"text": self._closed_book_answer(prompt)}

    def _background(self, prompt: str) -> str:
        query = prompt.splitlines()[-1].rstrip(".")
        i = _country_index(query)
        if i is None:
            return f"background text {stable_hash(query) % 1000}"
        if stable_hash(f"pk{i}") % 100 < 70:
            return f"country{i} overview the capital is {toy_gold(i)} population note{i}"
        return f"country{i} overview mentions decoy{i}pk region note{i}"

    def _summary(self, prompt: str) -> str:
        body = prompt.split("document: ", 1)[1]
        body = body.rsplit("\n\nsummary:", 1)[0]
        tokens = body.split()
        return " ".join(tokens[:60])

    def _document_section(self, prompt: str) -> str:
        after = prompt.split("Assuming the following paragraphs are true:\n\n", 1)[1]
        return after.rsplit("\n\nPlease directly answer", 1)[0]

    def _grounded_answer(self, prompt: str) -> str:
        doc = self._document_section(prompt)
        query = prompt.splitlines()[-1]
        i = _country_index(query)
        if i is None:
            return "unknown"
        tokens = normalized_tokens(doc)
        gold = toy_gold(i)
        decoys = _pick(tokens, _DECOY_RE)
        roll = stable_hash(f"rag{prompt}") % 100
        if gold in tokens:
            if roll < 78 or not decoys:
                return gold
            if roll < 92:
                return decoys[roll % len(decoys)]
            return f"decoy{i}ghost"
        if roll < 12:
            return gold
        if roll < 70 and decoys:
            return decoys[roll % len(decoys)]
        return f"decoy{i}halluc{roll}"

    def _closed_book_answer(self, prompt: str) -> str:
        query = prompt.splitlines()[-1]
        i = _country_index(query)
        if i is None:
            return "unknown"
        if stable_hash(f"refree{i}") % 100 < 55:
            return toy_gold(i)
        return f"decoy{i}refree"


class ToyRerankScorer:
    """Relevance double: chunks containing the gold token score highest."""

    def score(self, query_text: str, chunk_text: str) -> float:
        i = _country_index(query_text)
        tokens = normalized_tokens(chunk_text)
        jitter = (stable_hash(query_text + "\x00" + chunk_text) % 1000) / 10000.0
        if i is not None and toy_gold(i) in tokens:
            return 0.9 + jitter
        return 0.3 + jitter


class ToySimilarityTransport:
    """Similarity service double: normalized-token Jaccard overlap."""

    def __init__(self) -> None:
        self.calls = 0

    def __call__(self, payload: dict) -> dict:
        self.calls += 1
        a = set(normalized_tokens(payload["text_a"]))
        b = set(normalized_tokens(payload["text_b"]))
        if not a and not b:
            return {"score": 1.0}
        if not a or not b:
            return {"score": 0.0}
        return {"score": len(a & b) / len(a | b)}


class CountingTransport:
    """Wraps a transport and counts how many calls reach it."""

    def __init__(self, inner: Transport) -> None:
        self.inner = inner
        self.calls = 0

    def __call__(self, payload: dict) -> dict:
        self.calls += 1
        return self.inner(payload)
