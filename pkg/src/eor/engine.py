"""Executes retrieval plans: fetches chunk lists from source adapters and
applies truncation, concatenation, reranking, and compression."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from . import dsl
from .domain import Chunk, Document, Query
from .reader import ReaderGateway, ReplayCache, ReplayMissError, Transport, TransportError

# Web text is split into fixed windows of this many whitespace tokens.
CHUNK_TOKENS = 100

# The hybrid source pools this many top wiki chunks before reranking.
HYBRID_WIKI_TOP = 20


class PlanExecutionError(RuntimeError):
    """A plan step failed; the message carries the path to the failing node."""


class MissingFixtureError(LookupError):
    pass


class SourceAdapter(Protocol):
    source_tag: str

    def fetch(self, query: Query) -> list[Chunk]: ...


class RerankScorer(Protocol):
    def score(self, query_text: str, chunk_text: str) -> float: ...


class FixtureSourceAdapter:
    """File-backed adapter: JSON Lines of {query_id, chunks: [{text, score?}]}."""

    def __init__(self, path: str | Path, source_tag: str) -> None:
        self.path = Path(path)
        self.source_tag = source_tag
        self._by_id: dict[str, list[Chunk]] = {}
        for line in self.path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            chunks = [
                Chunk(c["text"], source_tag, c.get("score"))
                for c in raw["chunks"]
            ]
            self._by_id[raw["query_id"]] = chunks

    def fetch(self, query: Query) -> list[Chunk]:
        if query.id not in self._by_id:
            raise MissingFixtureError(
                f"{self.path} has no chunks for query id {query.id!r}"
            )
        return list(self._by_id[query.id])


class HttpSourceAdapter:
    """Wire protocol: POST {query_text} -> {chunks: [{text, score?}]}.

    An optional per-chunk word budget truncates each returned chunk, for
    sources whose contract caps words per result.
    """

    def __init__(self, transport: Transport, source_tag: str, word_budget: int | None = None) -> None:
        self.transport = transport
        self.source_tag = source_tag
        self.word_budget = word_budget

    def fetch(self, query: Query) -> list[Chunk]:
        reply = self.transport({"query_text": query.text})
        if "chunks" not in reply:
            raise TransportError(f"source reply missing 'chunks': {reply!r}")
        chunks = [Chunk(c["text"], self.source_tag, c.get("score")) for c in reply["chunks"]]
        if self.word_budget is not None:
            chunks = [
                Chunk(truncate_tokens(c.text, self.word_budget), c.source_tag, c.rank_score)
                for c in chunks
            ]
        return chunks


def rerank_key(query_text: str, chunk_text: str) -> str:
    blob = json.dumps({"chunk": chunk_text, "query": query_text}, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class CachedRerankScorer:
    """Relevance scorer backed by a replay cache, with an optional live scorer
    for record/live modes."""

    def __init__(
        self,
        cache: ReplayCache,
        mode: str = "replay",
        live_scorer: RerankScorer | None = None,
    ) -> None:
        self.cache = cache
        self.mode = mode
        self.live_scorer = live_scorer

    def score(self, query_text: str, chunk_text: str) -> float:
        key = rerank_key(query_text, chunk_text)
        cached = self.cache.lookup(key)
        if cached is not None:
            return float(cached)
        if self.mode == "replay":
            raise ReplayMissError(key)
        if self.live_scorer is None:
            raise TransportError(f"{self.mode} mode requires a live rerank scorer")
        value = float(self.live_scorer.score(query_text, chunk_text))
        if self.mode == "record":
            self.cache.store(key, repr(value), model_id="rerank")
        return value


class HttpRerankScorer:
    """Wire protocol: POST {query_text, chunk_text} -> {score}."""

    def __init__(self, transport: Transport) -> None:
        self.transport = transport

    def score(self, query_text: str, chunk_text: str) -> float:
        reply = self.transport({"query_text": query_text, "chunk_text": chunk_text})
        if "score" not in reply:
            raise TransportError(f"rerank reply missing 'score': {reply!r}")
        return float(reply["score"])


def window_tokens(text: str, size: int = CHUNK_TOKENS) -> list[str]:
    """Non-overlapping windows of exactly `size` whitespace tokens (the last
    one may be shorter)."""
    tokens = text.split()
    return [" ".join(tokens[i : i + size]) for i in range(0, len(tokens), size)]


def truncate_tokens(text: str, budget: int) -> str:
    """First `budget` whitespace tokens of the text."""
    return " ".join(text.split()[:budget])


def truncate(chunks: Sequence[Chunk], k: int) -> list[Chunk]:
    if k < 1:
        raise ValueError("truncation count must be >= 1")
    return list(chunks[:k])


def concat(lists: Sequence[Sequence[Chunk]]) -> list[Chunk]:
    if len(lists) < 2:
        raise ValueError("concatenation needs at least two chunk lists")
    merged: list[Chunk] = []
    for chunks in lists:
        merged.extend(chunks)
    return merged


def rerank(query: Query, chunks: Sequence[Chunk], scorer: RerankScorer) -> list[Chunk]:
    """Sort by scorer relevance, descending; ties keep the original order."""
    scored = [(scorer.score(query.text, chunk.text), i, chunk) for i, chunk in enumerate(chunks)]
    for score, i, chunk in scored:
        if not math.isfinite(score):
            raise ValueError(f"non-finite rerank score {score!r} for chunk {i}")
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][0], i))
    return [Chunk(scored[i][2].text, scored[i][2].source_tag, scored[i][0]) for i in order]


def compress(query: Query, document: Document, reader: ReaderGateway) -> Document:
    """Reader-produced query-focused summary as a single-chunk document.

    An empty document short-circuits without calling the reader.
    """
    if document.is_empty():
        return Document(())
    summary = reader.summarize(query, document)
    if not summary.strip():
        return Document(())
    return Document((Chunk(summary, "parametric"),))


def parametric_knowledge(query: Query, reader: ReaderGateway) -> list[Chunk]:
    """Background document generated by the reader itself, as one chunk."""
    text = reader.background_document(query)
    if not text.strip():
        return []
    return [Chunk(text, "parametric")]


def _hybrid_chunks(
    query: Query,
    adapters: Mapping[str, SourceAdapter],
    reader: ReaderGateway | None,
) -> list[Chunk]:
    # Hybrid pools all search chunks, the top wiki chunks, and the parametric
    # background document (windowed when it exceeds one chunk's budget).
    se = _fetch(query, adapters, "SE")
    wiki = _fetch(query, adapters, "Wiki")[:HYBRID_WIKI_TOP]
    if reader is None:
        raise PlanExecutionError("Source(HB): parametric side requires a reader")
    pk = parametric_knowledge(query, reader)
    windowed_pk: list[Chunk] = []
    for chunk in pk:
        if len(chunk.text.split()) > CHUNK_TOKENS:
            windowed_pk.extend(Chunk(w, "parametric") for w in window_tokens(chunk.text))
        else:
            windowed_pk.append(chunk)
    return list(se) + list(wiki) + windowed_pk


def _fetch(query: Query, adapters: Mapping[str, SourceAdapter], kind: str) -> list[Chunk]:
    if kind not in adapters:
        raise PlanExecutionError(f"no adapter configured for source {kind!r}")
    return adapters[kind].fetch(query)


def execute_plan(
    plan: dsl.Plan,
    query: Query,
    adapters: Mapping[str, SourceAdapter] | None = None,
    scorer: RerankScorer | None = None,
    reader: ReaderGateway | None = None,
) -> Document:
    """Evaluate a plan bottom-up into the document handed to the reader.

    Deterministic in replay mode: identical (plan, query, fixtures) yield a
    byte-identical document.
    """
    adapters = adapters or {}

    def eval_node(node: dsl.Plan, path: str) -> list[Chunk]:
        try:
            if isinstance(node, dsl.Source):
                if node.kind == "ReFree":
                    return []
                if node.kind == "PK":
                    if "PK" in adapters:
                        return _fetch(query, adapters, "PK")
                    if reader is None:
                        raise PlanExecutionError(f"{path}: parametric source requires a reader")
                    return parametric_knowledge(query, reader)
                if node.kind == "HB":
                    return _hybrid_chunks(query, adapters, reader)
                return _fetch(query, adapters, node.kind)
            if isinstance(node, dsl.Rerank):
                if scorer is None:
                    raise PlanExecutionError(f"{path}: rerank requires a scorer")
                return rerank(query, eval_node(node.child, path + "/child"), scorer)
            if isinstance(node, dsl.Truncate):
                return truncate(eval_node(node.child, path + "/child"), node.k)
            if isinstance(node, dsl.Concat):
                parts = [
                    eval_node(child, f"{path}/[{i}]") for i, child in enumerate(node.children)
                ]
                return concat(parts)
        except PlanExecutionError:
            raise
        except (MissingFixtureError, ReplayMissError, TransportError, ValueError, KeyError) as exc:
            raise PlanExecutionError(f"{path} ({dsl.format_plan(node)}): {exc}") from exc
        raise PlanExecutionError(f"{path}: unexpected node {node!r}")

    if isinstance(plan, dsl.Compress):
        inner = Document(tuple(eval_node(plan.child, dsl.format_plan(plan.child))))
        try:
            if reader is None:
                raise PlanExecutionError("compression requires a reader")
            return compress(query, inner, reader)
        except PlanExecutionError:
            raise
        except (ReplayMissError, TransportError) as exc:
            raise PlanExecutionError(f"{dsl.format_plan(plan)}: {exc}") from exc
    return Document(tuple(eval_node(plan, dsl.format_plan(plan))))
