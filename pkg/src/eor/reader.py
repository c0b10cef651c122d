"""Reader-model gateway: prompt templates, a greedy-decoding request contract,
an HTTP transport, and a content-addressed replay cache.

The cache makes whole experiment runs replayable offline: in ``replay`` mode a
run performs zero network operations, and any missing response is a hard error
naming the cache key.
"""

from __future__ import annotations

import hashlib
import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .domain import Document, Query

PROMPT_KINDS = ("refree", "rag", "parametric", "compress")
TEMPLATE_FAMILIES = ("chat-instruct-15-words", "chat-instruct-few-words")
MODES = ("live", "record", "replay")

READER_ENDPOINT_ENV = "EOR_READER_ENDPOINT"
READER_TOKEN_ENV = "EOR_READER_TOKEN"

_ANSWER_LINE = {
    "chat-instruct-15-words": "Please directly answer the following question within 15 words:",
    "chat-instruct-few-words": "Please directly answer the following question with one or few words:",
}

_PARAMETRIC_TEMPLATE = "Generate a background document to answer the given question.\n{query}."

_COMPRESS_TEMPLATE = (
    "Please truthfully summarize the document below, the summary should contain "
    "the most important information relevant to answer the query and be within 200 words:\n"
    "query: {query}\n"
    "\n"
    "document: {document}\n"
    "\n"
    "summary: "
)


class PromptError(ValueError):
    pass


class ReplayMissError(LookupError):
    def __init__(self, key: str) -> None:
        super().__init__(f"no cached response for key {key}")
        self.key = key


class CacheCorruptionError(RuntimeError):
    pass


class TransportError(RuntimeError):
    pass


def template_body(kind: str, family: str) -> str:
    """The raw template text, with {query}/{document} placeholders intact."""
    if kind not in PROMPT_KINDS:
        raise PromptError(f"unknown prompt kind {kind!r}")
    if family not in TEMPLATE_FAMILIES:
        raise PromptError(f"unknown template family {family!r}")
    if kind == "parametric":
        return _PARAMETRIC_TEMPLATE
    if kind == "compress":
        return _COMPRESS_TEMPLATE
    if kind == "refree":
        return _ANSWER_LINE[family] + "\n{query}"
    return (
        "Assuming the following paragraphs are true:\n"
        "\n"
        "{document}\n"
        "\n" + _ANSWER_LINE[family] + "\n{query}"
    )


def render_prompt(
    kind: str,
    family: str,
    query: Query,
    document: Document | str | None = None,
) -> str:
    body = template_body(kind, family)
    doc_text = ""
    if document is not None:
        doc_text = document.text if isinstance(document, Document) else document
    if kind in ("rag", "compress") and not doc_text.strip():
        raise PromptError(f"{kind} prompt requires a non-empty document")
    return body.replace("{query}", query.text).replace("{document}", doc_text)


@dataclass(frozen=True)
class ReaderRequest:
    model_id: str
    prompt: str
    greedy: bool = True
    max_tokens: int = 64

    def __post_init__(self) -> None:
        if not self.greedy:
            raise ValueError("only greedy decoding is supported")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def payload(self) -> dict:
        return {
            "model_id": self.model_id,
            "prompt": self.prompt,
            "greedy": True,
            "max_tokens": self.max_tokens,
        }


def cache_key(model_id: str, prompt: str, greedy: bool = True, max_tokens: int = 64) -> str:
    """Content hash over (model_id, prompt, decode settings). Renaming cache
    files never changes keys."""
    blob = json.dumps(
        {"greedy": greedy, "max_tokens": max_tokens, "model_id": model_id, "prompt": prompt},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def request_key(request: ReaderRequest) -> str:
    return cache_key(request.model_id, request.prompt, request.greedy, request.max_tokens)


class ReplayCache:
    """Append-only JSON Lines cache mapping content keys to response text.

    A re-stored key must carry the identical value; anything else is treated
    as corruption. Writes are serialized; reads are lock-free after load.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
                line = line.strip()
                if not line:
                    continue
                raw = json.loads(line)
                key, value = raw["key"], raw["response"]
                if key in self._entries and self._entries[key] != value:
                    raise CacheCorruptionError(
                        f"{self.path}:{lineno}: key {key} rewritten with a different value"
                    )
                self._entries[key] = value

    def lookup(self, key: str) -> str | None:
        return self._entries.get(key)

    def store(self, key: str, response: str, model_id: str = "") -> None:
        with self._lock:
            existing = self._entries.get(key)
            if existing is not None:
                if existing != response:
                    raise CacheCorruptionError(f"key {key} already stored with a different value")
                return
            self._entries[key] = response
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "model_id": model_id, "response": response}) + "\n")
                    fh.flush()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries


Transport = Callable[[dict], dict]


class HttpTransport:
    """POSTs a JSON payload to an endpoint and decodes the JSON reply."""

    def __init__(self, endpoint: str, token: str | None = None, timeout: float = 30.0) -> None:
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout

    def __call__(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(
            self.endpoint, data=json.dumps(payload).encode("utf-8"), headers=headers
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise TransportError(f"reader service call to {self.endpoint} failed: {exc}") from exc


def forbid_network(payload: dict) -> dict:
    raise TransportError("network access is disabled in replay mode")


def generate(
    request: ReaderRequest,
    cache: ReplayCache,
    mode: str = "replay",
    transport: Transport | None = None,
) -> str:
    """Resolve one reader call under the given mode.

    replay: cached value or ReplayMissError. record: cache hit short-circuits,
    otherwise one live call whose response is stored. live: pass-through.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    key = request_key(request)
    if mode == "replay":
        value = cache.lookup(key)
        if value is None:
            raise ReplayMissError(key)
        return value
    if mode == "record":
        value = cache.lookup(key)
        if value is not None:
            return value
    if transport is None:
        raise TransportError(f"{mode} mode requires a reader transport")
    reply = transport(request.payload())
    if "text" not in reply:
        raise TransportError(f"reader reply missing 'text' field: {reply!r}")
    text = str(reply["text"])
    if mode == "record":
        cache.store(key, text, model_id=request.model_id)
    return text


class ReaderGateway:
    """Prompt rendering plus cached generation, bound to one model and one
    template family."""

    def __init__(
        self,
        model_id: str,
        cache: ReplayCache,
        mode: str = "replay",
        transport: Transport | None = None,
        family: str = "chat-instruct-15-words",
        max_tokens: int = 64,
    ) -> None:
        if family not in TEMPLATE_FAMILIES:
            raise PromptError(f"unknown template family {family!r}")
        self.model_id = model_id
        self.cache = cache
        self.mode = mode
        self.transport = transport
        self.family = family
        self.max_tokens = max_tokens

    def complete(self, prompt: str) -> str:
        request = ReaderRequest(self.model_id, prompt, True, self.max_tokens)
        return generate(request, self.cache, self.mode, self.transport)

    def answer(self, query: Query, document: Document | None = None) -> str:
        if document is None or document.is_empty():
            prompt = render_prompt("refree", self.family, query)
        else:
            prompt = render_prompt("rag", self.family, query, document)
        return self.complete(prompt)

    def background_document(self, query: Query) -> str:
        return self.complete(render_prompt("parametric", self.family, query))

    def summarize(self, query: Query, document: Document) -> str:
        return self.complete(render_prompt("compress", self.family, query, document))
