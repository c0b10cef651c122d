"""Retriever pipeline expression language.

Grammar (tightest-binding first: "@RR" > "@k" > "&" > "@CP"):

    expr := term ("&" term)* ["@CP"]
    term := SOURCE ["@RR"] ["@" INT]

Sources are the case-sensitive tokens SE, Wiki, PK, HB, and ReFree.
ReFree stands alone: it cannot be reranked, truncated, concatenated, or
compressed. Compression applies only to the whole expression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

SOURCE_KINDS = ("SE", "Wiki", "PK", "HB", "ReFree")

# The standard 16-retriever pool: fifteen source/processing combinations plus
# the retrieval-free baseline.
DEFAULT_POOL = (
    "Wiki@10",
    "SE@1",
    "SE@4",
    "PK",
    "SE@RR@10",
    "SE@2&Wiki@5",
    "SE@RR@5&Wiki@5",
    "HB@RR@10",
    "Wiki@10@CP",
    "SE@1@CP",
    "SE@4@CP",
    "SE@RR@10@CP",
    "SE@2&Wiki@5@CP",
    "SE@RR@5&Wiki@5@CP",
    "HB@RR@10@CP",
    "ReFree",
)


class ParseError(ValueError):
    """Raised on malformed retriever expressions; carries the byte offset."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Source:
    kind: str

    def __post_init__(self) -> None:
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")


@dataclass(frozen=True)
class Rerank:
    child: "Plan"


@dataclass(frozen=True)
class Truncate:
    child: "Plan"
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("truncation count must be >= 1")


@dataclass(frozen=True)
class Concat:
    children: tuple["Plan", ...]

    def __post_init__(self) -> None:
        if len(self.children) < 2:
            raise ValueError("concatenation needs at least two children")


@dataclass(frozen=True)
class Compress:
    child: "Plan"


Plan = Union[Source, Rerank, Truncate, Concat, Compress]

_TOK_NAME = "name"
_TOK_AMP = "amp"
_TOK_RR = "rr"
_TOK_CP = "cp"
_TOK_INT = "int"


def _tokenize(raw: str) -> list[tuple[str, object, int]]:
    tokens: list[tuple[str, object, int]] = []
    i = 0
    n = len(raw)
    while i < n:
        c = raw[i]
        if c == "&":
            tokens.append((_TOK_AMP, "&", i))
            i += 1
        elif c == "@":
            j = i + 1
            while j < n and raw[j].isalnum():
                j += 1
            word = raw[i + 1 : j]
            if word == "RR":
                tokens.append((_TOK_RR, word, i))
            elif word == "CP":
                tokens.append((_TOK_CP, word, i))
            elif word.isdigit():
                if int(word) < 1:
                    raise ParseError("truncation count must be positive", i)
                tokens.append((_TOK_INT, int(word), i))
            elif not word:
                raise ParseError("trailing operator '@'", i)
            else:
                raise ParseError(f"unknown operation '@{word}'", i)
            i = j
        elif c.isalnum():
            j = i
            while j < n and raw[j].isalnum():
                j += 1
            tokens.append((_TOK_NAME, raw[i:j], i))
            i = j
        else:
            raise ParseError(f"unexpected character {c!r}", i)
    return tokens


class _Parser:
    def __init__(self, raw: str) -> None:
        self.raw = raw
        self.tokens = _tokenize(raw)
        self.pos = 0

    def _peek(self) -> tuple[str, object, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _take(self) -> tuple[str, object, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def parse(self) -> Plan:
        if not self.tokens:
            raise ParseError("empty expression", 0)
        terms = [self._term()]
        while True:
            tok = self._peek()
            if tok is None or tok[0] != _TOK_AMP:
                break
            amp = self._take()
            if self._peek() is None:
                raise ParseError("trailing operator '&'", amp[2])
            terms.append(self._term())
        compressed = False
        tok = self._peek()
        if tok is not None and tok[0] == _TOK_CP:
            self._take()
            compressed = True
        tok = self._peek()
        if tok is not None:
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2])
        plan: Plan = terms[0][0] if len(terms) == 1 else Concat(tuple(t[0] for t in terms))
        if compressed:
            plan = Compress(plan)
        for node, kind, offset in terms:
            if kind == "ReFree" and (len(terms) > 1 or compressed or not isinstance(node, Source)):
                raise ParseError("ReFree cannot be combined with operations", offset)
        return plan

    def _term(self) -> tuple[Plan, str, int]:
        tok = self._peek()
        if tok is None or tok[0] != _TOK_NAME:
            offset = tok[2] if tok is not None else len(self.raw)
            raise ParseError("operation with no source", offset)
        _, name, offset = self._take()
        if name not in SOURCE_KINDS:
            raise ParseError(f"unknown source token {name!r}", offset)
        node: Plan = Source(str(name))
        tok = self._peek()
        if tok is not None and tok[0] == _TOK_RR:
            self._take()
            node = Rerank(node)
        tok = self._peek()
        if tok is not None and tok[0] == _TOK_INT:
            _, k, _ = self._take()
            node = Truncate(node, int(k))  # type: ignore[arg-type]
        return node, str(name), offset


def parse(expression: str) -> Plan:
    """Parse a retriever expression into its plan tree."""
    return _Parser(expression).parse()


def format_plan(plan: Plan) -> str:
    """Render a plan as its canonical expression string.

    ``parse(format_plan(p))`` is structurally equal to ``p``.
    """
    if isinstance(plan, Source):
        return plan.kind
    if isinstance(plan, Rerank):
        return f"{format_plan(plan.child)}@RR"
    if isinstance(plan, Truncate):
        return f"{format_plan(plan.child)}@{plan.k}"
    if isinstance(plan, Concat):
        return "&".join(format_plan(c) for c in plan.children)
    if isinstance(plan, Compress):
        return f"{format_plan(plan.child)}@CP"
    raise TypeError(f"not a plan node: {plan!r}")


def canonical_name(expression: str) -> str:
    return format_plan(parse(expression))
