"""Answer selection by weighted inter-answer similarity.

Each candidate answer is compared to every peer under K base similarity
metrics; the per-pair scores are combined as a weighted sum, pooled over
peers, and scaled by a per-retriever confidence weight. Retrievers whose
confidence does not exceed the filtering threshold are dropped from both
candidacy and peer sets. The highest-scoring candidate wins, ties broken by
lowest retriever index.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .domain import CandidateAnswer, normalize_answer, normalized_tokens
from .reader import ReplayCache, ReplayMissError, Transport, TransportError

WEIGHT_LOWER = 0.0
WEIGHT_UPPER = 0.6
DEFAULT_THRESHOLD = 0.1

# Threshold used to call two answers semantically equivalent in the counting
# pooling modes; matches the semantic-grader acceptance threshold.
EQUIVALENCE_THRESHOLD = 0.8


class AllRetrieversFilteredError(ValueError):
    pass


class MissingSimilarityError(KeyError):
    pass


def _check_bounds(values: Sequence[float], label: str) -> None:
    for v in values:
        if not (WEIGHT_LOWER <= v <= WEIGHT_UPPER):
            raise ValueError(f"{label} weight {v} outside [{WEIGHT_LOWER}, {WEIGHT_UPPER}]")


@dataclass(frozen=True)
class SimWeights:
    """Per-metric weights, box-bounded to [0, 0.6]."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("need at least one metric weight")
        _check_bounds(self.values, "metric")


@dataclass(frozen=True)
class RetrieverWeights:
    """Per-retriever confidence weights with a filtering threshold: weights
    not strictly above the threshold count as zero."""

    values: tuple[float, ...]
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("need at least one retriever weight")
        _check_bounds(self.values, "retriever")

    def active_indices(self) -> list[int]:
        return [m for m, v in enumerate(self.values) if v > self.threshold]

    def effective(self) -> tuple[float, ...]:
        return tuple(v if v > self.threshold else 0.0 for v in self.values)


@dataclass(frozen=True)
class Mean:
    pass


@dataclass(frozen=True)
class Max:
    pass


@dataclass(frozen=True)
class Majority:
    threshold: float = EQUIVALENCE_THRESHOLD

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("majority threshold must lie in (0, 1)")


@dataclass(frozen=True)
class Plurality:
    threshold: float = EQUIVALENCE_THRESHOLD

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("plurality threshold must lie in (0, 1)")


PoolingKind = Mean | Max | Majority | Plurality


def parse_pooling(spec: str) -> PoolingKind:
    """Parse CLI pooling specs like "mean", "max", "majority:0.8"."""
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name == "mean":
        return Mean()
    if name == "max":
        return Max()
    if name in ("majority", "plurality"):
        threshold = float(arg) if arg else EQUIVALENCE_THRESHOLD
        return Majority(threshold) if name == "majority" else Plurality(threshold)
    raise ValueError(f"unknown pooling {spec!r}")


def em_similarity(y1: str, y2: str) -> float:
    """1.0 iff the two answers are identical after normalization."""
    return 1.0 if normalize_answer(y1) == normalize_answer(y2) else 0.0


def token_f1(y1: str, y2: str) -> float:
    """Harmonic mean of token precision/recall over normalized-token
    multisets. Both empty -> 1; exactly one empty -> 0."""
    t1 = normalized_tokens(y1)
    t2 = normalized_tokens(y2)
    if not t1 and not t2:
        return 1.0
    if not t1 or not t2:
        return 0.0
    counts2: dict[str, int] = {}
    for tok in t2:
        counts2[tok] = counts2.get(tok, 0) + 1
    overlap = 0
    for tok in t1:
        if counts2.get(tok, 0) > 0:
            counts2[tok] -= 1
            overlap += 1
    if overlap == 0:
        return 0.0
    precision = overlap / len(t1)
    recall = overlap / len(t2)
    return 2 * precision * recall / (precision + recall)


def similarity_key(metric_id: str, text_a: str, text_b: str) -> str:
    blob = json.dumps(
        {"metric_id": metric_id, "text_a": text_a, "text_b": text_b},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class HttpSimilarityScorer:
    """Wire protocol: POST {text_a, text_b, metric_id} -> {score}."""

    def __init__(self, transport: Transport) -> None:
        self.transport = transport

    def score(self, text_a: str, text_b: str, metric_id: str) -> float:
        reply = self.transport({"metric_id": metric_id, "text_a": text_a, "text_b": text_b})
        if "score" not in reply:
            raise TransportError(f"scorer reply missing 'score': {reply!r}")
        return float(reply["score"])


class CachedSimilarityScorer:
    """Similarity scorer for one external metric, backed by a replay cache."""

    def __init__(
        self,
        metric_id: str,
        cache: ReplayCache,
        mode: str = "replay",
        live_scorer: HttpSimilarityScorer | None = None,
    ) -> None:
        self.metric_id = metric_id
        self.cache = cache
        self.mode = mode
        self.live_scorer = live_scorer

    def score(self, text_a: str, text_b: str) -> float:
        key = similarity_key(self.metric_id, text_a, text_b)
        cached = self.cache.lookup(key)
        if cached is not None:
            return float(cached)
        if self.mode == "replay":
            raise ReplayMissError(key)
        if self.live_scorer is None:
            raise TransportError(f"{self.mode} mode requires a live similarity scorer")
        value = self.live_scorer.score(text_a, text_b, self.metric_id)
        if self.mode == "record":
            self.cache.store(key, repr(value), model_id=self.metric_id)
        return value


def external_similarity(y1: str, y2: str, scorer) -> float:
    """Service-reported similarity, clamped into [0, 1] with a warning on
    out-of-range or implausible self-similarity scores."""
    value = float(scorer.score(y1, y2))
    if value < 0.0 or value > 1.0:
        warnings.warn(
            f"similarity score {value} outside [0, 1]; clamping", RuntimeWarning, stacklevel=2
        )
        value = min(1.0, max(0.0, value))
    if y1 == y2 and value < 0.99:
        warnings.warn(
            f"self-similarity {value} < 0.99 for identical answers", RuntimeWarning, stacklevel=2
        )
    return value


@dataclass(frozen=True)
class SimilarityMetric:
    id: str
    fn: Callable[[str, str], float]
    symmetric: bool = True


def build_metrics(
    metric_ids: Sequence[str],
    external_scorers: Mapping[str, object] | None = None,
) -> tuple[SimilarityMetric, ...]:
    """Resolve metric ids to callables; unknown ids require an external scorer."""
    metrics: list[SimilarityMetric] = []
    for metric_id in metric_ids:
        if metric_id == "em":
            metrics.append(SimilarityMetric("em", em_similarity))
        elif metric_id == "token_f1":
            metrics.append(SimilarityMetric("token_f1", token_f1))
        else:
            if not external_scorers or metric_id not in external_scorers:
                raise ValueError(f"metric {metric_id!r} requires an external similarity scorer")
            scorer = external_scorers[metric_id]
            metrics.append(
                SimilarityMetric(
                    metric_id,
                    lambda a, b, _s=scorer: external_similarity(a, b, _s),
                    symmetric=False,
                )
            )
    return tuple(metrics)


class PairwiseSimilarityTensor:
    """K base-metric scores for every ordered answer pair of one sample."""

    def __init__(self, n_retrievers: int, metric_ids: Sequence[str]) -> None:
        self.n_retrievers = n_retrievers
        self.metric_ids = tuple(metric_ids)
        self._scores: dict[tuple[int, int], tuple[float, ...]] = {}

    @classmethod
    def compute(
        cls,
        answers: Sequence[str],
        metrics: Sequence[SimilarityMetric],
    ) -> "PairwiseSimilarityTensor":
        tensor = cls(len(answers), [m.id for m in metrics])
        for m in range(len(answers)):
            for n in range(len(answers)):
                if m == n:
                    continue
                if (n, m) in tensor._scores and all(metric.symmetric for metric in metrics):
                    tensor._scores[(m, n)] = tensor._scores[(n, m)]
                    continue
                row = tuple(float(metric.fn(answers[m], answers[n])) for metric in metrics)
                for metric, value in zip(metrics, row):
                    if not np.isfinite(value) or not (0.0 <= value <= 1.0):
                        raise ValueError(
                            f"metric {metric.id} produced out-of-range score {value}"
                        )
                tensor._scores[(m, n)] = row
        return tensor

    def scores(self, m: int, n: int) -> tuple[float, ...]:
        try:
            return self._scores[(m, n)]
        except KeyError:
            raise MissingSimilarityError(f"no similarity scores stored for pair ({m}, {n})") from None

    def set_scores(self, m: int, n: int, values: Sequence[float]) -> None:
        if m == n:
            raise ValueError("pairwise tensor holds no diagonal entries")
        if len(values) != len(self.metric_ids):
            raise ValueError("score row length does not match metric count")
        self._scores[(m, n)] = tuple(float(v) for v in values)

    def as_array(self) -> np.ndarray:
        """Dense (M, M, K) array with zeros on the diagonal."""
        arr = np.zeros((self.n_retrievers, self.n_retrievers, len(self.metric_ids)))
        for (m, n), row in self._scores.items():
            arr[m, n, :] = row
        return arr


def weighted_similarity(
    m: int,
    n: int,
    tensor: PairwiseSimilarityTensor,
    weights: SimWeights,
) -> float:
    """Weighted sum of the K base-metric scores for the ordered pair (m, n)."""
    row = tensor.scores(m, n)
    if len(row) != len(weights.values):
        raise MissingSimilarityError(
            f"tensor stores {len(row)} metrics but {len(weights.values)} weights were given"
        )
    total = 0.0
    for w, s in zip(weights.values, row):
        total += w * s
    return total


def pool(scores: Sequence[float], kind: PoolingKind) -> float:
    """Reduce one candidate's peer-similarity list to a single score."""
    if isinstance(kind, Plurality):
        raise ValueError("plurality pooling is computed across all candidates; use voter_scores")
    if len(scores) == 0:
        raise ValueError("cannot pool an empty score list")
    if isinstance(kind, Mean):
        return float(sum(scores) / len(scores))
    if isinstance(kind, Max):
        return float(max(scores))
    if isinstance(kind, Majority):
        hits = sum(1 for s in scores if s > kind.threshold)
        return 1.0 if hits >= len(scores) / 2 else 0.0
    raise TypeError(f"unknown pooling kind {kind!r}")


@dataclass(frozen=True)
class VoteResult:
    scores: tuple[float, ...]
    excluded: tuple[bool, ...]
    winner_index: int


def voter_scores(
    answers: Sequence[CandidateAnswer] | Sequence[str],
    tensor: PairwiseSimilarityTensor,
    sim_weights: SimWeights,
    retriever_weights: RetrieverWeights,
    pooling: PoolingKind = Mean(),
) -> VoteResult:
    """Score every candidate and pick the winner.

    Filtered retrievers get score 0 and are excluded from peer sets. A single
    surviving retriever pools over the empty peer set as 1, so it stays
    selectable.
    """
    m_total = len(answers)
    if m_total != len(retriever_weights.values):
        raise ValueError("answer count does not match retriever weight count")
    if tensor.n_retrievers != m_total:
        raise ValueError("tensor size does not match answer count")
    active = retriever_weights.active_indices()
    if not active:
        raise AllRetrieversFilteredError("every retriever fell below the filtering threshold")

    pooled: dict[int, float] = {}
    if isinstance(pooling, Plurality):
        counts: dict[int, int] = {}
        for m in active:
            peers = [n for n in active if n != m]
            counts[m] = sum(
                1
                for n in peers
                if weighted_similarity(m, n, tensor, sim_weights) > pooling.threshold
            )
        top = max(counts.values())
        for m in active:
            peers_exist = len(active) > 1
            pooled[m] = 1.0 if (not peers_exist or counts[m] == top) else 0.0
    else:
        for m in active:
            peers = [n for n in active if n != m]
            if not peers:
                pooled[m] = 1.0
            else:
                sims = [weighted_similarity(m, n, tensor, sim_weights) for n in peers]
                pooled[m] = pool(sims, pooling)

    scores = [0.0] * m_total
    excluded = [True] * m_total
    for m in active:
        scores[m] = retriever_weights.values[m] * pooled[m]
        excluded[m] = False
    winner = active[0]
    for m in active[1:]:
        if scores[m] > scores[winner]:
            winner = m
    return VoteResult(tuple(scores), tuple(excluded), winner)
