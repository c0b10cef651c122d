"""Cross-retriever inconsistency metrics and the four-way error breakdown.

The central quantity is the relative win ratio between two retrievers: the
share of questions one gets right among those the other gets wrong. Row and
column means of the pairwise matrix (mean relative win / lose ratio) summarize
how irregular each retriever's behavior is. The same construction applies to
each error kind, with masks restricting the comparison to samples where the
error is even possible. Cells whose denominator is empty are undefined and
are exported as -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    Document,
    GoldAnswerSet,
    IndicatorMatrix,
    RunRecord,
    base_indicators,
    normalize_answer,
    normalized_tokens,
)
from .storage import write_csv

ERROR_KINDS = ("retriever_error", "hallucination_error", "extraction_error", "lucky_guess")

MAX_ANSWER_TOKENS = 5

Grader = Callable[[str, GoldAnswerSet], int]


def em_grader(answer: str, gold: GoldAnswerSet) -> int:
    """1 iff the normalized answer equals any normalized gold alias."""
    norm = normalize_answer(answer)
    return int(any(normalize_answer(alias) == norm for alias in gold.aliases))


def make_semantic_grader(scorer, threshold: float = 0.8) -> Grader:
    """Grade via an external similarity scorer: correct iff the best alias
    score reaches the threshold."""

    def grade(answer: str, gold: GoldAnswerSet) -> int:
        best = max(float(scorer.score(answer, alias)) for alias in gold.aliases)
        return int(best >= threshold)

    return grade


@dataclass
class ErrorIndicators:
    """Five N x M binary matrices, one per indicator, over a shared sample and
    retriever ordering."""

    arrays: dict[str, np.ndarray]
    sample_ids: tuple[str, ...]
    retriever_names: tuple[str, ...]

    def matrix(self, kind: str) -> np.ndarray:
        return self.arrays[kind]

    def column(self, kind: str, retriever: str) -> np.ndarray:
        return self.arrays[kind][:, self.retriever_names.index(retriever)]


def _index_records(
    records: Iterable[RunRecord],
    sample_order: Sequence[str] | None,
    retriever_order: Sequence[str] | None,
) -> tuple[dict[tuple[str, str], RunRecord], tuple[str, ...], tuple[str, ...]]:
    records = list(records)
    by_key: dict[tuple[str, str], RunRecord] = {}
    for r in records:
        by_key[(r.sample_id, r.retriever)] = r
    if sample_order is None:
        seen: list[str] = []
        for r in records:
            if r.sample_id not in seen:
                seen.append(r.sample_id)
        sample_order = seen
    if retriever_order is None:
        seen = []
        for r in records:
            if r.retriever not in seen:
                seen.append(r.retriever)
        retriever_order = seen
    for sid in sample_order:
        for name in retriever_order:
            if (sid, name) not in by_key:
                raise ValueError(f"missing record for sample {sid!r}, retriever {name!r}")
    return by_key, tuple(sample_order), tuple(retriever_order)


def compute_indicators(
    records: Iterable[RunRecord],
    gold_by_sample: Mapping[str, GoldAnswerSet],
    grader: Grader = em_grader,
    sample_order: Sequence[str] | None = None,
    retriever_order: Sequence[str] | None = None,
) -> ErrorIndicators:
    """Recompute all five indicators from documents, answers, and gold."""
    by_key, samples, retrievers = _index_records(records, sample_order, retriever_order)
    arrays = {
        kind: np.zeros((len(samples), len(retrievers)), dtype=np.int64)
        for kind in ("answer_correct",) + ERROR_KINDS
    }
    for i, sid in enumerate(samples):
        gold = gold_by_sample[sid]
        for j, name in enumerate(retrievers):
            record = by_key[(sid, name)]
            correct = grader(record.answer, gold)
            ind = base_indicators(Document.from_text(record.document_text), record.answer, gold, correct)
            for kind in arrays:
                arrays[kind][i, j] = ind[kind]
    return ErrorIndicators(arrays, samples, retrievers)


def indicators_from_records(
    records: Iterable[RunRecord],
    sample_order: Sequence[str] | None = None,
    retriever_order: Sequence[str] | None = None,
) -> ErrorIndicators:
    """Read the indicators persisted on the records themselves."""
    by_key, samples, retrievers = _index_records(records, sample_order, retriever_order)
    arrays = {
        kind: np.zeros((len(samples), len(retrievers)), dtype=np.int64)
        for kind in ("answer_correct",) + ERROR_KINDS
    }
    for i, sid in enumerate(samples):
        for j, name in enumerate(retrievers):
            for kind in arrays:
                arrays[kind][i, j] = int(by_key[(sid, name)].indicators[kind])
    return ErrorIndicators(arrays, samples, retrievers)


def length_filter(records: Iterable[RunRecord], max_tokens: int = MAX_ANSWER_TOKENS) -> list[RunRecord]:
    """Drop every sample where ANY retriever's answer exceeds the token budget
    (counted on normalized tokens), keeping whole samples or nothing."""
    records = list(records)
    too_long = {
        r.sample_id for r in records if len(normalized_tokens(r.answer)) > max_tokens
    }
    return [r for r in records if r.sample_id not in too_long]


def rwr(winner: Sequence[int] | np.ndarray, loser: Sequence[int] | np.ndarray) -> float | None:
    """Share of the loser's failures that the winner answers correctly.

    None when the loser never fails (undefined cell).
    """
    w = np.asarray(winner, dtype=np.int64)
    l = np.asarray(loser, dtype=np.int64)
    if w.shape != l.shape:
        raise ValueError(f"indicator vectors differ in length: {w.shape} vs {l.shape}")
    denominator = int((1 - l).sum())
    if denominator == 0:
        return None
    numerator = int((w * (1 - l)).sum())
    return numerator / denominator


def rwr_matrix(correct: IndicatorMatrix) -> list[list[float | None]]:
    values = correct.values
    m = values.shape[1]
    return [[rwr(values[:, i], values[:, j]) for j in range(m)] for i in range(m)]


def _mean_defined(cells: Sequence[float | None]) -> float:
    """Mean over the defined cells; vacuously 0 when every cell is undefined
    (a retriever with no failures has nothing to win or lose)."""
    defined = [c for c in cells if c is not None]
    if not defined:
        return 0.0
    return float(sum(defined) / len(defined))


def mrwr(correct: IndicatorMatrix) -> list[float]:
    """Row means of the RWR matrix (how often each retriever rescues others),
    undefined cells excluded."""
    m = len(correct.column_ids)
    if m < 2:
        raise ValueError("need at least two retrievers")
    cells = rwr_matrix(correct)
    return [_mean_defined([cells[i][j] for j in range(m) if j != i]) for i in range(m)]


def mrlr(correct: IndicatorMatrix) -> list[float]:
    """Column means of the RWR matrix (how often each retriever's failures are
    rescued by others); zero means it consistently outperforms the rest."""
    m = len(correct.column_ids)
    if m < 2:
        raise ValueError("need at least two retrievers")
    cells = rwr_matrix(correct)
    return [_mean_defined([cells[j][i] for j in range(m) if j != i]) for i in range(m)]


def error_rwr(
    kind: str,
    indicators: ErrorIndicators,
    i: int,
    j: int,
) -> float | None:
    """Share of retriever j's occurrences of one error kind that retriever i
    avoids, restricted to samples where the comparison is meaningful."""
    if kind not in ERROR_KINDS:
        raise ValueError(f"unknown error kind {kind!r}")
    e = indicators.arrays[kind]
    e_i = e[:, i]
    e_j = e[:, j]
    if kind == "extraction_error":
        er = indicators.arrays["retriever_error"]
        mask = (1 - er[:, i]) * (1 - er[:, j])
    elif kind == "lucky_guess":
        er = indicators.arrays["retriever_error"]
        eh = indicators.arrays["hallucination_error"]
        mask = er[:, i] * eh[:, i] * er[:, j] * eh[:, j]
    else:
        mask = np.ones_like(e_i)
    denominator = int((e_j * mask).sum())
    if denominator == 0:
        return None
    numerator = int(((1 - e_i) * e_j * mask).sum())
    return numerator / denominator


def error_rwr_matrix(kind: str, indicators: ErrorIndicators) -> list[list[float | None]]:
    m = len(indicators.retriever_names)
    return [[error_rwr(kind, indicators, i, j) for j in range(m)] for i in range(m)]


def ensemble_upper_bound(correct: IndicatorMatrix | np.ndarray, subset: Iterable[int]) -> float:
    """Accuracy of a perfect selector over the subset: right whenever any
    member is right."""
    values = correct.values if isinstance(correct, IndicatorMatrix) else np.asarray(correct)
    idx = sorted(set(subset))
    if not idx:
        raise ValueError("subset must be non-empty")
    return float(values[:, idx].max(axis=1).mean())


def upper_bounds_by_size(
    correct: IndicatorMatrix,
    max_enumerate: int = 16,
    sample_per_size: int | None = None,
    seed: int = 0,
) -> dict[int, list[tuple[tuple[int, ...], float]]]:
    """Upper bound for retriever subsets, grouped by pool size.

    Pools of up to ``max_enumerate`` retrievers are enumerated exhaustively;
    larger pools are sampled uniformly per size.
    """
    m = len(correct.column_ids)
    out: dict[int, list[tuple[tuple[int, ...], float]]] = {}
    if m <= max_enumerate:
        for size in range(1, m + 1):
            out[size] = [
                (subset, ensemble_upper_bound(correct, subset))
                for subset in combinations(range(m), size)
            ]
        return out
    if sample_per_size is None:
        sample_per_size = 200
    rng = np.random.default_rng(seed)
    for size in range(1, m + 1):
        seen: set[tuple[int, ...]] = set()
        for _ in range(sample_per_size):
            subset = tuple(sorted(rng.choice(m, size=size, replace=False).tolist()))
            seen.add(subset)
        out[size] = [(s, ensemble_upper_bound(correct, s)) for s in sorted(seen)]
    return out


def format_cell(value: float | None, digits: int = 6) -> str:
    if value is None:
        return "-1"
    return f"{value:.{digits}f}"


def write_heatmap_csv(
    path,
    names: Sequence[str],
    cells: Sequence[Sequence[float | None]],
) -> None:
    """Retriever names as headers; undefined cells rendered as -1."""
    header = [""] + list(names)
    rows = [[name] + [format_cell(c) for c in row] for name, row in zip(names, cells)]
    write_csv(path, header, rows)


def consistency_summary(correct: IndicatorMatrix) -> dict:
    """Per-retriever accuracy plus mean relative win/lose ratios."""
    mrwr_vals = mrwr(correct)
    mrlr_vals = mrlr(correct)
    accuracies = correct.accuracies()
    return {
        "n_samples": len(correct.row_ids),
        "retrievers": [
            {
                "name": name,
                "accuracy": accuracies[name],
                "mrwr": mrwr_vals[i],
                "mrlr": mrlr_vals[i],
            }
            for i, name in enumerate(correct.column_ids)
        ],
    }
