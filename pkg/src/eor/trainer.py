"""Derivative-free training of the voter's metric and retriever weights.

Correctness scores and pairwise similarities are precomputed once into dense
tensors, so every objective evaluation is pure array math with no model
calls. The search maximizes mean correctness of the voter-selected answers
over a [0, 0.6] box with a from-scratch Nelder-Mead simplex (reflection 1,
expansion 2, contraction 0.5, shrink 0.5), clipping every vertex into the
box. The threshold indicator on retriever weights makes the objective
discontinuous; seeded random restarts mitigate the resulting plateaus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .consistency import Grader, em_grader
from .domain import GoldAnswerSet, RunRecord
from .storage import dump_json
from .voter import (
    DEFAULT_THRESHOLD,
    Majority,
    Max,
    Mean,
    PairwiseSimilarityTensor,
    Plurality,
    PoolingKind,
    RetrieverWeights,
    SimilarityMetric,
    SimWeights,
    WEIGHT_LOWER,
    WEIGHT_UPPER,
)

UNIFORM_START = 0.3
SIMPLEX_STEP = 0.05


class NonFiniteObjectiveError(RuntimeError):
    def __init__(self, theta: np.ndarray, value: float) -> None:
        super().__init__(f"objective returned {value} at theta={theta.tolist()}")
        self.theta = theta


@dataclass(frozen=True)
class SearchConfig:
    max_iterations: int = 2000
    f_tolerance: float = 1e-6
    x_tolerance: float = 1e-6
    restarts: int = 5
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    bounds: tuple[float, float] = (WEIGHT_LOWER, WEIGHT_UPPER)

    def __post_init__(self) -> None:
        if self.f_tolerance <= 0 or self.x_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.bounds[0] >= self.bounds[1]:
            raise ValueError("lower bound must be below upper bound")


@dataclass
class TrainingTensor:
    """Dense correctness matrix g (N x M) and similarity tensor
    sims (N x M x M x K) with zeroed diagonals."""

    g: np.ndarray
    sims: np.ndarray
    metric_ids: tuple[str, ...]
    retriever_names: tuple[str, ...]
    sample_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        n, m = self.g.shape
        if self.sims.shape[:3] != (n, m, m):
            raise ValueError("sims shape does not match g")
        if self.sims.shape[3] != len(self.metric_ids):
            raise ValueError("sims metric axis does not match metric_ids")
        if not np.isfinite(self.g).all() or not np.isfinite(self.sims).all():
            raise ValueError("training tensors must be finite")

    @property
    def n_samples(self) -> int:
        return self.g.shape[0]

    @property
    def n_retrievers(self) -> int:
        return self.g.shape[1]

    @property
    def n_metrics(self) -> int:
        return len(self.metric_ids)


def precompute(
    records: Iterable[RunRecord],
    gold_by_sample: Mapping[str, GoldAnswerSet],
    metrics: Sequence[SimilarityMetric],
    grader: Grader = em_grader,
    sample_order: Sequence[str] | None = None,
    retriever_order: Sequence[str] | None = None,
) -> TrainingTensor:
    """Populate g and the similarity tensor; objective evaluations afterwards
    need no model calls."""
    records = list(records)
    if not records:
        raise ValueError("no run records given")
    by_key: dict[tuple[str, str], RunRecord] = {
        (r.sample_id, r.retriever): r for r in records
    }
    if sample_order is None:
        sample_order = list(dict.fromkeys(r.sample_id for r in records))
    if retriever_order is None:
        retriever_order = list(dict.fromkeys(r.retriever for r in records))
    n, m, k = len(sample_order), len(retriever_order), len(metrics)
    if n == 0 or m == 0:
        raise ValueError("empty dataset or retriever pool")
    g = np.zeros((n, m))
    sims = np.zeros((n, m, m, k))
    for i, sid in enumerate(sample_order):
        answers: list[str] = []
        for j, name in enumerate(retriever_order):
            record = by_key.get((sid, name))
            if record is None:
                raise ValueError(f"missing record for sample {sid!r}, retriever {name!r}")
            answers.append(record.answer)
            g[i, j] = grader(record.answer, gold_by_sample[sid])
        tensor = PairwiseSimilarityTensor.compute(answers, metrics)
        sims[i] = tensor.as_array()
    return TrainingTensor(
        g,
        sims,
        tuple(metric.id for metric in metrics),
        tuple(retriever_order),
        tuple(sample_order),
    )


def _pooled(weighted: np.ndarray, active: np.ndarray, pooling: PoolingKind) -> np.ndarray:
    """Pool peer similarities for every (sample, active retriever) at once.

    weighted: (N, a, a) pairwise weighted similarities over active
    retrievers, zero diagonal. Returns (N, a).
    """
    a = weighted.shape[1]
    if a == 1:
        return np.ones((weighted.shape[0], 1))
    if isinstance(pooling, Mean):
        # Self terms sit on the zeroed diagonal, so the row sum is the peer sum.
        return weighted.sum(axis=2) / (a - 1)
    if isinstance(pooling, Max):
        masked = weighted.copy()
        idx = np.arange(a)
        masked[:, idx, idx] = -np.inf
        return masked.max(axis=2)
    if isinstance(pooling, (Majority, Plurality)):
        over = weighted > pooling.threshold
        idx = np.arange(a)
        over[:, idx, idx] = False
        counts = over.sum(axis=2)
        if isinstance(pooling, Majority):
            return (counts >= (a - 1) / 2).astype(float)
        return (counts == counts.max(axis=1, keepdims=True)).astype(float)
    raise TypeError(f"unknown pooling kind {pooling!r}")


def selection(
    theta: np.ndarray | Sequence[float],
    tensor: TrainingTensor,
    pooling: PoolingKind = Mean(),
    threshold: float = DEFAULT_THRESHOLD,
    bounds: tuple[float, float] = (WEIGHT_LOWER, WEIGHT_UPPER),
) -> np.ndarray | None:
    """Per-sample winner indices under theta, or None when every retriever is
    filtered out. Ties go to the lowest retriever index."""
    theta = np.clip(np.asarray(theta, dtype=float), bounds[0], bounds[1])
    k = tensor.n_metrics
    omega_s = theta[:k]
    omega_r = theta[k:]
    if omega_r.shape[0] != tensor.n_retrievers:
        raise ValueError("theta length does not match K + M")
    active = np.flatnonzero(omega_r > threshold)
    if active.size == 0:
        return None
    weighted = np.einsum("nmpk,k->nmp", tensor.sims[:, active[:, None], active[None, :], :], omega_s)
    pooled = _pooled(weighted, active, pooling)
    scores = omega_r[active][None, :] * pooled
    winners_local = scores.argmax(axis=1)
    return active[winners_local]


def objective(
    theta: np.ndarray | Sequence[float],
    tensor: TrainingTensor,
    pooling: PoolingKind = Mean(),
    threshold: float = DEFAULT_THRESHOLD,
    bounds: tuple[float, float] = (WEIGHT_LOWER, WEIGHT_UPPER),
) -> float:
    """Mean correctness of the voter-selected answers under theta.

    Defined as 0 when the threshold filters out every retriever, so the
    search is repelled from that region.
    """
    winners = selection(theta, tensor, pooling, threshold, bounds)
    if winners is None:
        return 0.0
    return float(tensor.g[np.arange(tensor.n_samples), winners].mean())


@dataclass
class NelderMeadResult:
    theta: np.ndarray
    value: float
    iterations: int
    evaluations: int
    converged: bool
    start_index: int
    trace: list[float] = field(default_factory=list)


def _initial_simplex(x0: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    n = x0.shape[0]
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        step = SIMPLEX_STEP if x0[i] + SIMPLEX_STEP <= bounds[1] else -SIMPLEX_STEP
        simplex[i + 1, i] = np.clip(x0[i] + step, bounds[0], bounds[1])
    return simplex


def _minimize(
    g: Callable[[np.ndarray], float],
    x0: np.ndarray,
    config: SearchConfig,
) -> tuple[np.ndarray, float, int, int, bool, list[float]]:
    lo, hi = config.bounds
    clip = lambda x: np.clip(x, lo, hi)
    simplex = _initial_simplex(clip(x0), config.bounds)
    evaluations = 0

    def evaluate(x: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        value = g(x)
        if not np.isfinite(value):
            raise NonFiniteObjectiveError(x, value)
        return value

    values = np.array([evaluate(v) for v in simplex])
    order = np.argsort(values, kind="stable")
    simplex, values = simplex[order], values[order]
    trace: list[float] = [float(values[0])]
    converged = False
    iterations = 0

    while iterations < config.max_iterations:
        spread_f = float(np.max(np.abs(values[1:] - values[0])))
        spread_x = float(np.max(np.abs(simplex[1:] - simplex[0])))
        if spread_f <= config.f_tolerance and spread_x <= config.x_tolerance:
            converged = True
            break
        iterations += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        reflected = clip(centroid + (centroid - worst))
        f_reflected = evaluate(reflected)
        if f_reflected < values[0]:
            expanded = clip(centroid + 2.0 * (reflected - centroid))
            f_expanded = evaluate(expanded)
            if f_expanded < f_reflected:
                simplex[-1], values[-1] = expanded, f_expanded
            else:
                simplex[-1], values[-1] = reflected, f_reflected
        elif f_reflected < values[-2]:
            simplex[-1], values[-1] = reflected, f_reflected
        else:
            if f_reflected < values[-1]:
                contracted = clip(centroid + 0.5 * (reflected - centroid))
                f_contracted = evaluate(contracted)
                accept = f_contracted <= f_reflected
            else:
                contracted = clip(centroid + 0.5 * (worst - centroid))
                f_contracted = evaluate(contracted)
                accept = f_contracted < values[-1]
            if accept:
                simplex[-1], values[-1] = contracted, f_contracted
            else:
                # Shrink toward the best vertex.
                simplex[1:] = clip(simplex[0] + 0.5 * (simplex[1:] - simplex[0]))
                values[1:] = [evaluate(v) for v in simplex[1:]]
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        trace.append(float(values[0]))

    return simplex[0], float(values[0]), iterations, evaluations, converged, trace


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0: np.ndarray | Sequence[float],
    config: SearchConfig = SearchConfig(),
) -> NelderMeadResult:
    """Maximize f over the box via best-of-restarts simplex search.

    The first start is x0; the remaining restarts draw uniform points in the
    box from the config seed.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(config.seed)
    starts = [x0]
    for _ in range(config.restarts - 1):
        starts.append(rng.uniform(config.bounds[0], config.bounds[1], size=x0.shape[0]))

    best: NelderMeadResult | None = None
    for index, start in enumerate(starts):
        theta, neg_value, iters, evals, converged, neg_trace = _minimize(
            lambda x: -f(x), start, config
        )
        result = NelderMeadResult(
            theta=theta,
            value=-neg_value,
            iterations=iters,
            evaluations=evals,
            converged=converged,
            start_index=index,
            trace=[-v for v in neg_trace],
        )
        if best is None or result.value > best.value:
            best = result
    assert best is not None
    return best


def train(
    tensor: TrainingTensor,
    config: SearchConfig = SearchConfig(),
    pooling: PoolingKind = Mean(),
) -> tuple[RetrieverWeights, SimWeights, dict]:
    """Search for the weight vector maximizing voter selection accuracy.

    Returns clipped weights plus a report with the objective trace, the
    active retriever set after filtering, and restart bookkeeping. The result
    never falls below the uniform-initialization objective.
    """
    k, m = tensor.n_metrics, tensor.n_retrievers
    x0 = np.full(k + m, UNIFORM_START)

    def f(theta: np.ndarray) -> float:
        return objective(theta, tensor, pooling, config.threshold, config.bounds)

    baseline = f(x0)
    result = nelder_mead(f, x0, config)
    theta = np.clip(result.theta, config.bounds[0], config.bounds[1])
    omega_s = SimWeights(tuple(float(v) for v in theta[:k]))
    omega_r = RetrieverWeights(tuple(float(v) for v in theta[k:]), threshold=config.threshold)
    active = omega_r.active_indices()
    report = {
        "objective": result.value,
        "objective_at_uniform": baseline,
        "restarts": config.restarts,
        "best_start_index": result.start_index,
        "iterations": result.iterations,
        "evaluations": result.evaluations,
        "converged": result.converged,
        "active_retrievers": [tensor.retriever_names[i] for i in active],
        "trace": result.trace,
    }
    return omega_r, omega_s, report


def save_weights(
    path: str | Path,
    omega_r: RetrieverWeights,
    omega_s: SimWeights,
    metric_ids: Sequence[str],
    retriever_names: Sequence[str],
    objective_value: float,
) -> None:
    dump_json(
        path,
        {
            "metric_ids": list(metric_ids),
            "omega_s": list(omega_s.values),
            "retriever_names": list(retriever_names),
            "omega_r": list(omega_r.values),
            "threshold": omega_r.threshold,
            "objective": objective_value,
        },
    )


def load_weights(path: str | Path) -> dict:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("metric_ids", "omega_s", "retriever_names", "omega_r", "threshold"):
        if key not in raw:
            raise ValueError(f"weights file {path} missing field {key!r}")
    return raw
