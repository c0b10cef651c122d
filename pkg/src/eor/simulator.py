"""Monte Carlo verification of the failure-probability decomposition, plus a
synthetic multi-retriever world generator.

A trial's generative structure: with probability ``wrong_doc`` the retrieved
document lacks the answer. Given a correct document the reader either
hallucinates (always wrong), extracts the wrong span, or answers correctly.
Given a wrong document the reader either hallucinates (correct only with the
lucky-guess probability) or stays grounded in the wrong document (always
wrong). The closed-form failure probability is

    wrong_doc * (1 - halluc_wrong_doc * lucky_guess)
      + (1 - wrong_doc) * (halluc_correct_doc + extraction_error)

and the simulator checks the empirical rate against it at three binomial
standard errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import GoldAnswerSet, Query, RunRecord, base_indicators
from .consistency import em_grader
from .storage import write_jsonl

CATEGORIES = (
    "correct",
    "hallucination_wrong",
    "extraction_wrong",
    "lucky_correct",
    "grounded_wrong_doc",
)


@dataclass(frozen=True)
class WorldParameters:
    """Per-query error probabilities driving one retriever's behavior."""

    wrong_doc: float
    halluc_correct_doc: float
    extraction_error: float
    halluc_wrong_doc: float
    lucky_guess: float

    def __post_init__(self) -> None:
        for name in ("wrong_doc", "halluc_correct_doc", "extraction_error",
                     "halluc_wrong_doc", "lucky_guess"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.halluc_correct_doc + self.extraction_error > 1.0 + 1e-12:
            raise ValueError(
                "halluc_correct_doc + extraction_error must not exceed 1 "
                "(they are branches of one conditional distribution)"
            )


@dataclass(frozen=True)
class SimOutcome:
    n_trials: int
    failure_count: int
    category_counts: dict[str, int]
    seed: int

    def __post_init__(self) -> None:
        if sum(self.category_counts.values()) != self.n_trials:
            raise ValueError("category counts must sum to n_trials")


def analytic_failure(params: WorldParameters) -> float:
    """Closed-form probability that the pipeline answers incorrectly."""
    p = params
    return (1.0 - p.wrong_doc) * (p.halluc_correct_doc + p.extraction_error) + p.wrong_doc * (
        1.0 - p.lucky_guess * p.halluc_wrong_doc
    )


def category_rates(params: WorldParameters) -> dict[str, float]:
    """Closed-form probability of each trial category."""
    p = params
    return {
        "correct": (1.0 - p.wrong_doc) * (1.0 - p.halluc_correct_doc - p.extraction_error),
        # Hallucinations that end wrong arise on both document branches.
        "hallucination_wrong": (1.0 - p.wrong_doc) * p.halluc_correct_doc
        + p.wrong_doc * p.halluc_wrong_doc * (1.0 - p.lucky_guess),
        "extraction_wrong": (1.0 - p.wrong_doc) * p.extraction_error,
        "lucky_correct": p.wrong_doc * p.halluc_wrong_doc * p.lucky_guess,
        "grounded_wrong_doc": p.wrong_doc * (1.0 - p.halluc_wrong_doc),
    }


def _sample_categories(params: WorldParameters, n_trials: int, rng: np.random.Generator) -> dict[str, int]:
    u_doc = rng.random(n_trials)
    u_outcome = rng.random(n_trials)
    u_luck = rng.random(n_trials)
    wrong = u_doc < params.wrong_doc

    counts = dict.fromkeys(CATEGORIES, 0)
    # Correct-document branch.
    good = ~wrong
    halluc_good = good & (u_outcome < params.halluc_correct_doc)
    extract = good & ~halluc_good & (u_outcome < params.halluc_correct_doc + params.extraction_error)
    correct = good & ~halluc_good & ~extract
    # Wrong-document branch.
    halluc_bad = wrong & (u_outcome < params.halluc_wrong_doc)
    lucky = halluc_bad & (u_luck < params.lucky_guess)
    halluc_bad_wrong = halluc_bad & ~lucky
    grounded_bad = wrong & ~halluc_bad

    counts["correct"] = int(correct.sum())
    counts["hallucination_wrong"] = int(halluc_good.sum() + halluc_bad_wrong.sum())
    counts["extraction_wrong"] = int(extract.sum())
    counts["lucky_correct"] = int(lucky.sum())
    counts["grounded_wrong_doc"] = int(grounded_bad.sum())
    return counts


def simulate(params: WorldParameters, n_trials: int, seed: int = 0) -> SimOutcome:
    """Seeded category counts over n_trials; identical seeds reproduce the
    outcome exactly."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    counts = _sample_categories(params, n_trials, rng)
    failures = counts["hallucination_wrong"] + counts["extraction_wrong"] + counts["grounded_wrong_doc"]
    return SimOutcome(n_trials, failures, counts, seed)


def _three_sigma_check(empirical: float, expected: float, n: int) -> dict:
    sigma = float(np.sqrt(expected * (1.0 - expected) / n))
    diff = abs(empirical - expected)
    return {
        "empirical": empirical,
        "expected": expected,
        "stderr": sigma,
        "passed": bool(diff <= 3.0 * sigma),
    }


def verify_decomposition(params: WorldParameters, n_trials: int, seed: int = 0) -> dict:
    """Compare empirical failure and per-category rates against their closed
    forms at a three-sigma tolerance."""
    outcome = simulate(params, n_trials, seed)
    failure_check = _three_sigma_check(
        outcome.failure_count / n_trials, analytic_failure(params), n_trials
    )
    expected = category_rates(params)
    categories = {
        name: _three_sigma_check(outcome.category_counts[name] / n_trials, expected[name], n_trials)
        for name in CATEGORIES
    }
    return {
        "n_trials": n_trials,
        "seed": seed,
        "parameters": {
            "wrong_doc": params.wrong_doc,
            "halluc_correct_doc": params.halluc_correct_doc,
            "extraction_error": params.extraction_error,
            "halluc_wrong_doc": params.halluc_wrong_doc,
            "lucky_guess": params.lucky_guess,
        },
        "failure": failure_check,
        "categories": categories,
        "passed": failure_check["passed"] and all(c["passed"] for c in categories.values()),
    }


def random_world_parameters(rng: np.random.Generator) -> WorldParameters:
    """Uniform draw respecting the correct-document branch constraint."""
    halluc_correct = float(rng.uniform(0.0, 1.0))
    extraction = float(rng.uniform(0.0, 1.0 - halluc_correct))
    return WorldParameters(
        wrong_doc=float(rng.uniform(0.0, 1.0)),
        halluc_correct_doc=halluc_correct,
        extraction_error=extraction,
        halluc_wrong_doc=float(rng.uniform(0.0, 1.0)),
        lucky_guess=float(rng.uniform(0.0, 1.0)),
    )


def generate_world(
    n_retrievers: int,
    n_samples: int,
    params: WorldParameters | Sequence[WorldParameters],
    seed: int = 0,
    distractor_correlation: float = 0.0,
    retriever_names: Sequence[str] | None = None,
) -> tuple[list[dict], list[RunRecord]]:
    """Synthesize a dataset plus run records whose indicators realize the
    sampled error categories exactly.

    Correct answers share the gold string; wrong answers come from per-sample
    distractor pools that are distinct across retrievers unless the
    correlation knob makes two retrievers reuse one. Returns (dataset rows,
    records); rerunning with the same arguments reproduces both exactly.
    """
    if n_retrievers < 1 or n_samples < 1:
        raise ValueError("need at least one retriever and one sample")
    if isinstance(params, WorldParameters):
        per_retriever = [params] * n_retrievers
    else:
        per_retriever = list(params)
        if len(per_retriever) != n_retrievers:
            raise ValueError("one WorldParameters per retriever required")
    if retriever_names is None:
        retriever_names = [f"sim{m}" for m in range(n_retrievers)]
    rng = np.random.default_rng(seed)

    dataset: list[dict] = []
    records: list[RunRecord] = []
    for n in range(n_samples):
        sample_id = f"w{n:05d}"
        gold = f"answer{n}"
        question = f"synthetic question {n}"
        dataset.append({"id": sample_id, "question": question, "answers": [gold]})
        gold_set = GoldAnswerSet((gold,))
        used_distractors: list[str] = []

        for m, p in enumerate(per_retriever):
            category = _draw_category(p, rng)
            if used_distractors and rng.random() < distractor_correlation:
                distractor = used_distractors[int(rng.integers(len(used_distractors)))]
            else:
                distractor = f"distract{n}x{m}"
            used_distractors.append(distractor)

            filler = f"background{n} passage note{m}"
            if category == "correct":
                doc = f"{filler} {gold} trailing{n}"
                answer = gold
            elif category == "hallucination_correct_doc":
                doc = f"{filler} {gold} trailing{n}"
                answer = distractor
            elif category == "extraction_wrong":
                doc = f"{filler} {gold} also {distractor} trailing{n}"
                answer = distractor
            elif category == "lucky_correct":
                doc = f"{filler} trailing{n}"
                answer = gold
            elif category == "hallucination_wrong_doc":
                doc = f"{filler} trailing{n}"
                answer = f"{distractor}h"
            else:  # grounded_wrong_doc
                doc = f"{filler} {distractor} trailing{n}"
                answer = distractor

            query = Query(sample_id, question)
            correct = em_grader(answer, gold_set)
            indicators = base_indicators(doc, answer, gold_set, correct)
            records.append(
                RunRecord(
                    sample_id=query.id,
                    retriever=retriever_names[m],
                    document_text=doc,
                    answer=answer,
                    indicators=indicators,
                )
            )
    return dataset, records


def write_world(
    out_dir: str | Path,
    dataset: list[dict],
    records: list[RunRecord],
    seed: int = 0,
) -> tuple[Path, Path]:
    """Persist a generated world as dataset + run-record JSON Lines, the same
    formats the real pipeline reads and emits, plus a minimal manifest whose
    empty retriever pool tells the analysis phases to derive it from the
    records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = out_dir / "dataset.jsonl"
    records_path = out_dir / "records.jsonl"
    write_jsonl(dataset_path, dataset)
    with records_path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
    manifest = {
        "dataset": "dataset.jsonl",
        "retrievers": [],
        "metrics": ["em"],
        "grader": "em",
        "pooling": "mean",
        "seed": seed,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return dataset_path, records_path


def _draw_category(p: WorldParameters, rng: np.random.Generator) -> str:
    """One trial of the generative structure, with the two hallucination
    branches kept distinct for document synthesis."""
    if rng.random() < p.wrong_doc:
        if rng.random() < p.halluc_wrong_doc:
            if rng.random() < p.lucky_guess:
                return "lucky_correct"
            return "hallucination_wrong_doc"
        return "grounded_wrong_doc"
    u = rng.random()
    if u < p.halluc_correct_doc:
        return "hallucination_correct_doc"
    if u < p.halluc_correct_doc + p.extraction_error:
        return "extraction_wrong"
    return "correct"
