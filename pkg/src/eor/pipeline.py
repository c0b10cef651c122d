"""Run orchestration: manifest handling, backend construction, and the
run / train / ensemble / analyze / report phases used by the CLI.

Every phase is a plain function over files, so reports are regenerable from
persisted run records without touching any backend. All randomness flows from
the manifest's root seed.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import consistency, dsl, engine, figures, trainer, voter
from .domain import GoldAnswerSet, IndicatorMatrix, Query, RunRecord, base_indicators
from .reader import (
    HttpTransport,
    READER_ENDPOINT_ENV,
    READER_TOKEN_ENV,
    ReaderGateway,
    ReplayCache,
    forbid_network,
)
from .storage import (
    append_jsonl,
    canonical_hash,
    dump_json,
    load_dataset,
    read_jsonl,
    write_csv,
    write_jsonl,
)

SCORER_ENDPOINT_ENV = "EOR_SCORER_ENDPOINT"
RERANK_ENDPOINT_ENV = "EOR_RERANK_ENDPOINT"
SOURCE_ENDPOINT_ENVS = {"SE": "EOR_SEARCH_ENDPOINT", "Wiki": "EOR_WIKI_ENDPOINT"}


@dataclass
class RunManifest:
    """One run's full configuration; its hash identifies the run."""

    dataset: str
    retrievers: tuple[str, ...]
    reader_model: str = "toy-reader"
    template_family: str = "chat-instruct-15-words"
    mode: str = "replay"
    seed: int = 0
    output_dir: str = "out"
    metrics: tuple[str, ...] = ("em", "token_f1")
    grader: str = "em"
    pooling: str = "mean"
    threshold: float = voter.DEFAULT_THRESHOLD
    workers: int = 4
    max_tokens: int = 64
    reader_cache: str | None = None
    source_fixtures: dict[str, str] = field(default_factory=dict)
    rerank_fixture: str | None = None
    similarity_fixture: str | None = None
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        names = [dsl.canonical_name(e) for e in self.retrievers]
        if len(set(names)) != len(names):
            raise ValueError("retriever pool contains duplicate canonical names")
        self.retrievers = tuple(names)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def manifest_hash(self) -> str:
        return canonical_hash(
            {
                "dataset": self.dataset,
                "retrievers": list(self.retrievers),
                "reader_model": self.reader_model,
                "template_family": self.template_family,
                "seed": self.seed,
                "metrics": list(self.metrics),
                "grader": self.grader,
                "pooling": self.pooling,
                "threshold": self.threshold,
            }
        )


def load_manifest(path: str | Path, **overrides) -> RunManifest:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {
        "dataset", "retrievers", "reader_model", "template_family", "mode", "seed",
        "output_dir", "metrics", "grader", "pooling", "threshold", "workers",
        "max_tokens", "reader_cache", "source_fixtures", "rerank_fixture",
        "similarity_fixture",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown manifest fields {sorted(unknown)}")
    raw["retrievers"] = tuple(raw.get("retrievers", ()))
    raw["metrics"] = tuple(raw.get("metrics", ("em", "token_f1")))
    return RunManifest(base_dir=path.parent, **raw)


@dataclass
class Backends:
    adapters: dict[str, engine.SourceAdapter]
    scorer: engine.RerankScorer | None
    reader: ReaderGateway
    similarity_scorers: dict[str, object]
    grader: consistency.Grader


def build_backends(
    manifest: RunManifest,
    mode: str | None = None,
    reader_transport=None,
    rerank_scorer=None,
    similarity_transport=None,
) -> Backends:
    """Wire adapters, scorers, and the reader for the requested mode.

    Replay mode injects a transport that refuses network access, so a replay
    run structurally performs zero network operations.
    """
    mode = mode or manifest.mode
    cache_path = manifest.resolve(manifest.reader_cache)
    cache = ReplayCache(cache_path)
    if mode == "replay":
        transport = forbid_network
    elif reader_transport is not None:
        transport = reader_transport
    else:
        endpoint = os.environ.get(READER_ENDPOINT_ENV)
        if not endpoint:
            raise ValueError(
                f"{mode} mode needs a reader transport ({READER_ENDPOINT_ENV} unset)"
            )
        transport = HttpTransport(endpoint, os.environ.get(READER_TOKEN_ENV))
    reader = ReaderGateway(
        manifest.reader_model,
        cache,
        mode=mode,
        transport=transport,
        family=manifest.template_family,
        max_tokens=manifest.max_tokens,
    )

    adapters: dict[str, engine.SourceAdapter] = {}
    for kind, tag in (("SE", "search"), ("Wiki", "wiki")):
        fixture = manifest.source_fixtures.get(kind)
        if fixture is not None:
            adapters[kind] = engine.FixtureSourceAdapter(manifest.resolve(fixture), tag)
        else:
            endpoint = os.environ.get(SOURCE_ENDPOINT_ENVS[kind])
            if endpoint:
                adapters[kind] = engine.HttpSourceAdapter(HttpTransport(endpoint), tag)

    scorer = None
    needs_rerank = any("@RR" in name for name in manifest.retrievers)
    if needs_rerank or manifest.rerank_fixture:
        rerank_cache = ReplayCache(manifest.resolve(manifest.rerank_fixture))
        live = rerank_scorer
        if live is None and mode != "replay":
            endpoint = os.environ.get(RERANK_ENDPOINT_ENV)
            if endpoint:
                live = engine.HttpRerankScorer(HttpTransport(endpoint))
        scorer = engine.CachedRerankScorer(rerank_cache, mode=mode, live_scorer=live)

    similarity_scorers: dict[str, object] = {}
    external_ids = [m for m in manifest.metrics if m not in ("em", "token_f1")]
    if external_ids:
        sim_cache = ReplayCache(manifest.resolve(manifest.similarity_fixture))
        live_sim = None
        if mode != "replay":
            if similarity_transport is not None:
                live_sim = voter.HttpSimilarityScorer(similarity_transport)
            else:
                endpoint = os.environ.get(SCORER_ENDPOINT_ENV)
                if endpoint:
                    live_sim = voter.HttpSimilarityScorer(HttpTransport(endpoint))
        for metric_id in external_ids:
            similarity_scorers[metric_id] = voter.CachedSimilarityScorer(
                metric_id, sim_cache, mode=mode, live_scorer=live_sim
            )

    if manifest.grader == "em":
        grader = consistency.em_grader
    elif manifest.grader == "semantic":
        grader_metric = external_ids[0] if external_ids else None
        if grader_metric is None:
            raise ValueError("semantic grading requires an external similarity metric")
        grader = consistency.make_semantic_grader(similarity_scorers[grader_metric])
    else:
        raise ValueError(f"unknown grader {manifest.grader!r}")

    return Backends(adapters, scorer, reader, similarity_scorers, grader)


def _execute_pair(
    plan: dsl.Plan,
    name: str,
    query: Query,
    gold: GoldAnswerSet,
    backends: Backends,
) -> RunRecord:
    document = engine.execute_plan(plan, query, backends.adapters, backends.scorer, backends.reader)
    flags: list[str] = []
    if document.is_empty() and not (isinstance(plan, dsl.Source) and plan.kind == "ReFree"):
        flags.append("empty_document")
    answer = backends.reader.answer(query, None if document.is_empty() else document)
    correct = backends.grader(answer, gold)
    indicators = base_indicators(document, answer, gold, correct)
    return RunRecord(
        sample_id=query.id,
        retriever=name,
        document_text=document.text,
        answer=answer,
        indicators=indicators,
        flags=tuple(flags),
    )


def run_pipeline(
    manifest: RunManifest,
    out_dir: str | Path,
    backends: Backends | None = None,
    mode: str | None = None,
    workers: int | None = None,
) -> dict:
    """Execute every (sample, retriever) pair, persisting records as JSON
    Lines. Resumable: pairs already on disk are skipped. Backend failures are
    recorded per pair without aborting the run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    backends = backends or build_backends(manifest, mode=mode)
    dataset = load_dataset(manifest.resolve(manifest.dataset))
    plans = [(name, dsl.parse(name)) for name in manifest.retrievers]

    records_path = out_dir / "records.jsonl"
    done: set[tuple[str, str]] = set()
    if records_path.exists():
        for raw in read_jsonl(records_path):
            done.add((raw["sample_id"], raw["retriever"]))

    tasks = [
        (query, gold, name, plan)
        for query, gold in dataset
        for name, plan in plans
        if (query.id, name) not in done
    ]
    failures: list[dict] = []
    n_workers = workers if workers is not None else manifest.workers

    def work(task):
        query, gold, name, plan = task
        try:
            return _execute_pair(plan, name, query, gold, backends)
        except Exception as exc:  # per-pair isolation: the run must go on
            return {"sample_id": query.id, "retriever": name, "error": str(exc)}

    written = 0
    with ThreadPoolExecutor(max_workers=max(1, n_workers)) as pool:
        # Results are appended in submission order, so output is deterministic
        # regardless of completion order.
        for outcome in pool.map(work, tasks):
            if isinstance(outcome, RunRecord):
                append_jsonl(records_path, outcome.to_json())
                written += 1
            else:
                failures.append(outcome)

    if failures:
        failures_path = out_dir / "failures.jsonl"
        for failure in failures:
            append_jsonl(failures_path, failure)

    dump_json(
        out_dir / "run_summary.json",
        {
            "manifest_hash": manifest.manifest_hash(),
            "n_samples": len(dataset),
            "retrievers": list(manifest.retrievers),
            "records_written": written,
            "records_skipped": len(done),
            "failures": len(failures),
            "failed_pairs": [[f["sample_id"], f["retriever"]] for f in failures],
        },
    )
    return {"written": written, "skipped": len(done), "failures": failures}


def load_records(path: str | Path) -> list[RunRecord]:
    return [RunRecord.from_dict(raw) for raw in read_jsonl(path)]


def _pool_names(manifest: RunManifest, records: Sequence[RunRecord]) -> list[str]:
    """Column order for analysis: the manifest pool, or first-seen order from
    the records when the manifest declares no retrievers (synthetic worlds)."""
    if manifest.retrievers:
        return list(manifest.retrievers)
    return list(dict.fromkeys(r.retriever for r in records))


def _gold_map(dataset: Sequence[tuple[Query, GoldAnswerSet]]) -> dict[str, GoldAnswerSet]:
    return {query.id: gold for query, gold in dataset}


def train_phase(
    manifest: RunManifest,
    records: Sequence[RunRecord],
    out_path: str | Path,
    backends: Backends | None = None,
    restarts: int = 5,
    max_iterations: int = 2000,
) -> dict:
    """Precompute tensors from persisted records and fit the voter weights."""
    backends = backends or build_backends(manifest)
    dataset = load_dataset(manifest.resolve(manifest.dataset))
    gold = _gold_map(dataset)
    metrics = voter.build_metrics(manifest.metrics, backends.similarity_scorers)
    sample_order = [q.id for q, _ in dataset]
    tensor = trainer.precompute(
        records, gold, metrics, grader=backends.grader,
        sample_order=sample_order, retriever_order=_pool_names(manifest, records),
    )
    config = trainer.SearchConfig(
        max_iterations=max_iterations,
        restarts=restarts,
        seed=manifest.seed,
        threshold=manifest.threshold,
    )
    pooling = voter.parse_pooling(manifest.pooling)
    omega_r, omega_s, report = trainer.train(tensor, config, pooling)
    trainer.save_weights(
        out_path, omega_r, omega_s, manifest.metrics, tensor.retriever_names, report["objective"]
    )
    return report


def ensemble_phase(
    manifest: RunManifest,
    records: Sequence[RunRecord],
    weights: Mapping,
    out_path: str | Path,
    backends: Backends | None = None,
) -> dict:
    """Vote per sample under the trained weights; write selections plus an
    accuracy summary."""
    backends = backends or build_backends(manifest)
    dataset = load_dataset(manifest.resolve(manifest.dataset))
    gold = _gold_map(dataset)
    retriever_names = list(weights["retriever_names"])
    metrics = voter.build_metrics(weights["metric_ids"], backends.similarity_scorers)
    omega_s = voter.SimWeights(tuple(float(v) for v in weights["omega_s"]))
    omega_r = voter.RetrieverWeights(
        tuple(float(v) for v in weights["omega_r"]), threshold=float(weights["threshold"])
    )
    pooling = voter.parse_pooling(manifest.pooling)

    by_key = {(r.sample_id, r.retriever): r for r in records}
    selections: list[dict] = []
    n_correct = 0
    for query, gold_set in dataset:
        answers = []
        for name in retriever_names:
            record = by_key.get((query.id, name))
            if record is None:
                raise ValueError(f"missing record for sample {query.id!r}, retriever {name!r}")
            answers.append(record.answer)
        tensor = voter.PairwiseSimilarityTensor.compute(answers, metrics)
        result = voter.voter_scores(answers, tensor, omega_s, omega_r, pooling)
        answer = answers[result.winner_index]
        correct = backends.grader(answer, gold_set)
        n_correct += correct
        selections.append(
            {
                "sample_id": query.id,
                "winner_retriever": retriever_names[result.winner_index],
                "answer": answer,
                "correct": correct,
                "scores": [round(s, 10) for s in result.scores],
            }
        )
    accuracy = n_correct / len(dataset) if dataset else 0.0
    out_path = Path(out_path)
    write_jsonl(out_path, selections)
    summary = {
        "accuracy": accuracy,
        "n_samples": len(dataset),
        "weights_objective": weights.get("objective"),
        "selections_path": out_path.name,
    }
    dump_json(out_path.with_name("ensemble_summary.json"), summary)
    return summary


def analyze_phase(
    manifest: RunManifest,
    records: Sequence[RunRecord],
    out_dir: str | Path,
    backends: Backends | None = None,
    max_upper_bound_pool: int = 16,
) -> dict:
    """Write the pairwise win-ratio CSV, the per-error masked win-ratio CSVs
    (length-filtered), the subset upper bounds, and a summary JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = _pool_names(manifest, records)
    correct = IndicatorMatrix.from_records(records, "answer_correct", column_order=names)
    cells = consistency.rwr_matrix(correct)
    consistency.write_heatmap_csv(out_dir / "rwr.csv", names, cells)

    summary = consistency.consistency_summary(correct)
    summary["manifest_hash"] = manifest.manifest_hash()

    filtered = consistency.length_filter(records)
    kept_samples = sorted({r.sample_id for r in filtered})
    summary["n_samples_after_length_filter"] = len(kept_samples)
    if kept_samples:
        indicators = consistency.indicators_from_records(
            filtered, sample_order=kept_samples, retriever_order=names
        )
        for kind in consistency.ERROR_KINDS:
            error_cells = consistency.error_rwr_matrix(kind, indicators)
            consistency.write_heatmap_csv(out_dir / f"error_rwr_{kind}.csv", names, error_cells)

    bounds = consistency.upper_bounds_by_size(
        correct, max_enumerate=max_upper_bound_pool, seed=manifest.seed
    )
    rows = []
    for size in sorted(bounds):
        for subset, value in bounds[size]:
            rows.append([size, "+".join(names[i] for i in subset), f"{value:.6f}"])
    write_csv(out_dir / "upper_bounds.csv", ["pool_size", "subset", "upper_bound"], rows)
    dump_json(out_dir / "consistency_summary.json", summary)
    return summary


def report_phase(
    manifest: RunManifest,
    records: Sequence[RunRecord],
    out_dir: str | Path,
    weights: Mapping | None = None,
    ensemble_summary: Mapping | None = None,
) -> Path:
    """Bundle a human-readable summary: markdown tables plus rendered figures
    alongside the delimited analysis outputs."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    names = _pool_names(manifest, records)
    summary = analyze_phase(manifest, records, out_dir / "analysis")

    correct = IndicatorMatrix.from_records(records, "answer_correct", column_order=names)
    cells = consistency.rwr_matrix(correct)
    figures.save_heatmap(fig_dir / "rwr_heatmap.png", names, cells, "Relative win ratio")
    accuracies = [row["accuracy"] for row in summary["retrievers"]]
    figures.save_accuracy_bars(fig_dir / "accuracy.png", names, accuracies)

    filtered = consistency.length_filter(records)
    kept_samples = sorted({r.sample_id for r in filtered})
    if kept_samples:
        indicators = consistency.indicators_from_records(
            filtered, sample_order=kept_samples, retriever_order=names
        )
        for kind in consistency.ERROR_KINDS:
            figures.save_heatmap(
                fig_dir / f"error_rwr_{kind}.png",
                names,
                consistency.error_rwr_matrix(kind, indicators),
                f"Relative win ratio: {kind.replace('_', ' ')}",
            )

    bounds = consistency.upper_bounds_by_size(correct, seed=manifest.seed)
    figures.save_upper_bound_boxplot(
        fig_dir / "upper_bounds.png",
        {size: [v for _, v in pairs] for size, pairs in bounds.items()},
        best_single=max(accuracies),
    )
    if weights is not None:
        figures.save_weight_map(
            fig_dir / "retriever_weights.png",
            weights["retriever_names"],
            [float(v) for v in weights["omega_r"]],
            float(weights["threshold"]),
        )

    lines = ["# Run report", ""]
    lines.append(f"- manifest hash: `{summary['manifest_hash']}`")
    lines.append(f"- samples: {summary['n_samples']}")
    lines.append(f"- samples after answer-length filter: {summary['n_samples_after_length_filter']}")
    if ensemble_summary is not None:
        lines.append(f"- ensemble accuracy: {ensemble_summary['accuracy']:.4f}")
    lines += ["", "## Retrievers", "", "| retriever | accuracy | MRWR | MRLR |", "|---|---|---|---|"]
    for row in summary["retrievers"]:
        lines.append(
            f"| {row['name']} | {row['accuracy']:.4f} | {row['mrwr']:.4f} | {row['mrlr']:.4f} |"
        )
    if weights is not None:
        lines += ["", "## Trained retriever weights", "", "| retriever | weight | active |", "|---|---|---|"]
        threshold = float(weights["threshold"])
        for name, value in zip(weights["retriever_names"], weights["omega_r"]):
            active = "yes" if float(value) > threshold else "no"
            lines.append(f"| {name} | {float(value):.4f} | {active} |")
        lines += ["", f"Metric weights: " + ", ".join(
            f"{mid}={float(v):.4f}" for mid, v in zip(weights["metric_ids"], weights["omega_s"])
        )]
    lines += ["", "## Figures", ""]
    for png in sorted(fig_dir.glob("*.png")):
        lines.append(f"![{png.stem}](figures/{png.name})")
    lines.append("")
    report_path = out_dir / "report.md"
    report_path.write_text("\n".join(lines), encoding="utf-8")
    return report_path
