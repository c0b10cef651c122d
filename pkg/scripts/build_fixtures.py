#!/usr/bin/env python3
"""Rebuild the shipped replay fixtures under fixtures/.

Runs the real pipeline in record mode against the deterministic offline
backends, so the committed caches replay byte-for-byte. Two fixture sets:

  fixtures/demo/      100 samples x 4 retrievers (the fast demo pipeline)
  fixtures/fullpool/  5 samples x the full 16-retriever pool
"""

from __future__ import annotations

import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from eor import pipeline, stubs
from eor.dsl import DEFAULT_POOL
from eor.storage import dump_json, write_jsonl


def build_set(
    out_dir: Path,
    n_samples: int,
    retrievers: list[str],
    seed: int,
    wiki_chunks: int,
    se_chunks: int,
) -> None:
    if out_dir.exists():
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True)

    dataset = stubs.toy_dataset(n_samples)
    write_jsonl(out_dir / "dataset.jsonl", dataset)
    write_jsonl(
        out_dir / "wiki_chunks.jsonl",
        (
            {"query_id": row["id"], "chunks": stubs.toy_source_chunks("wiki", i, wiki_chunks, 75)}
            for i, row in enumerate(dataset)
        ),
    )
    write_jsonl(
        out_dir / "se_chunks.jsonl",
        (
            {"query_id": row["id"], "chunks": stubs.toy_source_chunks("se", i, se_chunks, 65)}
            for i, row in enumerate(dataset)
        ),
    )

    manifest_payload = {
        "dataset": "dataset.jsonl",
        "retrievers": retrievers,
        "reader_model": "toy-reader-1",
        "template_family": "chat-instruct-15-words",
        "mode": "replay",
        "seed": seed,
        "output_dir": "out",
        "metrics": ["em", "token_f1"],
        "grader": "em",
        "pooling": "mean",
        "threshold": 0.1,
        "workers": 4,
        "reader_cache": "reader_cache.jsonl",
        "source_fixtures": {"SE": "se_chunks.jsonl", "Wiki": "wiki_chunks.jsonl"},
        "rerank_fixture": "rerank_scores.jsonl",
    }
    dump_json(out_dir / "manifest.json", manifest_payload)

    # Record pass: populate the reader and rerank caches through the real
    # pipeline, then discard the run output.
    manifest = pipeline.load_manifest(out_dir / "manifest.json")
    backends = pipeline.build_backends(
        manifest,
        mode="record",
        reader_transport=stubs.ToyReaderTransport(),
        rerank_scorer=stubs.ToyRerankScorer(),
    )
    with tempfile.TemporaryDirectory() as tmp:
        outcome = pipeline.run_pipeline(manifest, tmp, backends=backends, mode="record")
    if outcome["failures"]:
        raise SystemExit(f"fixture recording failed: {outcome['failures'][:3]}")
    print(f"{out_dir.name}: {n_samples} samples x {len(retrievers)} retrievers recorded")


def main() -> None:
    fixtures = REPO / "fixtures"
    build_set(
        fixtures / "demo",
        n_samples=100,
        retrievers=["ReFree", "Wiki@2", "SE@RR@2&Wiki@2", "SE@2@CP"],
        seed=1234,
        wiki_chunks=3,
        se_chunks=4,
    )
    build_set(
        fixtures / "fullpool",
        n_samples=5,
        retrievers=list(DEFAULT_POOL),
        seed=99,
        wiki_chunks=20,
        se_chunks=6,
    )


if __name__ == "__main__":
    main()
