"""Command-line interface: ingest, run, train, ensemble, analyze, simulate,
and report."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import pipeline, simulator, trainer
from .storage import dump_json, load_dataset


@click.group()
def main() -> None:
    """Ensemble-of-retrievers pipeline harness."""


@main.command()
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def ingest(path: str) -> None:
    """Validate a dataset file and print its summary."""
    try:
        dataset = load_dataset(path)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    n_aliases = sum(len(gold.aliases) for _, gold in dataset)
    click.echo(f"records: {len(dataset)}")
    click.echo(f"aliases: {n_aliases}")
    click.echo(f"aliases_per_record: {n_aliases / len(dataset):.3f}" if dataset else "aliases_per_record: 0")


def _load_manifest(config: str, **overrides) -> pipeline.RunManifest:
    try:
        return pipeline.load_manifest(config, **overrides)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["live", "record", "replay"]), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--workers", type=int, default=None)
@click.option("--seed", type=int, default=None, help="Override the manifest seed.")
def run(config: str, mode: str | None, out_dir: str | None, workers: int | None,
        seed: int | None) -> None:
    """Execute the retriever pool over the dataset and persist run records."""
    manifest = _load_manifest(config, mode=mode, output_dir=out_dir, seed=seed)
    target = Path(manifest.output_dir)
    if not target.is_absolute():
        target = Path.cwd() / target
    try:
        outcome = pipeline.run_pipeline(manifest, target, workers=workers)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"records written: {outcome['written']} (skipped {outcome['skipped']} already present)")
    if outcome["failures"]:
        click.echo(f"failures: {len(outcome['failures'])} (see failures.jsonl)")
        for failure in outcome["failures"][:10]:
            click.echo(f"  {failure['sample_id']} / {failure['retriever']}: {failure['error']}")
    else:
        click.echo("failures: 0")


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--restarts", type=int, default=5, show_default=True)
@click.option("--max-iterations", type=int, default=2000, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the manifest seed.")
def train(config: str, records_path: str, out_path: str, restarts: int, max_iterations: int,
          seed: int | None) -> None:
    """Fit voter weights on persisted run records; write the weights JSON."""
    manifest = _load_manifest(config, seed=seed)
    records = pipeline.load_records(records_path)
    try:
        report = pipeline.train_phase(
            manifest, records, out_path, restarts=restarts, max_iterations=max_iterations
        )
    except Exception as exc:
        raise click.ClickException(str(exc))
    dump_json(Path(out_path).with_name("train_report.json"), report)
    click.echo(f"objective: {report['objective']:.6f} (uniform start {report['objective_at_uniform']:.6f})")
    click.echo(f"active retrievers: {', '.join(report['active_retrievers']) or '(none)'}")


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def ensemble(config: str, records_path: str, weights_path: str, out_path: str) -> None:
    """Select one answer per sample under trained weights; report accuracy."""
    manifest = _load_manifest(config)
    records = pipeline.load_records(records_path)
    weights = trainer.load_weights(weights_path)
    try:
        summary = pipeline.ensemble_phase(manifest, records, weights, out_path)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"ensemble accuracy: {summary['accuracy']:.4f} over {summary['n_samples']} samples")


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def analyze(config: str, records_path: str, out_dir: str) -> None:
    """Write win-ratio and error win-ratio CSVs plus a consistency summary."""
    manifest = _load_manifest(config)
    records = pipeline.load_records(records_path)
    try:
        summary = pipeline.analyze_phase(manifest, records, out_dir)
    except Exception as exc:
        raise click.ClickException(str(exc))
    for row in summary["retrievers"]:
        click.echo(
            f"{row['name']}: accuracy {row['accuracy']:.4f}, "
            f"mrwr {row['mrwr']:.4f}, mrlr {row['mrlr']:.4f}"
        )


@main.command()
@click.option("--sets", type=int, default=20, show_default=True, help="Random parameter sets to verify.")
@click.option("--trials", type=int, default=100_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--params-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON object or list of parameter objects instead of random sets.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Verification report path (verification mode).")
@click.option("--generate-world", is_flag=True, default=False,
              help="Write a synthetic dataset + run records instead of verifying.")
@click.option("--retrievers", "n_retrievers", type=int, default=5, show_default=True)
@click.option("--samples", "n_samples", type=int, default=2000, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (world-generation mode).")
def simulate(sets: int, trials: int, seed: int, params_file: str | None, out_path: str | None,
             generate_world: bool, n_retrievers: int, n_samples: int, out_dir: str | None) -> None:
    """Monte Carlo verification of the failure decomposition, or synthetic
    world generation with --generate-world."""
    rng = np.random.default_rng(seed)
    worlds: list[simulator.WorldParameters] | None = None
    if params_file:
        raw = json.loads(Path(params_file).read_text(encoding="utf-8"))
        if isinstance(raw, dict):
            raw = [raw]
        worlds = [simulator.WorldParameters(**entry) for entry in raw]

    if generate_world:
        if out_dir is None:
            raise click.ClickException("--generate-world requires --out-dir")
        if worlds is None:
            worlds = [simulator.WorldParameters(0.3, 0.05, 0.05, 0.2, 0.1)] * n_retrievers
        elif len(worlds) == 1:
            worlds = worlds * n_retrievers
        elif len(worlds) != n_retrievers:
            raise click.ClickException("--params-file must hold 1 or --retrievers entries")
        dataset, records = simulator.generate_world(n_retrievers, n_samples, worlds, seed=seed)
        dataset_path, records_path = simulator.write_world(out_dir, dataset, records, seed=seed)
        click.echo(f"wrote {len(dataset)} samples to {dataset_path}")
        click.echo(f"wrote {len(records)} records to {records_path}")
        return

    if out_path is None:
        raise click.ClickException("verification mode requires --out")
    if worlds is None:
        worlds = [simulator.random_world_parameters(rng) for _ in range(sets)]
    reports = []
    passed = 0
    for index, params in enumerate(worlds):
        report = simulator.verify_decomposition(params, trials, seed=seed + index + 1)
        reports.append(report)
        passed += int(report["passed"])
        status = "pass" if report["passed"] else "FAIL"
        click.echo(
            f"set {index}: empirical {report['failure']['empirical']:.4f} "
            f"vs analytic {report['failure']['expected']:.4f} [{status}]"
        )
    dump_json(out_path, {"n_sets": len(worlds), "passed": passed, "reports": reports})
    click.echo(f"passed {passed}/{len(worlds)} at three sigma")


@main.command()
@click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--ensemble-summary", "ensemble_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def report(config: str, records_path: str, weights_path: str | None,
           ensemble_path: str | None, out_dir: str) -> None:
    """Bundle a human-readable report: markdown, CSVs, and rendered figures."""
    manifest = _load_manifest(config)
    records = pipeline.load_records(records_path)
    weights = trainer.load_weights(weights_path) if weights_path else None
    ens = json.loads(Path(ensemble_path).read_text(encoding="utf-8")) if ensemble_path else None
    try:
        path = pipeline.report_phase(manifest, records, out_dir, weights=weights, ensemble_summary=ens)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"report written to {path}")


if __name__ == "__main__":
    main()
