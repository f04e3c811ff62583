"""Command-line entry point: run, report, kappa, sweep, serve."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .config import STAGES, derive_run_id, load_inputs, load_run_config
from .errors import CfsimError
from .metrics import kappa_matrix as compute_kappa_matrix
from .pipeline import run_full, run_sweep
from .report import (
    build_report,
    render_kappa_table,
    render_report_json,
    render_report_table,
    render_scores_csv,
    render_sweep_table,
    sweep_rows,
)
from .store import RunStore


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log pipeline progress.")
def main(verbose: bool) -> None:
    """Counterfactual-simulatability evaluation harness."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _fail(exc: Exception) -> None:
    raise click.ClickException(str(exc))


def _print_manifest(manifest) -> None:
    click.echo(f"run_id: {manifest.run_id}")
    for stage in STAGES:
        count = manifest.stage_counts.get(stage)
        if count is None:
            click.echo(f"  {stage}: pending")
            continue
        line = f"  {stage}: {count.succeeded} ok, {count.failed} failed"
        if count.shortfall:
            line += f", shortfall {count.shortfall}"
        click.echo(line)
    click.echo(f"finished: {manifest.is_finished()}")


CONFIG_SCHEMA_HELP = """\
Config file (TOML or JSON) keys:

\b
  task            news_summarization | medical_suggestion
  method          chain_of_thought | post_hoc
  model_id, judge_model_id, embed_model_id
  counterfactuals_per_explanation   1..10 (default 3)
  num_inputs      >= 1
  transport       live | record | replay
  sanity_conditioned                bool (default false)
  seed            int
  run_id          optional; derived from config+inputs when absent
  gateway.endpoint_url, gateway.api_key_env, gateway.adapter,
  gateway.max_retries, gateway.backoff_s, gateway.max_concurrency,
  gateway.temperature_generation, gateway.temperature_judge,
  gateway.max_tokens, gateway.transcript_path

Inputs file: newline-delimited JSON objects {"id": ..., "text": ...}.
"""


@main.command(epilog=CONFIG_SCHEMA_HELP)
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--inputs", "inputs_path", required=True, type=click.Path(exists=True))
@click.option("--resume", "resume_id", default=None, help="Resume an existing run id.")
@click.option("--store", "store_root", default="runs", show_default=True)
def run(config_path: str, inputs_path: str, resume_id: str, store_root: str) -> None:
    """Execute the five-stage pipeline for a config and an inputs file."""
    try:
        cfg = load_run_config(config_path)
        inputs = load_inputs(inputs_path)
        manifest = run_full(cfg, inputs, store_root, run_id=resume_id)
    except CfsimError as exc:
        _fail(exc)
    _print_manifest(manifest)


@main.command()
@click.argument("run_id")
@click.option("--threshold", default=1.0, show_default=True,
              help="Simulatability threshold on the unit-presence proportion.")
@click.option("--format", "fmt", default="table", show_default=True,
              type=click.Choice(["json", "table", "csv"]))
@click.option("--annotator", default=None,
              help="Whose verdicts to aggregate (defaults to the LLM judge).")
@click.option("--store", "store_root", default="runs", show_default=True)
def report(run_id: str, threshold: float, fmt: str, annotator: str,
           store_root: str) -> None:
    """Render the generality/precision report for a run."""
    try:
        eval_report, scores, audits = build_report(
            store_root, run_id, threshold=threshold, annotator_name=annotator
        )
    except CfsimError as exc:
        _fail(exc)
    if fmt == "json":
        click.echo(render_report_json(eval_report, audits))
    elif fmt == "csv":
        click.echo(render_scores_csv(scores), nl=False)
    else:
        click.echo(render_report_table(eval_report, audits), nl=False)


@main.command()
@click.argument("run_id")
@click.option("--target", default=None,
              type=click.Choice(["counterfactual", "counterfactual_output"]),
              help="Restrict agreement to one target instead of pooling both.")
@click.option("--store", "store_root", default="runs", show_default=True)
def kappa(run_id: str, target: str, store_root: str) -> None:
    """Print the pairwise inter-annotator agreement matrix."""
    from .records import AnnotationTarget

    try:
        store = RunStore(store_root, run_id)
        if not store.exists():
            raise CfsimError(f"run {run_id} does not exist under {store_root}")
        graph = store.load_graph()
        matrix = compute_kappa_matrix(
            graph, AnnotationTarget(target) if target else None
        )
    except CfsimError as exc:
        _fail(exc)
    if not matrix:
        raise click.ClickException("no annotator pair has overlapping items")
    click.echo(render_kappa_table(matrix), nl=False)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--inputs", "inputs_path", required=True, type=click.Path(exists=True))
@click.option("--k", "k_list", required=True,
              help="Comma-separated counterfactual counts, e.g. 3,5,10.")
@click.option("--store", "store_root", default="runs", show_default=True)
def sweep(config_path: str, inputs_path: str, k_list: str, store_root: str) -> None:
    """Run the pipeline per counterfactual count, sharing stage 1."""
    try:
        ks = [int(part) for part in k_list.split(",") if part.strip()]
    except ValueError:
        raise click.ClickException(f"bad --k list {k_list!r}")
    if not ks:
        raise click.ClickException("empty --k list")
    try:
        cfg = load_run_config(config_path)
        inputs = load_inputs(inputs_path)
        manifests = run_sweep(cfg, inputs, ks, store_root)
        rows = sweep_rows(manifests, store_root)
    except CfsimError as exc:
        _fail(exc)
    click.echo(render_sweep_table(rows), nl=False)


@main.command()
@click.argument("run_id")
@click.option("--bind", default="127.0.0.1:8370", show_default=True)
@click.option("--store", "store_root", default="runs", show_default=True)
@click.option("--roster", default=None,
              help="Comma-separated annotator names allowed to submit.")
@click.option("--ui", "ui_dir", default=None, type=click.Path(),
              help="Directory with the built annotation UI bundle.")
def serve(run_id: str, bind: str, store_root: str, roster: str, ui_dir: str) -> None:
    """Serve the annotation API (and UI, if built) for a run."""
    import uvicorn

    from .service import create_app

    store = RunStore(store_root, run_id)
    if not store.exists():
        raise click.ClickException(f"run {run_id} does not exist under {store_root}")
    host, _, port_text = bind.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        raise click.ClickException(f"bad --bind {bind!r}, expected addr:port")
    default_ui = Path(__file__).parents[2] / "frontend" / "dist"
    ui_path = Path(ui_dir) if ui_dir else default_ui
    app = create_app(
        store_root,
        roster=[name.strip() for name in roster.split(",")] if roster else None,
        ui_dir=ui_path if ui_path.is_dir() else None,
    )
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=port, log_level="warning")
    except SystemExit as exc:  # uvicorn exits nonzero on bind failure
        sys.exit(exc.code or 1)


if __name__ == "__main__":
    main()
