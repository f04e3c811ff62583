"""Builds EvalReports from stored runs and renders them.

Three output formats: machine-readable JSON, a plain-text table in the
familiar (# Expl, # Samples, Generality, Precision) layout, and a CSV of
per-sample scores. Counterfactual embeddings for generality are fetched
through the run's own gateway, so a replayed run reports without any network.
All numbers are rounded to two decimals here and nowhere else.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

from .config import RunManifest
from .errors import CfsimError, EmptyReportError
from .gateway import Gateway
from .metrics import (
    AuditSummary,
    BUCKET_LABELS,
    EvalReport,
    KappaCell,
    SampleScore,
    SimilarityConfig,
    aggregate_report,
    audit_summary,
    compute_sample_scores,
    explanation_generality,
    kappa_matrix,
)
from .pipeline import build_gateway
from .records import AnnotatorId, AnnotatorKind, RecordGraph
from .store import RunStore

log = logging.getLogger(__name__)

_ERROR_KIND_TITLES = {
    "missing_extraction": "Missing Extraction",
    "incorrect_extraction": "Incorrect Extraction",
    "missing_and_incorrect": "Missing and Incorrect Extraction",
}


def pick_annotator(graph: RecordGraph, manifest: Optional[RunManifest],
                   name: Optional[str] = None) -> AnnotatorId:
    """Choose whose verdicts drive the report.

    Explicit name wins (matched against bare names and kind:name keys). The
    default is the run's LLM judge when its annotations exist, else the only
    annotator present.
    """
    annotators = graph.annotators()
    if not annotators:
        raise EmptyReportError("run has no annotations")
    if name:
        matches = [a for a in annotators if a.name == name or a.key() == name]
        if not matches:
            known = ", ".join(a.key() for a in annotators)
            raise EmptyReportError(f"no annotator {name!r}; run has: {known}")
        return matches[0]
    if manifest is not None:
        judge = AnnotatorId(kind=AnnotatorKind.LLM_JUDGE,
                            name=manifest.config.judge_model_id)
        if any(a == judge for a in annotators):
            return judge
    if len(annotators) == 1:
        return annotators[0]
    known = ", ".join(a.key() for a in annotators)
    raise EmptyReportError(f"several annotators present ({known}); pass one explicitly")


def collect_embeddings(
    graph: RecordGraph,
    scores: Sequence[SampleScore],
    gateway: Gateway,
    embed_model_id: str,
) -> dict[str, list[float]]:
    """Embed the simulatable counterfactuals' texts, keyed by cf_id."""
    cf_ids = [s.cf_id for s in scores if s.simulatable]
    texts = []
    for cf_id in cf_ids:
        cf = graph.counterfactual(cf_id)
        assert cf is not None
        texts.append(cf.text)
    if not texts:
        return {}
    vectors = gateway.map_embed(texts, embed_model_id)
    return {cf_id: vec.values for cf_id, vec in zip(cf_ids, vectors)}


def build_report(
    store_root: Union[str, Path],
    run_id: str,
    threshold: float = 1.0,
    annotator_name: Optional[str] = None,
) -> tuple[EvalReport, list[SampleScore], Optional[AuditSummary]]:
    """Load a run and aggregate it into (report, sample scores, audit summary)."""
    store = RunStore(store_root, run_id)
    if not store.exists():
        raise CfsimError(f"run {run_id} does not exist under {store_root}")
    graph = store.load_graph()
    manifest = store.load_manifest()
    annotator = pick_annotator(graph, manifest, annotator_name)
    scores = compute_sample_scores(graph, annotator, threshold)
    embeddings: dict[str, list[float]] = {}
    if manifest is not None and any(s.simulatable for s in scores):
        gateway = build_gateway(manifest.config, store)
        embeddings = collect_embeddings(
            graph, scores, gateway, manifest.config.embed_model_id
        )
    sim_cfg = SimilarityConfig(
        embed_model_id=manifest.config.embed_model_id if manifest else ""
    )
    report = aggregate_report(graph, annotator, embeddings, threshold, sim_cfg)
    audits = audit_summary(graph.audits) if graph.audits else None
    return report, scores, audits


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def render_report_json(report: EvalReport, audits: Optional[AuditSummary] = None) -> str:
    payload = report.model_dump(mode="json")
    if audits is not None:
        payload["parse_audits"] = audits.model_dump(mode="json")
    return json.dumps(payload, indent=2)


def render_report_table(report: EvalReport, audits: Optional[AuditSummary] = None) -> str:
    out = io.StringIO()
    headers = ["Task", "Method", "Model", "# Expl", "# Samples", "Generality", "Precision"]
    row = [
        report.task, report.method, report.model_id,
        str(report.n_explanations), str(report.n_samples),
        _fmt(report.generality), _fmt(report.precision),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    out.write("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip() + "\n")
    out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")

    out.write("\nProportion of atomic units present in counterfactual\n")
    for label in BUCKET_LABELS:
        out.write(f"  {label:<10} {report.buckets[label]}\n")

    if report.kappa_matrix:
        out.write("\n" + render_kappa_table(report.kappa_matrix))

    if audits is not None:
        out.write("\n" + render_audit_summary(audits))
    return out.getvalue()


def render_scores_csv(scores: Sequence[SampleScore]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["explanation_id", "cf_id", "presence_proportion",
                     "simulatable", "precision"])
    for s in scores:
        writer.writerow([
            s.explanation_id, s.cf_id, repr(s.presence_proportion),
            str(s.simulatable).lower(),
            "" if s.precision is None else repr(s.precision),
        ])
    return out.getvalue()


def render_audit_summary(audits: AuditSummary) -> str:
    out = io.StringIO()
    out.write(f"Parsed explanations audited: {audits.n_audited}\n")
    out.write(f"Accuracy: {audits.accuracy:.2f}\n")
    out.write("Breakdown of incorrect examples:\n")
    for kind, title in _ERROR_KIND_TITLES.items():
        out.write(f"  {title:<34} {audits.breakdown.get(kind, 0)}\n")
    return out.getvalue()


def render_kappa_table(matrix: dict[str, dict[str, KappaCell]]) -> str:
    """Pairwise agreement matrix with dashes on the diagonal, plus the
    human-human vs human-LLM averages."""
    names = sorted(set(matrix) | {b for row in matrix.values() for b in row})
    out = io.StringIO()
    width = max([len(n) for n in names] + [12])
    out.write("Annotator".ljust(width) + "  "
              + "  ".join(n.ljust(width) for n in names).rstrip() + "\n")
    for name_a in names:
        cells = []
        for name_b in names:
            if name_a == name_b:
                cells.append("-")
            else:
                cell = matrix.get(name_a, {}).get(name_b)
                if cell is None:
                    cells.append("")
                elif cell.kappa is None:
                    cells.append(f"- (n={cell.n})")
                else:
                    cells.append(f"{cell.kappa:.2f} (n={cell.n})")
        out.write(name_a.ljust(width) + "  "
                  + "  ".join(c.ljust(width) for c in cells).rstrip() + "\n")

    human_human: list[float] = []
    human_llm: list[float] = []
    for name_a, row in matrix.items():
        for name_b, cell in row.items():
            if name_a >= name_b or cell.kappa is None:
                continue
            kinds = {name_a.split(":", 1)[0], name_b.split(":", 1)[0]}
            if kinds == {"human"}:
                human_human.append(cell.kappa)
            elif kinds == {"human", "llm_judge"}:
                human_llm.append(cell.kappa)
    if human_human:
        avg = sum(human_human) / len(human_human)
        out.write(f"Average human-human kappa: {avg:.2f}\n")
    if human_llm:
        avg = sum(human_llm) / len(human_llm)
        out.write(f"Average human-LLM kappa: {avg:.2f}\n")
    return out.getvalue()


def sweep_rows(
    outcomes: Sequence,
    store_root: Union[str, Path],
    threshold: float = 1.0,
) -> list[dict]:
    """Per-k summary: generality, simulatable count, total generated.

    Accepts pipeline SweepOutcomes (or bare manifests); a failed run becomes
    an error row instead of sinking the table.
    """
    rows = []
    for outcome in outcomes:
        if isinstance(outcome, RunManifest):
            k, manifest, error = (
                outcome.config.counterfactuals_per_explanation, outcome, None
            )
        else:
            k, manifest, error = outcome
        if manifest is None:
            rows.append({"k": k, "run_id": None, "error": error,
                         "generality": None, "simulatable": None,
                         "total_generated": None})
            continue
        store = RunStore(store_root, manifest.run_id)
        graph = store.load_graph()
        annotator = pick_annotator(graph, manifest)
        scores = compute_sample_scores(graph, annotator, threshold)
        generality: Optional[float] = None
        simulatable = [s for s in scores if s.simulatable]
        if simulatable:
            gateway = build_gateway(manifest.config, store)
            embeddings = collect_embeddings(
                graph, scores, gateway, manifest.config.embed_model_id
            )
            per_expl: dict[str, list[list[float]]] = {}
            for s in simulatable:
                if s.cf_id in embeddings:
                    per_expl.setdefault(s.explanation_id, []).append(embeddings[s.cf_id])
            values = [
                explanation_generality(vecs)
                for vecs in per_expl.values()
                if len(vecs) >= 2
            ]
            if values:
                generality = sum(values) / len(values)
        rows.append({
            "k": k,
            "run_id": manifest.run_id,
            "error": None,
            "generality": generality,
            "simulatable": len(simulatable),
            "total_generated": len(graph.counterfactuals),
        })
    return rows


def render_sweep_table(rows: Sequence[dict]) -> str:
    out = io.StringIO()
    ks = [str(r["k"]) for r in rows]
    metric_width = 32
    col = max([len(k) for k in ks] + [8])

    def cell(row: dict, key: str, fmt=str) -> str:
        if row.get("error"):
            return "error"
        value = row[key]
        if value is None:
            return "excluded" if key == "generality" else "-"
        return fmt(value)

    out.write("Metric".ljust(metric_width) + "  "
              + "  ".join(f"k={k}".ljust(col) for k in ks).rstrip() + "\n")
    out.write("Generality".ljust(metric_width) + "  "
              + "  ".join(cell(r, "generality", lambda v: f"{v:.3f}").ljust(col)
                          for r in rows).rstrip() + "\n")
    out.write("Simulatable counterfactuals".ljust(metric_width) + "  "
              + "  ".join(cell(r, "simulatable").ljust(col) for r in rows).rstrip()
              + "\n")
    out.write("Total generated counterfactuals".ljust(metric_width) + "  "
              + "  ".join(cell(r, "total_generated").ljust(col) for r in rows).rstrip()
              + "\n")
    failed = [r for r in rows if r.get("error")]
    for row in failed:
        out.write(f"k={row['k']} failed: {row['error']}\n")
    return out.getvalue()
