"""Pure metric computations: simulatability, precision, generality, kappa.

Everything in this module is a pure function over immutable inputs. The
averaging order is per-sample -> per-explanation -> across explanations
(unweighted), and all means are computed with compensated summation in double
precision; rounding to two decimals happens only in the report renderer.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    DegenerateSampleError,
    DimensionError,
    EmptyReportError,
    IncompleteAnnotationError,
)
from .records import (
    AnnotationTarget,
    AnnotatorId,
    AtomicUnit,
    ParseAudit,
    ParseErrorKind,
    RecordGraph,
    UnitAnnotation,
    relevant_units,
)

#: Bucket labels for the presence-proportion distribution, highest first.
#: The first bucket holds exactly 1.0; the rest are upper-exclusive ranges.
BUCKET_LABELS = ("1.00", "0.80-0.99", "0.60-0.79", "0.40-0.59", "0.20-0.39", "0.00-0.19")

_BUCKET_FLOORS = (0.80, 0.60, 0.40, 0.20, 0.00)


class SimilarityMetric(str, Enum):
    COSINE = "cosine"


class SimilarityConfig(BaseModel):
    """Choice of similarity metric for generality, plus the embedder used."""

    model_config = ConfigDict(frozen=True)

    metric: SimilarityMetric = SimilarityMetric.COSINE
    embed_model_id: str = ""


class SampleScore(BaseModel):
    """Per-(explanation, counterfactual) scores.

    `simulatable` is presence_proportion >= threshold; with the default strict
    threshold of 1.0 that is exactly "every unit appears". `precision` is set
    only for simulatable samples.
    """

    model_config = ConfigDict(frozen=True)

    explanation_id: str
    cf_id: str
    presence_proportion: float = Field(ge=0.0, le=1.0)
    simulatable: bool
    precision: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class KappaCell(BaseModel):
    """Pairwise agreement between two annotators; kappa is None when undefined."""

    model_config = ConfigDict(frozen=True)

    kappa: Optional[float]
    n: int


class EvalReport(BaseModel):
    """Aggregated generality/precision statistics for one run."""

    model_config = ConfigDict(frozen=True)

    task: str
    method: str
    model_id: str
    n_explanations: int
    n_samples: int
    generality: Optional[float]
    precision: float
    buckets: dict[str, int]
    kappa_matrix: dict[str, dict[str, KappaCell]]


class AuditSummary(BaseModel):
    """Parsing-accuracy summary over the run's parse audits."""

    model_config = ConfigDict(frozen=True)

    n_audited: int
    n_ok: int
    accuracy: float
    breakdown: dict[str, int]


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _verdict_map(
    annotations: Iterable[UnitAnnotation], target: AnnotationTarget
) -> dict[str, bool]:
    return {a.unit_id: a.verdict for a in annotations if a.target is target}


def _unit_ratio(units: Sequence[AtomicUnit], verdicts: Mapping[str, bool], what: str) -> float:
    if not units:
        raise DegenerateSampleError(f"no relevant units for {what}")
    missing = [u.unit_id for u in units if u.unit_id not in verdicts]
    if missing:
        raise IncompleteAnnotationError(f"missing {what} verdicts for units {missing}")
    return sum(1 for u in units if verdicts[u.unit_id]) / len(units)


def presence_proportion(
    units: Sequence[AtomicUnit], annotations: Iterable[UnitAnnotation]
) -> float:
    """Fraction of simulatability-relevant units judged present in x'.

    `units` must already be routed (relevant_units with the counterfactual
    target); `annotations` are that annotator's verdicts for this
    counterfactual. Requires one counterfactual-target verdict per unit.
    """
    return _unit_ratio(units, _verdict_map(annotations, AnnotationTarget.COUNTERFACTUAL),
                       "simulatability")


def is_simulatable(
    units: Sequence[AtomicUnit],
    annotations: Iterable[UnitAnnotation],
    threshold: float = 1.0,
) -> bool:
    """presence_proportion >= threshold.

    The default threshold 1.0 reproduces the strict indicator: every unit of
    the explanation appears in the counterfactual.
    """
    return presence_proportion(units, annotations) >= threshold


def sample_precision(
    units: Sequence[AtomicUnit], annotations: Iterable[UnitAnnotation]
) -> float:
    """Fraction of precision-relevant units judged present in M(x')."""
    return _unit_ratio(units, _verdict_map(annotations, AnnotationTarget.COUNTERFACTUAL_OUTPUT),
                       "precision")


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """dot(a, b) / (|a| * |b|), defined for equal-length nonzero vectors."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionError(f"vector lengths differ: {va.shape[0]} vs {vb.shape[0]}")
    norm_a = float(np.linalg.norm(va))
    norm_b = float(np.linalg.norm(vb))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateSampleError("cosine similarity is undefined for a zero vector")
    return float(np.dot(va, vb)) / (norm_a * norm_b)


def explanation_generality(
    embeddings: Sequence[Sequence[float]],
    sim_cfg: Optional[SimilarityConfig] = None,
) -> float:
    """One minus the mean pairwise similarity among one explanation's
    simulatable counterfactuals. Requires at least two of them."""
    if sim_cfg is not None and sim_cfg.metric is not SimilarityMetric.COSINE:
        raise ValueError(f"unsupported similarity metric {sim_cfg.metric}")
    if len(embeddings) < 2:
        raise DegenerateSampleError("generality needs at least two simulatable counterfactuals")
    sims = [
        cosine_similarity(embeddings[i], embeddings[j])
        for i in range(len(embeddings))
        for j in range(i + 1, len(embeddings))
    ]
    return 1.0 - _mean(sims)


def cohen_kappa(
    a: Sequence[bool], b: Sequence[bool]
) -> tuple[Optional[float], int]:
    """Chance-corrected agreement between two paired boolean verdict lists.

    kappa = (p_o - p_e) / (1 - p_e), with p_e from each annotator's marginal
    Y/N rates. Returns (None, n) when p_e == 1 (both annotators constant with
    equal marginals), the undefined case excluded from averages.
    """
    if len(a) != len(b):
        raise ValueError("verdict lists must be paired")
    n = len(a)
    if n == 0:
        raise ValueError("kappa needs at least one paired item")
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    pa_yes = sum(a) / n
    pb_yes = sum(b) / n
    p_e = pa_yes * pb_yes + (1 - pa_yes) * (1 - pb_yes)
    if p_e == 1.0:
        return None, n
    return (p_o - p_e) / (1.0 - p_e), n


def bucket_distribution(scores: Iterable[SampleScore]) -> dict[str, int]:
    """Bin presence proportions into the six report buckets.

    Exactly 1.0 goes to "1.00"; every other value falls in the upper-exclusive
    range whose floor it reaches, so 0.80 lands in "0.80-0.99". All labels are
    always present; counts sum to the number of scores.
    """
    counts = {label: 0 for label in BUCKET_LABELS}
    for score in scores:
        counts[bucket_label(score.presence_proportion)] += 1
    return counts


def bucket_label(proportion: float) -> str:
    if not 0.0 <= proportion <= 1.0:
        raise ValueError(f"proportion out of range: {proportion}")
    if proportion == 1.0:
        return BUCKET_LABELS[0]
    for label, floor in zip(BUCKET_LABELS[1:], _BUCKET_FLOORS):
        if proportion >= floor:
            return label
    return BUCKET_LABELS[-1]


def audit_summary(audits: Sequence[ParseAudit]) -> AuditSummary:
    """Parsing accuracy and the error-kind breakdown, last audit per
    explanation winning."""
    latest: dict[str, ParseAudit] = {}
    for audit in audits:
        latest[audit.explanation_id] = audit
    n = len(latest)
    ok = sum(1 for a in latest.values() if a.parsed_ok)
    breakdown = {kind.value: 0 for kind in ParseErrorKind}
    for audit in latest.values():
        if audit.error_kind is not None:
            breakdown[audit.error_kind.value] += 1
    return AuditSummary(
        n_audited=n,
        n_ok=ok,
        accuracy=ok / n if n else 0.0,
        breakdown=breakdown,
    )


def compute_sample_scores(
    graph: RecordGraph,
    annotator: AnnotatorId,
    threshold: float = 1.0,
) -> list[SampleScore]:
    """Score every (explanation, counterfactual) pair from one annotator's
    verdicts.

    Samples with zero relevant units or missing verdicts are skipped; the
    caller decides whether that is worth reporting. Precision is filled only
    for samples simulatable at `threshold`.
    """
    resolved = graph.resolved_annotations()
    annotator_key = annotator.key()
    scores: list[SampleScore] = []
    for expl in graph.explanations:
        units = graph.units_for(expl.id)
        try:
            sim_units = relevant_units(expl.task, units, AnnotationTarget.COUNTERFACTUAL)
            prec_units = relevant_units(expl.task, units, AnnotationTarget.COUNTERFACTUAL_OUTPUT)
        except Exception:
            continue
        for cf in graph.counterfactuals_for(expl.id):
            anns = [
                ann for key, ann in resolved.items()
                if key[0] == annotator_key and ann.cf_id == cf.cf_id
            ]
            try:
                proportion = presence_proportion(sim_units, anns)
            except (DegenerateSampleError, IncompleteAnnotationError):
                continue
            simulatable = proportion >= threshold
            precision: Optional[float] = None
            if simulatable:
                try:
                    precision = sample_precision(prec_units, anns)
                except (DegenerateSampleError, IncompleteAnnotationError):
                    precision = None
            scores.append(SampleScore(
                explanation_id=expl.id,
                cf_id=cf.cf_id,
                presence_proportion=proportion,
                simulatable=simulatable,
                precision=precision,
            ))
    return scores


def kappa_matrix(
    graph: RecordGraph,
    target: Optional[AnnotationTarget] = None,
) -> dict[str, dict[str, KappaCell]]:
    """Pairwise kappa over every annotator pair with overlapping items.

    Verdicts from both targets are pooled by default; pass `target` for a
    per-target breakdown. Items are paired by (cf_id, unit_id, target).
    """
    resolved = graph.resolved_annotations()
    by_annotator: dict[str, dict[tuple[str, str, str], bool]] = {}
    for (annotator_key, cf_id, unit_id, tgt), ann in resolved.items():
        if target is not None and ann.target is not target:
            continue
        by_annotator.setdefault(annotator_key, {})[(cf_id, unit_id, tgt)] = ann.verdict

    matrix: dict[str, dict[str, KappaCell]] = {}
    names = sorted(by_annotator)
    for name_a in names:
        for name_b in names:
            if name_a == name_b:
                continue
            shared = sorted(set(by_annotator[name_a]) & set(by_annotator[name_b]))
            if not shared:
                continue
            kappa, n = cohen_kappa(
                [by_annotator[name_a][item] for item in shared],
                [by_annotator[name_b][item] for item in shared],
            )
            matrix.setdefault(name_a, {})[name_b] = KappaCell(kappa=kappa, n=n)
    return matrix


def aggregate_report(
    graph: RecordGraph,
    annotator: AnnotatorId,
    embeddings: Mapping[str, Sequence[float]],
    threshold: float = 1.0,
    sim_cfg: Optional[SimilarityConfig] = None,
) -> EvalReport:
    """Fold one annotator's verdicts into the run-level report.

    Per-explanation precision is the mean sample precision over that
    explanation's simulatable counterfactuals; the report precision is the
    unweighted mean over explanations with at least one such sample.
    Generality is computed per explanation over its simulatable
    counterfactuals' embeddings (keyed by cf_id) and averaged the same way;
    explanations with fewer than two simulatable counterfactuals are excluded
    from the generality mean.
    """
    scores = compute_sample_scores(graph, annotator, threshold)
    if not graph.explanations:
        raise EmptyReportError("run has no explanations")

    by_explanation: dict[str, list[SampleScore]] = {}
    for score in scores:
        by_explanation.setdefault(score.explanation_id, []).append(score)

    precision_means: list[float] = []
    generality_values: list[float] = []
    n_samples = 0
    for expl_id, expl_scores in sorted(by_explanation.items()):
        simulatable = [s for s in expl_scores if s.simulatable and s.precision is not None]
        if simulatable:
            precision_means.append(_mean([s.precision for s in simulatable]))
            n_samples += len(simulatable)
        sim_embeddings = [
            embeddings[s.cf_id]
            for s in expl_scores
            if s.simulatable and s.cf_id in embeddings
        ]
        if len(sim_embeddings) >= 2:
            generality_values.append(explanation_generality(sim_embeddings, sim_cfg))

    if not precision_means:
        raise EmptyReportError("no explanation has a simulatable, fully annotated sample")

    first = graph.explanations[0]
    return EvalReport(
        task=first.task.value,
        method=first.method.value,
        model_id=first.model_id,
        n_explanations=len(precision_means),
        n_samples=n_samples,
        generality=_mean(generality_values) if generality_values else None,
        precision=_mean(precision_means),
        buckets=bucket_distribution(scores),
        kappa_matrix=kappa_matrix(graph),
    )
