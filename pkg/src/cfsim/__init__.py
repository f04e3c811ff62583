"""Counterfactual-simulatability evaluation harness for generation tasks.

Measures how well a model's natural-language explanation lets an observer
predict the model's outputs on counterfactual inputs: a five-stage pipeline
(explanations, counterfactuals, unit parsing, counterfactual outputs,
per-unit annotation) plus simulatability, precision, generality, and
agreement metrics over the resulting record graph.
"""

__version__ = "0.1.0"

from .records import (  # noqa: F401
    AnnotationTarget,
    AnnotatorId,
    AnnotatorKind,
    AtomicUnit,
    Counterfactual,
    CounterfactualOutput,
    ExplanationMethod,
    ExplanationRecord,
    ParseAudit,
    RecordGraph,
    TaskKind,
    UnitAnnotation,
    UnitCategory,
    relevant_units,
    validate_record_graph,
)
