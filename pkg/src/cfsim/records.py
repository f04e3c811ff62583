"""Shared data model for every pipeline stage.

All record types are immutable pydantic models with the canonical JSON field
names used by the store, the annotation service, and the UI. Category routing
(which units are judged against which target) lives here so the pipeline, the
metrics, and the service cannot disagree about it.

Unit identity is (explanation_id, ordinal); unit text is deliberately not
deduplicated: two units with identical text are judged independently.
Timestamps are informational only and never part of identity.
"""

from __future__ import annotations

from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import RecordValidationError


class TaskKind(str, Enum):
    NEWS_SUMMARIZATION = "news_summarization"
    MEDICAL_SUGGESTION = "medical_suggestion"


class ExplanationMethod(str, Enum):
    CHAIN_OF_THOUGHT = "chain_of_thought"
    POST_HOC = "post_hoc"


class UnitCategory(str, Enum):
    GENERAL = "general"
    PATIENT_INFORMATION = "patient_information"
    SUGGESTION = "suggestion"


class AnnotationTarget(str, Enum):
    COUNTERFACTUAL = "counterfactual"
    COUNTERFACTUAL_OUTPUT = "counterfactual_output"


class AnnotatorKind(str, Enum):
    HUMAN = "human"
    LLM_JUDGE = "llm_judge"


class ParseErrorKind(str, Enum):
    MISSING_EXTRACTION = "missing_extraction"
    INCORRECT_EXTRACTION = "incorrect_extraction"
    MISSING_AND_INCORRECT = "missing_and_incorrect"


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class ExplanationRecord(BaseModel):
    """An (input, output, explanation) triple with its prompting method."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    task: TaskKind
    method: ExplanationMethod
    input_text: str = Field(min_length=1)
    output_text: str = Field(min_length=1)
    explanation_text: str = Field(min_length=1)
    model_id: str = Field(min_length=1)
    created_at: datetime = Field(default_factory=_utcnow)


class AtomicUnit(BaseModel):
    """One extracted unit of an explanation with its category tag.

    Ordinals within one explanation must be distinct and contiguous from 0;
    that is checked at graph level since a single unit cannot know its peers.
    """

    model_config = ConfigDict(frozen=True)

    unit_id: str = Field(min_length=1)
    explanation_id: str = Field(min_length=1)
    text: str = Field(min_length=1)
    category: UnitCategory
    ordinal: int = Field(ge=0)


class Counterfactual(BaseModel):
    """A generated counterfactual input x' for one explanation."""

    model_config = ConfigDict(frozen=True)

    cf_id: str = Field(min_length=1)
    explanation_id: str = Field(min_length=1)
    text: str = Field(min_length=1)
    index: int = Field(ge=0)


class CounterfactualOutput(BaseModel):
    """The model's output on a counterfactual.

    conditioned_on_explanation is true only in sanity-check runs where the
    generation prompt embedded the original explanation.
    """

    model_config = ConfigDict(frozen=True)

    cf_id: str = Field(min_length=1)
    text: str = Field(min_length=1)
    conditioned_on_explanation: bool = False


class AnnotatorId(BaseModel):
    """Stable identity of a human annotator or the LLM judge."""

    model_config = ConfigDict(frozen=True)

    kind: AnnotatorKind
    name: str = Field(min_length=1)

    def key(self) -> str:
        return f"{self.kind.value}:{self.name}"


class UnitAnnotation(BaseModel):
    """One annotator's Y/N judgment of a unit against one target text.

    (annotator, cf_id, unit_id, target) is the logical key; resubmissions
    append a new row and the loader resolves last-wins, so earlier verdicts
    remain on disk as an audit trail.
    """

    model_config = ConfigDict(frozen=True)

    annotator: AnnotatorId
    cf_id: str = Field(min_length=1)
    unit_id: str = Field(min_length=1)
    target: AnnotationTarget
    verdict: bool
    note: Optional[str] = None

    def logical_key(self) -> tuple[str, str, str, str]:
        return (self.annotator.key(), self.cf_id, self.unit_id, self.target.value)


class ParseAudit(BaseModel):
    """A human/LLM audit of whether one explanation parsed correctly."""

    model_config = ConfigDict(frozen=True)

    explanation_id: str = Field(min_length=1)
    parsed_ok: bool
    error_kind: Optional[ParseErrorKind] = None
    note: Optional[str] = None

    @model_validator(mode="after")
    def _error_kind_iff_failed(self) -> "ParseAudit":
        if self.parsed_ok and self.error_kind is not None:
            raise ValueError("error_kind must be absent when parsed_ok is true")
        if not self.parsed_ok and self.error_kind is None:
            raise ValueError("error_kind is required when parsed_ok is false")
        return self


class Violation(BaseModel):
    """One record-graph consistency violation. Violations are data, not errors."""

    model_config = ConfigDict(frozen=True)

    kind: str
    record: str
    message: str


def relevant_units(
    task: TaskKind, units: Iterable[AtomicUnit], target: AnnotationTarget
) -> list[AtomicUnit]:
    """Select the units judged against `target` for a task, in ordinal order.

    Summarization has no category split: every unit is judged against both
    the counterfactual and the counterfactual output. Medical units route by
    category: patient_information units drive simulatability (counterfactual
    target) and suggestion units drive precision (output target).

    Raises RecordValidationError if a unit's category is inconsistent with
    the task, naming the offending unit.
    """
    ordered = sorted(units, key=lambda u: u.ordinal)
    for unit in ordered:
        if task is TaskKind.NEWS_SUMMARIZATION and unit.category is not UnitCategory.GENERAL:
            raise RecordValidationError(
                f"unit {unit.unit_id}: summarization units must be 'general', "
                f"got '{unit.category.value}'"
            )
        if task is TaskKind.MEDICAL_SUGGESTION and unit.category is UnitCategory.GENERAL:
            raise RecordValidationError(
                f"unit {unit.unit_id}: medical units must not be 'general'"
            )
    if task is TaskKind.NEWS_SUMMARIZATION:
        return ordered
    wanted = (
        UnitCategory.PATIENT_INFORMATION
        if target is AnnotationTarget.COUNTERFACTUAL
        else UnitCategory.SUGGESTION
    )
    return [u for u in ordered if u.category is wanted]


class RecordGraph(BaseModel):
    """Every record of one run, with reference lookups.

    Annotation rows are kept in file order; `resolved_annotations` collapses
    them last-wins per logical key.
    """

    explanations: list[ExplanationRecord] = Field(default_factory=list)
    units: list[AtomicUnit] = Field(default_factory=list)
    counterfactuals: list[Counterfactual] = Field(default_factory=list)
    outputs: list[CounterfactualOutput] = Field(default_factory=list)
    annotations: list[UnitAnnotation] = Field(default_factory=list)
    audits: list[ParseAudit] = Field(default_factory=list)

    def explanation(self, explanation_id: str) -> Optional[ExplanationRecord]:
        return next((e for e in self.explanations if e.id == explanation_id), None)

    def units_for(self, explanation_id: str) -> list[AtomicUnit]:
        return sorted(
            (u for u in self.units if u.explanation_id == explanation_id),
            key=lambda u: u.ordinal,
        )

    def counterfactuals_for(self, explanation_id: str) -> list[Counterfactual]:
        return sorted(
            (c for c in self.counterfactuals if c.explanation_id == explanation_id),
            key=lambda c: c.index,
        )

    def counterfactual(self, cf_id: str) -> Optional[Counterfactual]:
        return next((c for c in self.counterfactuals if c.cf_id == cf_id), None)

    def unit(self, unit_id: str) -> Optional[AtomicUnit]:
        return next((u for u in self.units if u.unit_id == unit_id), None)

    def output_for(self, cf_id: str) -> Optional[CounterfactualOutput]:
        return next((o for o in self.outputs if o.cf_id == cf_id), None)

    def resolved_annotations(self) -> dict[tuple[str, str, str, str], UnitAnnotation]:
        resolved: dict[tuple[str, str, str, str], UnitAnnotation] = {}
        for ann in self.annotations:
            resolved[ann.logical_key()] = ann
        return resolved

    def annotators(self) -> list[AnnotatorId]:
        seen: dict[str, AnnotatorId] = {}
        for ann in self.annotations:
            seen.setdefault(ann.annotator.key(), ann.annotator)
        return [seen[k] for k in sorted(seen)]


def validate_record_graph(graph: RecordGraph) -> list[Violation]:
    """Check referential integrity and routing rules over a whole run.

    Returns the list of violations (empty means valid). Idempotent and
    insensitive to record insertion order: results are sorted.
    """
    violations: list[Violation] = []

    def add(kind: str, record: str, message: str) -> None:
        violations.append(Violation(kind=kind, record=record, message=message))

    expl_by_id: dict[str, ExplanationRecord] = {}
    for expl in graph.explanations:
        if expl.id in expl_by_id:
            add("duplicate_id", expl.id, "duplicate explanation id")
        expl_by_id[expl.id] = expl

    unit_by_id: dict[str, AtomicUnit] = {}
    for unit in graph.units:
        if unit.unit_id in unit_by_id:
            add("duplicate_id", unit.unit_id, "duplicate unit id")
        unit_by_id[unit.unit_id] = unit
        if unit.explanation_id not in expl_by_id:
            add("dangling_reference", unit.unit_id,
                f"unit references unknown explanation {unit.explanation_id}")
        else:
            expl = expl_by_id[unit.explanation_id]
            if (expl.task is TaskKind.NEWS_SUMMARIZATION
                    and unit.category is not UnitCategory.GENERAL):
                add("category_mismatch", unit.unit_id,
                    "summarization unit must be 'general'")
            if (expl.task is TaskKind.MEDICAL_SUGGESTION
                    and unit.category is UnitCategory.GENERAL):
                add("category_mismatch", unit.unit_id,
                    "medical unit must not be 'general'")

    for expl_id in expl_by_id:
        ordinals = sorted(u.ordinal for u in graph.units if u.explanation_id == expl_id)
        if ordinals and ordinals != list(range(len(ordinals))):
            add("ordinal_gap", expl_id,
                f"unit ordinals not contiguous from 0: {ordinals}")

    cf_by_id: dict[str, Counterfactual] = {}
    for cf in graph.counterfactuals:
        if cf.cf_id in cf_by_id:
            add("duplicate_id", cf.cf_id, "duplicate counterfactual id")
        cf_by_id[cf.cf_id] = cf
        if cf.explanation_id not in expl_by_id:
            add("dangling_reference", cf.cf_id,
                f"counterfactual references unknown explanation {cf.explanation_id}")

    seen_outputs: set[str] = set()
    for out in graph.outputs:
        if out.cf_id not in cf_by_id:
            add("dangling_reference", out.cf_id,
                "output references unknown counterfactual")
        if out.cf_id in seen_outputs:
            add("duplicate_id", out.cf_id, "multiple outputs for one counterfactual")
        seen_outputs.add(out.cf_id)

    for key, ann in graph.resolved_annotations().items():
        record = "/".join(key)
        cf = cf_by_id.get(ann.cf_id)
        unit = unit_by_id.get(ann.unit_id)
        if cf is None:
            add("dangling_reference", record, "annotation references unknown counterfactual")
        if unit is None:
            add("dangling_reference", record, "annotation references unknown unit")
        if cf is None or unit is None:
            continue
        if unit.explanation_id != cf.explanation_id:
            add("cross_explanation", record,
                "annotation pairs a unit with a counterfactual of another explanation")
            continue
        expl = expl_by_id.get(cf.explanation_id)
        if expl is not None and expl.task is TaskKind.MEDICAL_SUGGESTION:
            if (ann.target is AnnotationTarget.COUNTERFACTUAL
                    and unit.category is not UnitCategory.PATIENT_INFORMATION):
                add("routing", record,
                    "medical simulatability verdict on a non patient_information unit")
            if (ann.target is AnnotationTarget.COUNTERFACTUAL_OUTPUT
                    and unit.category is not UnitCategory.SUGGESTION):
                add("routing", record,
                    "medical precision verdict on a non suggestion unit")

    # Precision verdicts are only meaningful once the same annotator has a
    # complete simulatability verdict set for the counterfactual.
    resolved = graph.resolved_annotations()
    precision_pairs = {
        (ann.annotator.key(), ann.cf_id)
        for ann in resolved.values()
        if ann.target is AnnotationTarget.COUNTERFACTUAL_OUTPUT
    }
    for annotator_key, cf_id in sorted(precision_pairs):
        cf = cf_by_id.get(cf_id)
        if cf is None or cf.explanation_id not in expl_by_id:
            continue
        expl = expl_by_id[cf.explanation_id]
        try:
            sim_units = relevant_units(
                expl.task, graph.units_for(expl.id), AnnotationTarget.COUNTERFACTUAL
            )
        except RecordValidationError:
            continue  # already reported as category_mismatch
        missing = [
            u.unit_id
            for u in sim_units
            if (annotator_key, cf_id, u.unit_id, AnnotationTarget.COUNTERFACTUAL.value)
            not in resolved
        ]
        if missing:
            add("precision_before_simulatability", f"{annotator_key}/{cf_id}",
                f"precision verdicts present but simulatability verdicts missing "
                f"for units {missing}")

    for audit in graph.audits:
        if audit.explanation_id not in expl_by_id:
            add("dangling_reference", audit.explanation_id,
                "audit references unknown explanation")

    violations.sort(key=lambda v: (v.kind, v.record, v.message))
    return violations
