"""Builders for synthetic record graphs used across test modules."""

from __future__ import annotations

import random
from typing import Optional, Sequence

from cfsim.records import (
    AnnotationTarget,
    AnnotatorId,
    AnnotatorKind,
    AtomicUnit,
    Counterfactual,
    CounterfactualOutput,
    ExplanationMethod,
    ExplanationRecord,
    RecordGraph,
    TaskKind,
    UnitAnnotation,
    UnitCategory,
)

JUDGE = AnnotatorId(kind=AnnotatorKind.LLM_JUDGE, name="judge-model")


def make_explanation(expl_id: str, task: TaskKind = TaskKind.NEWS_SUMMARIZATION,
                     method: ExplanationMethod = ExplanationMethod.CHAIN_OF_THOUGHT,
                     ) -> ExplanationRecord:
    return ExplanationRecord(
        id=expl_id, task=task, method=method,
        input_text=f"input for {expl_id}",
        output_text=f"output for {expl_id}",
        explanation_text=f"explanation for {expl_id}",
        model_id="model-under-test",
    )


def make_units(expl_id: str, categories: Sequence[UnitCategory]) -> list[AtomicUnit]:
    return [
        AtomicUnit(unit_id=f"{expl_id}-u{i}", explanation_id=expl_id,
                   text=f"unit {i} of {expl_id}", category=cat, ordinal=i)
        for i, cat in enumerate(categories)
    ]


def make_cfs(expl_id: str, n: int) -> list[Counterfactual]:
    return [
        Counterfactual(cf_id=f"{expl_id}-cf{i}", explanation_id=expl_id,
                       text=f"counterfactual {i} of {expl_id}", index=i)
        for i in range(n)
    ]


def annotate(annotator: AnnotatorId, cf_id: str, unit_id: str,
             target: AnnotationTarget, verdict: bool) -> UnitAnnotation:
    return UnitAnnotation(annotator=annotator, cf_id=cf_id, unit_id=unit_id,
                          target=target, verdict=verdict)


def news_graph(
    sim_verdicts: dict[str, Sequence[bool]],
    prec_verdicts: dict[str, Sequence[bool]],
    n_units: int = 4,
    annotator: AnnotatorId = JUDGE,
) -> RecordGraph:
    """One news explanation per distinct prefix in the cf ids, verdict lists
    per cf keyed by cf id like 'e1-cf0'."""
    expl_ids = sorted({cf_id.rsplit("-cf", 1)[0] for cf_id in sim_verdicts})
    graph = RecordGraph()
    for expl_id in expl_ids:
        graph.explanations.append(make_explanation(expl_id))
        units = make_units(expl_id, [UnitCategory.GENERAL] * n_units)
        graph.units.extend(units)
        expl_cfs = sorted(cf_id for cf_id in sim_verdicts if cf_id.startswith(expl_id + "-cf"))
        for i, cf_id in enumerate(expl_cfs):
            graph.counterfactuals.append(Counterfactual(
                cf_id=cf_id, explanation_id=expl_id,
                text=f"text of {cf_id}", index=i,
            ))
            graph.outputs.append(CounterfactualOutput(
                cf_id=cf_id, text=f"output of {cf_id}"
            ))
            for unit, verdict in zip(units, sim_verdicts[cf_id]):
                graph.annotations.append(annotate(
                    annotator, cf_id, unit.unit_id,
                    AnnotationTarget.COUNTERFACTUAL, verdict,
                ))
            for unit, verdict in zip(units, prec_verdicts.get(cf_id, [])):
                graph.annotations.append(annotate(
                    annotator, cf_id, unit.unit_id,
                    AnnotationTarget.COUNTERFACTUAL_OUTPUT, verdict,
                ))
    return graph


def random_graph(rng: random.Random) -> tuple[RecordGraph, AnnotatorId, dict]:
    """Small randomized run: <=5 explanations x <=5 counterfactuals x <=6
    units, random verdicts with occasional gaps, random cf embeddings."""
    task = rng.choice(list(TaskKind))
    graph = RecordGraph()
    embeddings: dict[str, list[float]] = {}
    for e in range(rng.randint(1, 5)):
        expl_id = f"e{e}"
        graph.explanations.append(make_explanation(expl_id, task=task))
        n_units = rng.randint(1, 6)
        if task is TaskKind.NEWS_SUMMARIZATION:
            categories = [UnitCategory.GENERAL] * n_units
        else:
            categories = [
                rng.choice([UnitCategory.PATIENT_INFORMATION, UnitCategory.SUGGESTION])
                for _ in range(n_units)
            ]
        units = make_units(expl_id, categories)
        graph.units.extend(units)
        for cf in make_cfs(expl_id, rng.randint(1, 5)):
            graph.counterfactuals.append(cf)
            graph.outputs.append(CounterfactualOutput(
                cf_id=cf.cf_id, text=f"output of {cf.cf_id}"
            ))
            if rng.random() < 0.9:
                embeddings[cf.cf_id] = [rng.uniform(0.05, 1.0) for _ in range(4)]
            for unit in units:
                for target in AnnotationTarget:
                    if task is TaskKind.MEDICAL_SUGGESTION:
                        wanted = (
                            UnitCategory.PATIENT_INFORMATION
                            if target is AnnotationTarget.COUNTERFACTUAL
                            else UnitCategory.SUGGESTION
                        )
                        if unit.category is not wanted:
                            continue
                    if rng.random() < 0.08:
                        continue  # occasional missing verdict
                    graph.annotations.append(annotate(
                        JUDGE, cf.cf_id, unit.unit_id, target,
                        rng.random() < 0.75,
                    ))
    return graph, JUDGE, embeddings
