"""Five-stage evaluation pipeline over a batch of inputs.

Stages run in order (explanations, counterfactuals, unit parsing,
counterfactual outputs, LLM annotation), each committed to the store before
the next starts, so an interrupted run resumes by skipping completed stages.
Within a stage, items go through the gateway with bounded concurrency and one
bad item never aborts the batch. Under the replay transport the whole run is
a pure function of (transcript, config, inputs).

Record ids are content-addressed (`e-<input_id>`, `<expl_id>-cf<i>`,
`<expl_id>-u<ordinal>`), which is what makes reruns byte-stable.
"""

from __future__ import annotations

import logging
import os
import random
import shutil
from datetime import datetime, timezone
from typing import NamedTuple, Optional, Sequence, Union

from .config import (
    STAGES,
    GatewayConfig,
    InputDoc,
    RunConfig,
    RunManifest,
    StageCount,
    TransportKind,
    derive_run_id,
)
from .errors import CfsimError, ConfigError, ParseError, StageError, VerdictParseError
from .gateway import (
    ChatMessage,
    ChatRequest,
    Gateway,
    LiveTransport,
    ReplayTransport,
    RetryPolicy,
    TranscriptRecorder,
)
from .prompts import (
    GENERATION_STAGES,
    PromptStage,
    load_template,
    parse_explanation_response,
    parse_judge_verdict,
    parse_counterfactual_list,
    parse_unit_list,
    render,
)
from .records import (
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
    relevant_units,
)
from .store import RunStore

log = logging.getLogger(__name__)


def input_placeholder(task: TaskKind) -> str:
    return "document" if task is TaskKind.NEWS_SUMMARIZATION else "question"


def build_gateway(cfg: RunConfig, store: RunStore) -> Gateway:
    """Wire the transport named by the config to the run's transcript file."""
    gw: GatewayConfig = cfg.gateway
    if cfg.transport is TransportKind.REPLAY:
        if gw.transcript_path and not store.transcript_path.exists():
            store.ensure_dir()
            shutil.copyfile(gw.transcript_path, store.transcript_path)
        if not store.transcript_path.exists():
            raise ConfigError(
                f"replay transport needs a transcript; none at {store.transcript_path} "
                f"and gateway.transcript_path is unset"
            )
        transport = ReplayTransport.from_file(store.transcript_path)
        recorder = None
    else:
        if not gw.endpoint_url:
            raise ConfigError("live/record transport needs gateway.endpoint_url")
        if gw.adapter != "openai_compat":
            raise ConfigError(f"unknown gateway adapter {gw.adapter!r}")
        transport = LiveTransport(
            gw.endpoint_url,
            api_key=os.environ.get(gw.api_key_env, ""),
            retry=RetryPolicy(max_retries=gw.max_retries, backoff_s=gw.backoff_s),
        )
        recorder = (
            TranscriptRecorder(store.transcript_path)
            if cfg.transport is TransportKind.RECORD
            else None
        )
    return Gateway(transport, recorder=recorder, max_concurrency=gw.max_concurrency)


class Pipeline:
    """Executes the five stages for one run against one gateway."""

    def __init__(self, cfg: RunConfig, store: RunStore, gateway: Gateway):
        self.cfg = cfg
        self.store = store
        self.gateway = gateway
        self._templates = {
            stage: load_template(stage, cfg.task) for stage in PromptStage
        }

    def _request(self, stage: PromptStage, bindings: dict[str, str],
                 model_id: Optional[str] = None) -> ChatRequest:
        messages = render(self._templates[stage], bindings)
        gw = self.cfg.gateway
        temperature = (
            gw.temperature_generation if stage in GENERATION_STAGES else gw.temperature_judge
        )
        return ChatRequest(
            model_id=model_id or self.cfg.model_id,
            messages=messages,
            temperature=temperature,
            max_tokens=gw.max_tokens,
            request_tag=stage.value,
        )

    def sample_inputs(self, inputs: Sequence[InputDoc]) -> list[InputDoc]:
        """Reproducible subset selection, keeping the original input order."""
        if len(inputs) <= self.cfg.num_inputs:
            return list(inputs)
        rng = random.Random(self.cfg.seed)
        picked = sorted(rng.sample(range(len(inputs)), self.cfg.num_inputs))
        return [inputs[i] for i in picked]

    # ----- stages -------------------------------------------------------

    def stage_explanations(
        self, inputs: Sequence[InputDoc]
    ) -> tuple[list[ExplanationRecord], StageCount]:
        if not inputs:
            raise StageError("explanation stage got no inputs")
        stage = (
            PromptStage.EXPLAIN_COT
            if self.cfg.method is ExplanationMethod.CHAIN_OF_THOUGHT
            else PromptStage.EXPLAIN_POSTHOC
        )
        placeholder = input_placeholder(self.cfg.task)
        reqs = [self._request(stage, {placeholder: doc.text}) for doc in inputs]
        results = self.gateway.map_chat(reqs)
        records: list[ExplanationRecord] = []
        count = StageCount()
        for doc, result in zip(inputs, results):
            if isinstance(result, Exception):
                log.warning("explanation failed for input %s: %s", doc.id, result)
                count.failed += 1
                continue
            try:
                output_text, explanation_text = parse_explanation_response(
                    result, self.cfg.method
                )
            except ParseError as exc:
                log.warning("explanation parse failed for input %s: %s", doc.id, exc)
                count.failed += 1
                continue
            records.append(ExplanationRecord(
                id=f"e-{doc.id}",
                task=self.cfg.task,
                method=self.cfg.method,
                input_text=doc.text,
                output_text=output_text,
                explanation_text=explanation_text,
                model_id=self.cfg.model_id,
            ))
            count.succeeded += 1
        if not records:
            raise StageError("every input failed in the explanation stage")
        return records, count

    def stage_counterfactuals(
        self, explanations: Sequence[ExplanationRecord]
    ) -> tuple[list[Counterfactual], StageCount]:
        k = self.cfg.counterfactuals_per_explanation
        reqs = [
            self._request(PromptStage.GEN_COUNTERFACTUAL,
                          {"explanation": e.explanation_text, "k": str(k)})
            for e in explanations
        ]
        results = self.gateway.map_chat(reqs)
        records: list[Counterfactual] = []
        count = StageCount()
        for expl, result in zip(explanations, results):
            if isinstance(result, Exception):
                log.warning("counterfactuals failed for %s: %s", expl.id, result)
                count.failed += 1
                continue
            try:
                texts, shortfall = parse_counterfactual_list(result, k)
            except ParseError as exc:
                log.warning("counterfactual parse failed for %s: %s", expl.id, exc)
                count.failed += 1
                continue
            if shortfall:
                count.shortfall += k - len(texts)
            for i, text in enumerate(texts):
                records.append(Counterfactual(
                    cf_id=f"{expl.id}-cf{i}",
                    explanation_id=expl.id,
                    text=text,
                    index=i,
                ))
                count.succeeded += 1
        if explanations and not records:
            raise StageError("every explanation failed in the counterfactual stage")
        return records, count

    def stage_parse_units(
        self, explanations: Sequence[ExplanationRecord]
    ) -> tuple[list[AtomicUnit], StageCount]:
        reqs = [
            self._request(PromptStage.PARSE_EXPLANATION,
                          {"explanation": e.explanation_text})
            for e in explanations
        ]
        results = self.gateway.map_chat(reqs)
        units: list[AtomicUnit] = []
        count = StageCount()
        for expl, result in zip(explanations, results):
            if isinstance(result, Exception):
                log.warning("unit parsing failed for %s: %s", expl.id, result)
                count.failed += 1
                continue
            try:
                units.extend(parse_unit_list(result, self.cfg.task, expl.id))
            except ParseError as exc:
                log.warning("unit parse failed for %s: %s", expl.id, exc)
                count.failed += 1
                continue
            count.succeeded += 1
        if explanations and count.succeeded == 0:
            raise StageError("every explanation failed in the unit-parsing stage")
        return units, count

    def stage_outputs(
        self,
        explanations: Sequence[ExplanationRecord],
        counterfactuals: Sequence[Counterfactual],
    ) -> tuple[list[CounterfactualOutput], StageCount]:
        expl_by_id = {e.id: e for e in explanations}
        placeholder = input_placeholder(self.cfg.task)
        reqs = []
        for cf in counterfactuals:
            conditioning = ""
            if self.cfg.sanity_conditioned:
                expl = expl_by_id[cf.explanation_id]
                conditioning = (
                    "Base your answer on the following explanation of the intended "
                    "approach; your answer must reflect it:\n"
                    f"{expl.explanation_text}\n"
                )
            reqs.append(self._request(
                PromptStage.GEN_CF_OUTPUT,
                {placeholder: cf.text, "conditioning": conditioning},
            ))
        results = self.gateway.map_chat(reqs)
        records: list[CounterfactualOutput] = []
        count = StageCount()
        for cf, result in zip(counterfactuals, results):
            if isinstance(result, Exception):
                log.warning("output failed for %s: %s", cf.cf_id, result)
                count.failed += 1
                continue
            records.append(CounterfactualOutput(
                cf_id=cf.cf_id,
                text=result.strip(),
                conditioned_on_explanation=self.cfg.sanity_conditioned,
            ))
            count.succeeded += 1
        if counterfactuals and not records:
            raise StageError("every counterfactual failed in the output stage")
        return records, count

    def stage_annotations(self, graph: RecordGraph) -> tuple[list[UnitAnnotation], StageCount]:
        """One LLM-judge verdict per (counterfactual, relevant unit, target).

        Precision-target pairs are judged for all counterfactuals, simulatable
        or not; the report applies the simulatability threshold afterwards,
        so re-thresholding never needs re-annotation.
        """
        judge = AnnotatorId(kind=AnnotatorKind.LLM_JUDGE, name=self.cfg.judge_model_id)
        judge_stage = {
            AnnotationTarget.COUNTERFACTUAL: PromptStage.JUDGE_SIMULATABILITY,
            AnnotationTarget.COUNTERFACTUAL_OUTPUT: PromptStage.JUDGE_PRECISION,
        }
        pairs: list[tuple[Counterfactual, AtomicUnit, AnnotationTarget]] = []
        for expl in graph.explanations:
            units = graph.units_for(expl.id)
            for cf in graph.counterfactuals_for(expl.id):
                output = graph.output_for(cf.cf_id)
                for target in AnnotationTarget:
                    if target is AnnotationTarget.COUNTERFACTUAL_OUTPUT and output is None:
                        continue
                    for unit in relevant_units(expl.task, units, target):
                        pairs.append((cf, unit, target))

        def bindings_for(cf: Counterfactual, unit: AtomicUnit,
                         target: AnnotationTarget) -> dict[str, str]:
            if target is AnnotationTarget.COUNTERFACTUAL:
                return {"unit": unit.text, "counterfactual": cf.text}
            output = graph.output_for(cf.cf_id)
            assert output is not None
            return {"unit": unit.text, "output": output.text}

        reqs = [
            self._request(judge_stage[target], bindings_for(cf, unit, target),
                          model_id=self.cfg.judge_model_id)
            for cf, unit, target in pairs
        ]
        results = self.gateway.map_chat(reqs)
        records: list[UnitAnnotation] = []
        count = StageCount()
        for (cf, unit, target), result in zip(pairs, results):
            verdict: Optional[bool] = None
            if isinstance(result, str):
                try:
                    verdict = parse_judge_verdict(result)
                except VerdictParseError:
                    verdict = self._retry_verdict(cf, unit, target, bindings_for)
            if verdict is None:
                log.warning("no verdict for %s/%s/%s", cf.cf_id, unit.unit_id, target.value)
                count.failed += 1
                continue
            records.append(UnitAnnotation(
                annotator=judge, cf_id=cf.cf_id, unit_id=unit.unit_id,
                target=target, verdict=verdict,
            ))
            count.succeeded += 1
        if pairs and not records:
            raise StageError("every judge verdict failed in the annotation stage")
        return records, count

    def _retry_verdict(self, cf, unit, target, bindings_for) -> Optional[bool]:
        # One retry at temperature 0 with a terser instruction; a second
        # failure marks the annotation missing.
        stage = (
            PromptStage.JUDGE_SIMULATABILITY
            if target is AnnotationTarget.COUNTERFACTUAL
            else PromptStage.JUDGE_PRECISION
        )
        base = self._request(stage, bindings_for(cf, unit, target),
                             model_id=self.cfg.judge_model_id)
        nudged = ChatRequest(
            model_id=base.model_id,
            messages=[ChatMessage(
                role="user",
                content="Answer with YES or NO only.\n\n" + base.messages[0].content,
            )],
            temperature=0.0,
            max_tokens=base.max_tokens,
            request_tag=base.request_tag,
        )
        try:
            return parse_judge_verdict(self.gateway.complete_chat(nudged))
        except CfsimError:
            return None

    # ----- orchestration ------------------------------------------------

    def run(self, inputs: Sequence[InputDoc],
            stop_after: Optional[str] = None) -> RunManifest:
        """Execute the stages in order, committing after each.

        Stages already listed in the manifest's stages_done are skipped and
        their records come from the store, so interrupting between stages and
        rerunning never duplicates records. `stop_after` stops cleanly after
        the named stage commits (used to exercise resumption).
        """
        manifest = self.store.load_manifest()
        if manifest is None:
            manifest = RunManifest(
                run_id=self.store.run_id, config=self.cfg,
                started_at=datetime.now(timezone.utc),
            )
            self.store.save_manifest(manifest)

        sampled = self.sample_inputs(inputs)
        graph = self.store.load_graph()

        def commit(stage: str, kind: str, records, count: StageCount) -> None:
            self.store.append(kind, records)
            manifest.stage_counts[stage] = count
            manifest.stages_done.append(stage)
            self.store.save_manifest(manifest)

        for stage in STAGES:
            if stage in manifest.stages_done:
                continue
            if stage == "explanations":
                records, count = self.stage_explanations(sampled)
                graph.explanations.extend(records)
                commit(stage, "explanations", records, count)
            elif stage == "counterfactuals":
                records, count = self.stage_counterfactuals(graph.explanations)
                graph.counterfactuals.extend(records)
                commit(stage, "counterfactuals", records, count)
            elif stage == "parse_units":
                records, count = self.stage_parse_units(graph.explanations)
                graph.units.extend(records)
                commit(stage, "units", records, count)
            elif stage == "outputs":
                records, count = self.stage_outputs(
                    graph.explanations, graph.counterfactuals
                )
                graph.outputs.extend(records)
                commit(stage, "outputs", records, count)
            elif stage == "annotations":
                records, count = self.stage_annotations(graph)
                graph.annotations.extend(records)
                commit(stage, "annotations", records, count)
            if stage == stop_after:
                return manifest

        if manifest.finished_at is None and manifest.is_finished():
            manifest.finished_at = datetime.now(timezone.utc)
            self.store.save_manifest(manifest)
        return manifest


def run_full(
    cfg: RunConfig,
    inputs: Sequence[InputDoc],
    store_root: Union[str, "os.PathLike[str]"],
    stop_after: Optional[str] = None,
    run_id: Optional[str] = None,
) -> RunManifest:
    """Create or resume the run for (config, inputs) and execute it."""
    run_id = run_id or derive_run_id(cfg, list(inputs))
    store = RunStore(store_root, run_id)
    with store.lock():
        manifest = store.load_manifest()
        if manifest is not None and manifest.is_finished():
            return manifest
        gateway = build_gateway(cfg, store)
        return Pipeline(cfg, store, gateway).run(inputs, stop_after=stop_after)


class SweepOutcome(NamedTuple):
    k: int
    manifest: Optional[RunManifest]
    error: Optional[str]


def run_sweep(
    cfg: RunConfig,
    inputs: Sequence[InputDoc],
    ks: Sequence[int],
    store_root: Union[str, "os.PathLike[str]"],
) -> list[SweepOutcome]:
    """Run the pipeline once per counterfactual count, sharing stage 1.

    The first successful k's explanation records are preseeded into every
    later run, so all rows of the sweep rate the same explanations. A failed
    k becomes an error row; it never aborts the other runs.
    """
    seen: list[int] = []
    for k in ks:
        if k in seen:
            log.warning("duplicate k=%d in sweep, ignored", k)
        else:
            seen.append(k)

    outcomes: list[SweepOutcome] = []
    donor: Optional[RunStore] = None
    for k in seen:
        k_cfg = cfg.model_copy(update={
            "counterfactuals_per_explanation": k,
            "run_id": f"{cfg.run_id}-k{k}" if cfg.run_id else None,
        })
        run_id = derive_run_id(k_cfg, list(inputs))
        store = RunStore(store_root, run_id)
        if donor is not None and not store.path_for("explanations").exists():
            donor_manifest = donor.load_manifest()
            assert donor_manifest is not None
            store.ensure_dir()
            store.append("explanations", donor.load_kind("explanations"))
            manifest = RunManifest(
                run_id=run_id, config=k_cfg,
                started_at=datetime.now(timezone.utc),
                stage_counts={
                    "explanations": donor_manifest.stage_counts.get(
                        "explanations", StageCount()
                    )
                },
                stages_done=["explanations"],
            )
            store.save_manifest(manifest)
        try:
            outcomes.append(SweepOutcome(
                k, run_full(k_cfg, inputs, store_root, run_id=run_id), None
            ))
        except CfsimError as exc:
            log.warning("sweep run for k=%d failed: %s", k, exc)
            outcomes.append(SweepOutcome(k, None, str(exc)))
            continue
        if donor is None:
            donor = store
    return outcomes
