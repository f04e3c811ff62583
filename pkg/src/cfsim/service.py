"""HTTP service for human annotation.

Serves per-unit Y/N tasks derived from a run's record graph, stores verdicts
and parse audits, and reports per-annotator progress. Task derivation is a
pure function of the graph: restarting the service never changes task ids or
counts. Pipeline-produced records are never mutated; the service only appends
annotations and audits, which makes every stored verdict immediately visible
to the report layer.

Annotator identity is a signed session token over a configured roster; this
is a lab tool, not an account system.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from pathlib import Path
from typing import Optional, Union

from fastapi import FastAPI, Header, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, ConfigDict, Field

from .errors import StoreError
from .records import (
    AnnotationTarget,
    AnnotatorId,
    AnnotatorKind,
    ParseAudit,
    ParseErrorKind,
    RecordGraph,
    TaskKind,
    UnitAnnotation,
    relevant_units,
)
from .store import RunStore


class TaskContext(BaseModel):
    model_config = ConfigDict(frozen=True)

    explanation_text: str
    unit_text: str
    unit_category: str
    counterfactual_text: str
    counterfactual_output_text: Optional[str] = None


class AnnotationTask(BaseModel):
    """Everything an annotator needs for one verdict; no client-side lookups."""

    model_config = ConfigDict(frozen=True)

    task_id: str
    explanation_id: str
    cf_id: str
    unit_id: str
    target: AnnotationTarget
    context: TaskContext
    status: str  # open | done


class AnnotationSubmission(BaseModel):
    annotator: AnnotatorId
    cf_id: str
    unit_id: str
    target: AnnotationTarget
    verdict: bool
    note: Optional[str] = None


class AuditSubmission(BaseModel):
    explanation_id: str
    parsed_ok: bool
    error_kind: Optional[ParseErrorKind] = None
    note: Optional[str] = None


class SessionInfo(BaseModel):
    annotator: str
    token: str


def derive_tasks(graph: RecordGraph) -> list[tuple[str, str, str, AnnotationTarget]]:
    """All (task_id, cf_id, unit_id, target) tuples, explanation-grouped then
    counterfactual-grouped, simulatability before precision."""
    tasks: list[tuple[str, str, str, AnnotationTarget]] = []
    for expl in graph.explanations:
        units = graph.units_for(expl.id)
        for cf in graph.counterfactuals_for(expl.id):
            for target in (AnnotationTarget.COUNTERFACTUAL,
                           AnnotationTarget.COUNTERFACTUAL_OUTPUT):
                if (target is AnnotationTarget.COUNTERFACTUAL_OUTPUT
                        and graph.output_for(cf.cf_id) is None):
                    continue
                for unit in relevant_units(expl.task, units, target):
                    task_id = f"t-{cf.cf_id}-{unit.unit_id}-{target.value}"
                    tasks.append((task_id, cf.cf_id, unit.unit_id, target))
    return tasks


class ServiceState:
    """Per-process cache of RunStore instances plus the session secret."""

    def __init__(self, store_root: Union[str, Path],
                 roster: Optional[list[str]] = None,
                 secret: Optional[str] = None):
        self.store_root = Path(store_root)
        self.roster = roster or []
        self.secret = secret or secrets.token_hex(16)
        self._stores: dict[str, RunStore] = {}

    def store(self, run_id: str) -> RunStore:
        if run_id not in self._stores:
            store = RunStore(self.store_root, run_id)
            if not store.exists():
                raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
            self._stores[run_id] = store
        return self._stores[run_id]

    def token_for(self, name: str) -> str:
        digest = hmac.new(self.secret.encode(), name.encode(), hashlib.sha256)
        return digest.hexdigest()[:32]

    def check_token(self, name: str, token: Optional[str]) -> None:
        if not self.roster:
            return
        if name not in self.roster:
            raise HTTPException(status_code=403, detail=f"{name} is not on the roster")
        if not token or not hmac.compare_digest(token, self.token_for(name)):
            raise HTTPException(status_code=403, detail="bad or missing session token")


def create_app(
    store_root: Union[str, Path],
    roster: Optional[list[str]] = None,
    secret: Optional[str] = None,
    ui_dir: Optional[Union[str, Path]] = None,
    cors_origins: Optional[list[str]] = None,
) -> FastAPI:
    state = ServiceState(store_root, roster=roster, secret=secret)
    app = FastAPI(title="cfsim annotation service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def load_graph(run_id: str) -> tuple[RunStore, RecordGraph]:
        store = state.store(run_id)
        try:
            return store, store.load_graph()
        except StoreError as exc:
            raise HTTPException(status_code=500, detail=str(exc)) from exc

    @app.get("/session", response_model=SessionInfo)
    def open_session(annotator: str = Query(min_length=1)) -> SessionInfo:
        if state.roster and annotator not in state.roster:
            raise HTTPException(status_code=403,
                                detail=f"{annotator} is not on the roster")
        return SessionInfo(annotator=annotator, token=state.token_for(annotator))

    @app.get("/runs/{run_id}/tasks", response_model=list[AnnotationTask])
    def list_tasks(
        run_id: str,
        annotator: str = Query(min_length=1),
        status: Optional[str] = Query(default=None, pattern="^(open|done)$"),
    ) -> list[AnnotationTask]:
        _, graph = load_graph(run_id)
        annotator_id = AnnotatorId(kind=AnnotatorKind.HUMAN, name=annotator)
        resolved = graph.resolved_annotations()
        out: list[AnnotationTask] = []
        for task_id, cf_id, unit_id, target in derive_tasks(graph):
            done = (annotator_id.key(), cf_id, unit_id, target.value) in resolved
            task_status = "done" if done else "open"
            if status and task_status != status:
                continue
            cf = graph.counterfactual(cf_id)
            unit = graph.unit(unit_id)
            expl = graph.explanation(cf.explanation_id)
            output = graph.output_for(cf_id)
            out.append(AnnotationTask(
                task_id=task_id, explanation_id=cf.explanation_id,
                cf_id=cf_id, unit_id=unit_id, target=target,
                status=task_status,
                context=TaskContext(
                    explanation_text=expl.explanation_text,
                    unit_text=unit.text,
                    unit_category=unit.category.value,
                    counterfactual_text=cf.text,
                    counterfactual_output_text=(
                        output.text
                        if target is AnnotationTarget.COUNTERFACTUAL_OUTPUT and output
                        else None
                    ),
                ),
            ))
        return out

    @app.post("/runs/{run_id}/annotations", response_model=UnitAnnotation)
    def submit_annotation(
        run_id: str,
        submission: AnnotationSubmission,
        x_annotator_token: Optional[str] = Header(default=None),
    ) -> UnitAnnotation:
        if submission.annotator.kind is AnnotatorKind.HUMAN:
            state.check_token(submission.annotator.name, x_annotator_token)
        store, graph = load_graph(run_id)
        cf = graph.counterfactual(submission.cf_id)
        if cf is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown counterfactual {submission.cf_id}")
        unit = graph.unit(submission.unit_id)
        if unit is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown unit {submission.unit_id}")
        expl = graph.explanation(cf.explanation_id)
        if unit.explanation_id != cf.explanation_id:
            raise HTTPException(
                status_code=422,
                detail="unit and counterfactual belong to different explanations",
            )
        if expl is not None and expl.task is TaskKind.MEDICAL_SUGGESTION:
            allowed = [
                u.unit_id for u in relevant_units(expl.task, [unit], submission.target)
            ]
            if unit.unit_id not in allowed:
                raise HTTPException(
                    status_code=422,
                    detail=f"{unit.category.value} units are not judged against "
                           f"{submission.target.value} for medical tasks",
                )
        annotation = UnitAnnotation(
            annotator=submission.annotator,
            cf_id=submission.cf_id,
            unit_id=submission.unit_id,
            target=submission.target,
            verdict=submission.verdict,
            note=submission.note,
        )
        store.append("annotations", [annotation])
        return annotation

    @app.post("/runs/{run_id}/parse-audits", response_model=ParseAudit)
    def submit_audit(run_id: str, submission: AuditSubmission) -> ParseAudit:
        store, graph = load_graph(run_id)
        if graph.explanation(submission.explanation_id) is None:
            raise HTTPException(
                status_code=404,
                detail=f"unknown explanation {submission.explanation_id}",
            )
        try:
            audit = ParseAudit(
                explanation_id=submission.explanation_id,
                parsed_ok=submission.parsed_ok,
                error_kind=submission.error_kind,
                note=submission.note,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        store.append("audits", [audit])
        return audit

    @app.get("/runs/{run_id}/progress")
    def progress(run_id: str) -> dict:
        _, graph = load_graph(run_id)
        tasks = derive_tasks(graph)
        resolved = graph.resolved_annotations()
        names = {a.key() for a in graph.annotators()}
        names.update(f"human:{name}" for name in state.roster)
        per_annotator: dict[str, dict] = {}
        for key in sorted(names):
            by_target = {
                target.value: {"done": 0, "open": 0} for target in AnnotationTarget
            }
            for _, cf_id, unit_id, target in tasks:
                done = (key, cf_id, unit_id, target.value) in resolved
                by_target[target.value]["done" if done else "open"] += 1
            per_annotator[key] = {
                "done": sum(t["done"] for t in by_target.values()),
                "open": sum(t["open"] for t in by_target.values()),
                "by_target": by_target,
            }
        return {
            "run_id": run_id,
            "total_tasks": len(tasks),
            "annotators": per_annotator,
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
