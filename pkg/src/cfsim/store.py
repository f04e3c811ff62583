"""Append-only persistence of the record graph, one directory per run.

Layout: `<root>/<run_id>/{manifest.json, explanations.jsonl, units.jsonl,
counterfactuals.jsonl, outputs.jsonl, annotations.jsonl, audits.jsonl,
transcript.jsonl}`. Each batch append rewrites the file via a temp file and
an atomic rename, so a crash can never leave a half-written line. Records
whose ids already exist are rejected as duplicates, not duplicated, which
makes appends idempotent under pipeline resume. Annotation and audit rows
have no id: they are always appended and resolved last-wins at load time.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from filelock import FileLock
from pydantic import BaseModel, ValidationError

from .config import SCHEMA_VERSION, RunManifest
from .errors import LoadError, RecordValidationError, SchemaVersionError, StoreError
from .records import (
    AtomicUnit,
    Counterfactual,
    CounterfactualOutput,
    ExplanationRecord,
    ParseAudit,
    RecordGraph,
    UnitAnnotation,
    validate_record_graph,
)

log = logging.getLogger(__name__)

# kind -> (model, key extractor or None for always-append)
KIND_SPECS: dict[str, tuple[type[BaseModel], Optional[Callable[[BaseModel], str]]]] = {
    "explanations": (ExplanationRecord, lambda r: r.id),
    "units": (AtomicUnit, lambda r: r.unit_id),
    "counterfactuals": (Counterfactual, lambda r: r.cf_id),
    "outputs": (CounterfactualOutput, lambda r: r.cf_id),
    "annotations": (UnitAnnotation, None),
    "audits": (ParseAudit, None),
}

MANIFEST_FILE = "manifest.json"
TRANSCRIPT_FILE = "transcript.jsonl"


class RunStore:
    """Single-run store. One writer per run (advisory lock file)."""

    def __init__(self, root: Union[str, Path], run_id: str):
        self.root = Path(root)
        self.run_id = run_id
        self.run_dir = self.root / run_id
        self._file_lock = FileLock(str(self.run_dir / ".lock"))
        self._mutex = threading.Lock()

    def exists(self) -> bool:
        return self.run_dir.is_dir()

    def ensure_dir(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def path_for(self, kind: str) -> Path:
        if kind not in KIND_SPECS:
            raise StoreError(f"unknown record kind {kind!r}")
        return self.run_dir / f"{kind}.jsonl"

    @property
    def transcript_path(self) -> Path:
        return self.run_dir / TRANSCRIPT_FILE

    def lock(self) -> FileLock:
        """Advisory writer lock; hold it for the duration of a writing command."""
        self.ensure_dir()
        return self._file_lock

    def append(self, kind: str, records: Sequence[Union[BaseModel, dict]]) -> int:
        """Validate and append a batch; all-or-nothing; returns rows written."""
        if kind not in KIND_SPECS:
            raise StoreError(f"unknown record kind {kind!r}")
        model, key_fn = KIND_SPECS[kind]
        validated: list[BaseModel] = []
        for i, record in enumerate(records):
            if isinstance(record, model):
                validated.append(record)
                continue
            if isinstance(record, BaseModel):
                raise RecordValidationError(
                    f"{kind} batch item {i} is a {type(record).__name__}, "
                    f"expected {model.__name__}"
                )
            try:
                validated.append(model.model_validate(record))
            except ValidationError as exc:
                raise RecordValidationError(
                    f"{kind} batch item {i} is invalid: {exc}"
                ) from exc

        self.ensure_dir()
        with self._mutex, self._file_lock:
            path = self.path_for(kind)
            existing = path.read_text(encoding="utf-8") if path.exists() else ""
            seen: set[str] = set()
            if key_fn is not None and existing:
                for line in existing.splitlines():
                    if line.strip():
                        seen.add(key_fn(model.model_validate_json(line)))
            lines: list[str] = []
            for record in validated:
                if key_fn is not None:
                    key = key_fn(record)
                    if key in seen:
                        continue
                    seen.add(key)
                lines.append(record.model_dump_json())
            if lines:
                self._write_atomic(path, existing + "".join(l + "\n" for l in lines))
            return len(lines)

    def _write_atomic(self, path: Path, content: str) -> None:
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            with tmp.open("w", encoding="utf-8") as handle:
                handle.write(content)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise StoreError(f"cannot write {path}: {exc}") from exc

    def save_manifest(self, manifest: RunManifest) -> None:
        self.ensure_dir()
        with self._mutex, self._file_lock:
            self._write_atomic(
                self.run_dir / MANIFEST_FILE,
                json.dumps(manifest.model_dump(mode="json"), indent=2) + "\n",
            )

    def load_manifest(self) -> Optional[RunManifest]:
        path = self.run_dir / MANIFEST_FILE
        if not path.exists():
            return None
        try:
            manifest = RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise LoadError(f"bad manifest: {exc}", path=str(path)) from exc
        if manifest.schema_version > SCHEMA_VERSION:
            raise SchemaVersionError(
                f"run {self.run_id} has schema {manifest.schema_version}, "
                f"this build supports <= {SCHEMA_VERSION}"
            )
        return manifest

    def load_kind(self, kind: str) -> list[BaseModel]:
        model, _ = KIND_SPECS[kind]
        path = self.path_for(kind)
        if not path.exists():
            return []
        out: list[BaseModel] = []
        with path.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.endswith("\n"):
                    raise LoadError(
                        f"truncated line in {path.name}", path=str(path), line_no=line_no
                    )
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(model.model_validate_json(line))
                except ValidationError as exc:
                    raise LoadError(
                        f"bad {kind} line: {exc}", path=str(path), line_no=line_no
                    ) from exc
        return out

    def load_graph(self) -> RecordGraph:
        """Parse every record file into one graph. Missing files are empty."""
        return RecordGraph(
            explanations=self.load_kind("explanations"),
            units=self.load_kind("units"),
            counterfactuals=self.load_kind("counterfactuals"),
            outputs=self.load_kind("outputs"),
            annotations=self.load_kind("annotations"),
            audits=self.load_kind("audits"),
        )


def load_run(root: Union[str, Path], run_id: str) -> tuple[RecordGraph, Optional[RunManifest]]:
    """Load a run's full record graph and manifest.

    The graph is validated on load; violations are data, not failures, so
    they are logged rather than raised.
    """
    store = RunStore(root, run_id)
    if not store.exists():
        raise StoreError(f"run directory {store.run_dir} does not exist")
    graph = store.load_graph()
    for violation in validate_record_graph(graph):
        log.warning("run %s: %s %s: %s", run_id, violation.kind,
                    violation.record, violation.message)
    return graph, store.load_manifest()
