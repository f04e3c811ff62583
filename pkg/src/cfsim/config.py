"""Run configuration and the per-run manifest.

A run is configured by a single TOML or JSON file whose top-level keys are
the RunConfig fields (plus the nested `gateway` block for endpoint URLs,
model wiring, and retry policy). Every knob of the evaluation (task, method,
counterfactuals per explanation, transport, sanity mode, seed) is config,
never a code edit.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .gateway import canonical_json
from .records import ExplanationMethod, TaskKind

SCHEMA_VERSION = 1

#: The five pipeline stages, in execution order.
STAGES = ("explanations", "counterfactuals", "parse_units", "outputs", "annotations")


class TransportKind(str, Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


class GatewayConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    endpoint_url: str = ""
    api_key_env: str = "CFSIM_API_KEY"
    # upstream wire dialect; currently only the common chat-completions +
    # embeddings shape is implemented
    adapter: str = "openai_compat"
    max_retries: int = Field(default=2, ge=0)
    backoff_s: float = Field(default=0.5, ge=0.0)
    max_concurrency: int = Field(default=4, ge=1)
    # The judging/parsing stages must be near-deterministic; generation keeps
    # some diversity by default.
    temperature_generation: float = Field(default=0.7, ge=0.0)
    temperature_judge: float = Field(default=0.0, ge=0.0)
    max_tokens: int = Field(default=1024, gt=0)
    transcript_path: str = ""


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    task: TaskKind
    method: ExplanationMethod
    model_id: str = Field(min_length=1)
    judge_model_id: str = Field(min_length=1)
    embed_model_id: str = Field(min_length=1)
    counterfactuals_per_explanation: int = Field(default=3, ge=1, le=10)
    num_inputs: int = Field(default=1, ge=1)
    transport: TransportKind = TransportKind.REPLAY
    sanity_conditioned: bool = False
    seed: int = 0
    run_id: Optional[str] = None
    gateway: GatewayConfig = GatewayConfig()


class InputDoc(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    text: str = Field(min_length=1)


class StageCount(BaseModel):
    succeeded: int = 0
    failed: int = 0
    # Counterfactual generation may parse fewer items than requested without
    # any explanation failing outright.
    shortfall: int = 0


class RunManifest(BaseModel):
    run_id: str
    config: RunConfig
    schema_version: int = SCHEMA_VERSION
    stage_counts: dict[str, StageCount] = Field(default_factory=dict)
    stages_done: list[str] = Field(default_factory=list)
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None

    def is_finished(self) -> bool:
        return all(stage in self.stages_done for stage in STAGES)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Parse a TOML or JSON config file into a validated RunConfig."""
    path = Path(path)
    try:
        if path.suffix == ".toml":
            try:
                import tomllib  # py311+
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        else:
            data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def load_inputs(path: Union[str, Path]) -> list[InputDoc]:
    """Read newline-delimited JSON inputs of shape {id, text}."""
    docs: list[InputDoc] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                docs.append(InputDoc.model_validate_json(line))
            except ValidationError as exc:
                raise ConfigError(f"bad input line {line_no} in {path}: {exc}") from exc
    if not docs:
        raise ConfigError(f"no inputs in {path}")
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate input ids in {path}")
    return docs


def derive_run_id(cfg: RunConfig, inputs: list[InputDoc]) -> str:
    """Deterministic run id from config and inputs, unless the config names one."""
    if cfg.run_id:
        return cfg.run_id
    payload = canonical_json({
        "config": cfg.model_dump(mode="json", exclude={"run_id"}),
        "inputs": [d.model_dump() for d in inputs],
    })
    return "run-" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]
