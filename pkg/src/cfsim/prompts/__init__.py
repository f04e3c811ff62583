"""Per-stage, per-task prompt templates and response parsers.

Templates are versioned data files under `templates/<task>/<stage>.txt`: a
front-matter header (stage/task/version) followed by a `---` line and the
body, with `$name` placeholders. The texts are this repo's own; they are
faithful to the described intent of each stage, not to any particular
published wording.

All parsers are total over arbitrary text: they return a value or raise a
typed ParseError carrying the raw response, never crash.
"""

from __future__ import annotations

import logging
import re
from enum import Enum
from pathlib import Path
from string import Template
from typing import Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict

from ..errors import ParseError, RenderError, VerdictParseError
from ..gateway import ChatMessage
from ..records import AtomicUnit, ExplanationMethod, TaskKind, UnitCategory

log = logging.getLogger(__name__)

TEMPLATE_ROOT = Path(__file__).parent / "templates"


class PromptStage(str, Enum):
    EXPLAIN_COT = "explain_cot"
    EXPLAIN_POSTHOC = "explain_posthoc"
    GEN_COUNTERFACTUAL = "gen_counterfactual"
    PARSE_EXPLANATION = "parse_explanation"
    GEN_CF_OUTPUT = "gen_cf_output"
    JUDGE_SIMULATABILITY = "judge_simulatability"
    JUDGE_PRECISION = "judge_precision"


#: Stages whose outputs are free generation; the rest parse or judge and run
#: near-deterministically.
GENERATION_STAGES = frozenset(
    {PromptStage.EXPLAIN_COT, PromptStage.EXPLAIN_POSTHOC,
     PromptStage.GEN_COUNTERFACTUAL, PromptStage.GEN_CF_OUTPUT}
)


class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    stage: PromptStage
    task: TaskKind
    body: str
    version: str


def load_template(
    stage: PromptStage, task: TaskKind, root: Optional[Union[str, Path]] = None
) -> PromptTemplate:
    """Read one template file, checking its front-matter against the path."""
    path = Path(root or TEMPLATE_ROOT) / task.value / f"{stage.value}.txt"
    text = path.read_text(encoding="utf-8")
    if "\n---\n" not in text:
        raise ParseError(f"template {path} has no front-matter separator", text)
    header, body = text.split("\n---\n", 1)
    fields = {}
    for line in header.splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            fields[key.strip()] = value.strip()
    if fields.get("stage") != stage.value or fields.get("task") != task.value:
        raise ParseError(
            f"template {path} front-matter ({fields.get('stage')}/{fields.get('task')}) "
            f"does not match its path", text,
        )
    return PromptTemplate(
        stage=stage, task=task, body=body, version=fields.get("version", "0")
    )


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> list[ChatMessage]:
    """Substitute placeholders deterministically; no truncation.

    Raises RenderError naming the placeholder if any `$name` in the body is
    unbound.
    """
    try:
        content = Template(template.body).substitute(bindings)
    except KeyError as exc:
        raise RenderError(
            f"template {template.task.value}/{template.stage.value} has unbound "
            f"placeholder {exc.args[0]!r}"
        ) from exc
    except ValueError as exc:
        raise RenderError(
            f"template {template.task.value}/{template.stage.value}: {exc}"
        ) from exc
    return [ChatMessage(role="user", content=content)]


_SECTION_RE = {
    "OUTPUT": re.compile(r"\[OUTPUT\](.*?)\[/OUTPUT\]", re.DOTALL),
    "EXPLANATION": re.compile(r"\[EXPLANATION\](.*?)\[/EXPLANATION\]", re.DOTALL),
}


def parse_explanation_response(
    stage_output: str, method: ExplanationMethod
) -> tuple[str, str]:
    """Split an explain-stage response into (output_text, explanation_text).

    Chain-of-thought places the explanation before the output and post-hoc
    after, but the sections are labeled, so the parsed pair is identical in
    shape regardless of order.
    """
    del method  # order-insensitive by contract
    sections: dict[str, str] = {}
    for name, pattern in _SECTION_RE.items():
        matches = pattern.findall(stage_output)
        if not matches:
            raise ParseError(f"response is missing the {name} section", stage_output)
        if len(matches) > 1:
            raise ParseError(f"response has {len(matches)} {name} sections", stage_output)
        text = matches[0].strip()
        if not text:
            raise ParseError(f"the {name} section is empty", stage_output)
        sections[name] = text
    return sections["OUTPUT"], sections["EXPLANATION"]


_ITEM_START_RE = re.compile(r"^\s*\d+[.)]\s*(.*)$")


def parse_counterfactual_list(
    stage_output: str, expected_k: int
) -> tuple[list[str], bool]:
    """Collect the numbered counterfactual texts from a generation response.

    Returns (texts, shortfall). Fewer than expected_k parsed items is a soft
    outcome flagged to the caller; zero parseable items is a parse error.
    Extra items beyond expected_k are dropped.
    """
    if expected_k < 1:
        raise ValueError("expected_k must be >= 1")
    items: list[list[str]] = []
    for line in stage_output.splitlines():
        match = _ITEM_START_RE.match(line)
        if match:
            items.append([match.group(1)])
        elif items and line.strip():
            items[-1].append(line.strip())
    texts = [" ".join(part for part in item if part).strip() for item in items]
    texts = [t for t in texts if t]
    if not texts:
        raise ParseError("no numbered counterfactuals found", stage_output)
    texts = texts[:expected_k]
    return texts, len(texts) < expected_k


_BULLET_RE = re.compile(r"^\s*[-*•]\s*(.*)$")
_MEDICAL_HEADERS = {
    "patient information": UnitCategory.PATIENT_INFORMATION,
    "patient details": UnitCategory.PATIENT_INFORMATION,
    "suggested actions": UnitCategory.SUGGESTION,
    "suggestions": UnitCategory.SUGGESTION,
}


def parse_unit_list(
    stage_output: str, task: TaskKind, explanation_id: str
) -> list[AtomicUnit]:
    """Turn a parse-explanation response into AtomicUnits.

    Summarization bullets all become `general` units. Medical bullets take
    the category of the group header above them ("Patient Information:" /
    "Suggested Actions:"); a medical response with no recognizable header is
    a parse error. Empty bullets are skipped and logged. Ordinals follow
    listing order.
    """
    category: Optional[UnitCategory] = (
        UnitCategory.GENERAL if task is TaskKind.NEWS_SUMMARIZATION else None
    )
    saw_header = False
    units: list[AtomicUnit] = []
    for line in stage_output.splitlines():
        stripped = line.strip().rstrip(":").lower()
        if task is TaskKind.MEDICAL_SUGGESTION and stripped in _MEDICAL_HEADERS:
            category = _MEDICAL_HEADERS[stripped]
            saw_header = True
            continue
        match = _BULLET_RE.match(line)
        if not match:
            continue
        text = match.group(1).strip()
        if not text:
            log.warning("skipping empty bullet in units for %s", explanation_id)
            continue
        if category is None:
            log.warning("skipping bullet before any group header for %s", explanation_id)
            continue
        units.append(AtomicUnit(
            unit_id=f"{explanation_id}-u{len(units)}",
            explanation_id=explanation_id,
            text=text,
            category=category,
            ordinal=len(units),
        ))
    if task is TaskKind.MEDICAL_SUGGESTION and not saw_header:
        raise ParseError("medical unit list has no group headers", stage_output)
    if not units:
        raise ParseError("no units found in parse response", stage_output)
    return units


_VERDICT_RE = re.compile(r"^[^a-zA-Z]*(yes|no)\b", re.IGNORECASE)


def parse_judge_verdict(stage_output: str) -> bool:
    """Map a case-insensitive leading YES/NO token to a boolean."""
    match = _VERDICT_RE.match(stage_output)
    if not match:
        raise VerdictParseError("judge response has no leading YES/NO", stage_output)
    return match.group(1).lower() == "yes"
