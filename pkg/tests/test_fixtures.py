"""Guards that the committed fixtures match what the current templates and
scripted model would record; template drift must fail here, not mid-replay."""

import json
from pathlib import Path

import pytest

import fixture_builder
from fixture_builder import MEDICAL_INPUTS, NEWS_INPUTS, base_config, record_transcript

FIXTURES = Path(__file__).parent / "fixtures"


def normalized_transcript(path: Path) -> list[tuple[str, str, object]]:
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        payload = json.loads(line)
        entries.append((payload["key"], payload["kind"], payload["response"]))
    return entries


@pytest.mark.parametrize("name,cfg,inputs", [
    ("news", base_config(run_id="news-fixture"), NEWS_INPUTS),
    ("medical", base_config(task="medical_suggestion", run_id="medical-fixture"),
     MEDICAL_INPUTS),
    ("sanity", base_config(task="medical_suggestion", run_id="sanity-fixture",
                           sanity_conditioned=True), MEDICAL_INPUTS),
])
def test_committed_transcript_is_fresh(tmp_path, name, cfg, inputs):
    rebuilt = tmp_path / "transcript.jsonl"
    record_transcript(cfg, inputs, rebuilt)
    committed = FIXTURES / name / "transcript.jsonl"
    assert normalized_transcript(rebuilt) == normalized_transcript(committed), (
        f"fixture {name} is stale; rerun tests/fixture_builder.py"
    )


def test_committed_inputs_match_builder():
    for name, inputs in (("news", NEWS_INPUTS), ("medical", MEDICAL_INPUTS),
                         ("sanity", MEDICAL_INPUTS), ("sweep", NEWS_INPUTS)):
        lines = (FIXTURES / name / "inputs.jsonl").read_text().splitlines()
        assert [json.loads(l) for l in lines] == [i.model_dump() for i in inputs]
