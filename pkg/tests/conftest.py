from __future__ import annotations

from pathlib import Path

from cfsim.config import InputDoc, RunConfig, RunManifest
from cfsim.pipeline import Pipeline
from cfsim.store import RunStore

from scripted_model import scripted_gateway


def build_run(root: Path, cfg: RunConfig, inputs: list[InputDoc]) -> RunManifest:
    """Run the pipeline against the scripted model, recording the transcript
    into the run directory so later report/service calls replay from it."""
    run_id = cfg.run_id or "test-run"
    store = RunStore(root, run_id)
    store.ensure_dir()
    gateway = scripted_gateway(recorder_path=store.transcript_path)
    manifest = Pipeline(cfg, store, gateway).run(inputs)
    graph = store.load_graph()
    gateway.map_embed([cf.text for cf in graph.counterfactuals],
                      cfg.embed_model_id)
    return manifest
