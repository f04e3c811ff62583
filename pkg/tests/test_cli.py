import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from cfsim.cli import main
from cfsim.config import load_run_config
from cfsim.errors import ConfigError
from cfsim.records import AnnotationTarget, AnnotatorId, AnnotatorKind
from cfsim.store import RunStore

from conftest import build_run
from fixture_builder import NEWS_INPUTS, base_config

FIXTURES = Path(__file__).parent / "fixtures"


def write_cli_config(tmp_path, fixture: str, **overrides) -> tuple[Path, Path]:
    fixture_dir = FIXTURES / fixture
    cfg = json.loads((fixture_dir / "config.json").read_text())
    cfg["gateway"]["transcript_path"] = str(fixture_dir / "transcript.jsonl")
    cfg.update(overrides)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(cfg))
    return config_path, fixture_dir / "inputs.jsonl"


class TestRunCommand:
    def test_replay_run_and_noop_rerun(self, tmp_path):
        config_path, inputs_path = write_cli_config(tmp_path, "news")
        runner = CliRunner()
        args = ["run", "--config", str(config_path), "--inputs", str(inputs_path),
                "--store", str(tmp_path / "runs")]
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        assert "run_id: news-fixture" in result.output
        assert "annotations: 48 ok" in result.output
        assert "finished: True" in result.output

        rerun = runner.invoke(main, args)
        assert rerun.exit_code == 0
        assert "finished: True" in rerun.output

    def test_invalid_k_rejected(self, tmp_path):
        config_path, inputs_path = write_cli_config(tmp_path, "news",
                                                    counterfactuals_per_explanation=0)
        result = CliRunner().invoke(main, [
            "run", "--config", str(config_path), "--inputs", str(inputs_path),
            "--store", str(tmp_path / "runs"),
        ])
        assert result.exit_code != 0
        assert "counterfactuals_per_explanation" in result.output

    def test_toml_config_accepted(self, tmp_path):
        config_path = tmp_path / "config.toml"
        config_path.write_text(
            'task = "news_summarization"\n'
            'method = "chain_of_thought"\n'
            'model_id = "m"\njudge_model_id = "j"\nembed_model_id = "e"\n'
            'num_inputs = 2\nseed = 3\n'
        )
        cfg = load_run_config(config_path)
        assert cfg.seed == 3
        assert cfg.counterfactuals_per_explanation == 3  # default

    def test_bad_config_raises_config_error(self, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text('{"task": "news_summarization", "typo_key": 1}')
        with pytest.raises(ConfigError):
            load_run_config(config_path)

    def test_unknown_gateway_adapter_rejected(self, tmp_path):
        from cfsim.pipeline import build_gateway
        from fixture_builder import base_config

        cfg = base_config(transport="live")
        cfg = cfg.model_copy(update={"gateway": cfg.gateway.model_copy(
            update={"endpoint_url": "http://x.test", "adapter": "mystery"}
        )})
        with pytest.raises(ConfigError, match="adapter"):
            build_gateway(cfg, RunStore(tmp_path, "r"))


class TestReportCommand:
    def test_sanity_fixture_reports_exact_one(self, tmp_path):
        config_path, inputs_path = write_cli_config(tmp_path, "sanity")
        runner = CliRunner()
        store = str(tmp_path / "runs")
        assert runner.invoke(main, ["run", "--config", str(config_path),
                                    "--inputs", str(inputs_path),
                                    "--store", store]).exit_code == 0
        result = runner.invoke(main, ["report", "sanity-fixture", "--store", store])
        assert result.exit_code == 0, result.output
        assert "1.00" in result.output

    def test_csv_format(self, tmp_path):
        config_path, inputs_path = write_cli_config(tmp_path, "news")
        runner = CliRunner()
        store = str(tmp_path / "runs")
        runner.invoke(main, ["run", "--config", str(config_path),
                             "--inputs", str(inputs_path), "--store", store])
        result = runner.invoke(main, ["report", "news-fixture", "--store", store,
                                      "--format", "csv"])
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert lines[0].startswith("explanation_id,cf_id,")
        assert len(lines) == 1 + 6  # header + one row per sample

    def test_threshold_flag_changes_samples(self, tmp_path):
        config_path, inputs_path = write_cli_config(tmp_path, "news")
        runner = CliRunner()
        store = str(tmp_path / "runs")
        runner.invoke(main, ["run", "--config", str(config_path),
                             "--inputs", str(inputs_path), "--store", store])
        strict = runner.invoke(main, ["report", "news-fixture", "--store", store,
                                      "--format", "json"])
        relaxed = runner.invoke(main, ["report", "news-fixture", "--store", store,
                                       "--format", "json", "--threshold", "0.75"])
        assert json.loads(strict.output)["n_samples"] == 4
        assert json.loads(relaxed.output)["n_samples"] == 6

    def test_missing_run_exits_nonzero(self, tmp_path):
        result = CliRunner().invoke(main, ["report", "ghost",
                                           "--store", str(tmp_path)])
        assert result.exit_code != 0


class TestKappaCommand:
    def test_contingency_fixture_via_cli(self, tmp_path):
        manifest = build_run(tmp_path / "runs",
                             base_config(run_id="kap", num_inputs=1),
                             NEWS_INPUTS[:1])
        store = RunStore(tmp_path / "runs", manifest.run_id)
        graph = store.load_graph()
        items = [(graph.counterfactuals[i].cf_id, graph.units[j].unit_id)
                 for i, j in ((0, 0), (0, 1), (1, 0), (1, 1))]
        verdicts_a = [True, True, False, False]
        verdicts_b = [True, False, False, False]
        rows = []
        for name, verdicts in (("a", verdicts_a), ("b", verdicts_b)):
            annotator = AnnotatorId(kind=AnnotatorKind.HUMAN, name=name)
            for (cf_id, unit_id), verdict in zip(items, verdicts):
                rows.append(dict(
                    annotator=annotator.model_dump(), cf_id=cf_id, unit_id=unit_id,
                    target=AnnotationTarget.COUNTERFACTUAL.value, verdict=verdict,
                ))
        store.append("annotations", rows)

        result = CliRunner().invoke(main, ["kappa", "kap",
                                           "--store", str(tmp_path / "runs")])
        assert result.exit_code == 0, result.output
        assert "0.50 (n=4)" in result.output
        lines = [l for l in result.output.splitlines() if l.startswith("human:a")]
        assert lines[0].split()[1] == "-"  # diagonal dash

    def test_no_overlap_exits_nonzero(self, tmp_path):
        store = RunStore(tmp_path, "lonely")
        store.ensure_dir()
        result = CliRunner().invoke(main, ["kappa", "lonely", "--store", str(tmp_path)])
        assert result.exit_code != 0


class TestSweepCommand:
    def test_two_k_rows(self, tmp_path):
        config_path, inputs_path = write_cli_config(tmp_path, "sweep")
        result = CliRunner().invoke(main, [
            "sweep", "--config", str(config_path), "--inputs", str(inputs_path),
            "--k", "3,5,3", "--store", str(tmp_path / "runs"),
        ])
        assert result.exit_code == 0, result.output
        assert "k=3" in result.output and "k=5" in result.output
        assert result.output.count("k=3") == 1  # duplicate deduplicated
        total_line = next(l for l in result.output.splitlines()
                          if l.startswith("Total generated"))
        assert "6" in total_line and "10" in total_line


class TestServeCommand:
    def test_unknown_run_exits_nonzero(self, tmp_path):
        result = CliRunner().invoke(main, ["serve", "ghost",
                                           "--store", str(tmp_path)])
        assert result.exit_code != 0

    def test_bad_bind_rejected(self, tmp_path):
        build_run(tmp_path, base_config(run_id="srv", num_inputs=1), NEWS_INPUTS[:1])
        result = CliRunner().invoke(main, ["serve", "srv", "--store", str(tmp_path),
                                           "--bind", "nonsense"])
        assert result.exit_code != 0
