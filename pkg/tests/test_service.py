import pytest
from fastapi.testclient import TestClient

from cfsim.report import build_report
from cfsim.service import create_app
from cfsim.store import RunStore

from conftest import build_run
from fixture_builder import MEDICAL_INPUTS, NEWS_INPUTS, base_config


@pytest.fixture()
def news_run(tmp_path):
    manifest = build_run(tmp_path, base_config(run_id="news-run", num_inputs=1),
                         NEWS_INPUTS[:1])
    return tmp_path, manifest


@pytest.fixture()
def medical_run(tmp_path):
    manifest = build_run(
        tmp_path,
        base_config(run_id="med-run", task="medical_suggestion", num_inputs=1),
        MEDICAL_INPUTS[:1],
    )
    return tmp_path, manifest


def client_for(root) -> TestClient:
    return TestClient(create_app(root))


def human(name="alice"):
    return {"kind": "human", "name": name}


class TestTasks:
    def test_fresh_news_run_task_count(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        response = client.get(f"/runs/{manifest.run_id}/tasks",
                              params={"annotator": "alice"})
        assert response.status_code == 200
        tasks = response.json()
        assert len(tasks) == 24  # 4 units x 3 cfs x 2 targets
        assert all(t["status"] == "open" for t in tasks)
        # precision tasks carry the output text, simulatability tasks do not
        for task in tasks:
            if task["target"] == "counterfactual_output":
                assert task["context"]["counterfactual_output_text"]
            else:
                assert task["context"]["counterfactual_output_text"] is None
            assert task["context"]["explanation_text"]
            assert task["context"]["unit_text"]
            assert task["context"]["counterfactual_text"]

    def test_submit_marks_done_for_that_annotator_only(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        tasks = client.get(f"/runs/{manifest.run_id}/tasks",
                           params={"annotator": "alice"}).json()
        first = tasks[0]
        response = client.post(
            f"/runs/{manifest.run_id}/annotations",
            json={"annotator": human(), "cf_id": first["cf_id"],
                  "unit_id": first["unit_id"], "target": first["target"],
                  "verdict": True},
        )
        assert response.status_code == 200
        open_tasks = client.get(f"/runs/{manifest.run_id}/tasks",
                                params={"annotator": "alice", "status": "open"}).json()
        done_tasks = client.get(f"/runs/{manifest.run_id}/tasks",
                                params={"annotator": "alice", "status": "done"}).json()
        assert len(open_tasks) == 23
        assert len(done_tasks) == 1
        bob_open = client.get(f"/runs/{manifest.run_id}/tasks",
                              params={"annotator": "bob", "status": "open"}).json()
        assert len(bob_open) == 24

    def test_unknown_run_404(self, news_run):
        root, _ = news_run
        response = client_for(root).get("/runs/ghost/tasks",
                                        params={"annotator": "alice"})
        assert response.status_code == 404

    def test_task_ids_stable_across_restarts(self, news_run):
        root, manifest = news_run
        ids_a = [t["task_id"] for t in client_for(root).get(
            f"/runs/{manifest.run_id}/tasks", params={"annotator": "a"}).json()]
        ids_b = [t["task_id"] for t in client_for(root).get(
            f"/runs/{manifest.run_id}/tasks", params={"annotator": "a"}).json()]
        assert ids_a == ids_b

    def test_medical_routing_guard_in_task_list(self, medical_run):
        root, manifest = medical_run
        client = client_for(root)
        store = RunStore(root, manifest.run_id)
        categories = {u.unit_id: u.category.value for u in store.load_graph().units}
        tasks = client.get(f"/runs/{manifest.run_id}/tasks",
                           params={"annotator": "alice"}).json()
        assert len(tasks) == 18  # (3 + 3) x 3 cfs
        for task in tasks:
            if task["target"] == "counterfactual":
                assert categories[task["unit_id"]] == "patient_information"
            else:
                assert categories[task["unit_id"]] == "suggestion"


class TestAnnotationSubmission:
    def test_medical_wrong_target_rejected(self, medical_run):
        root, manifest = medical_run
        client = client_for(root)
        store = RunStore(root, manifest.run_id)
        graph = store.load_graph()
        suggestion_unit = next(u for u in graph.units
                               if u.category.value == "suggestion")
        cf = graph.counterfactuals_for(suggestion_unit.explanation_id)[0]
        response = client.post(
            f"/runs/{manifest.run_id}/annotations",
            json={"annotator": human(), "cf_id": cf.cf_id,
                  "unit_id": suggestion_unit.unit_id,
                  "target": "counterfactual", "verdict": True},
        )
        assert response.status_code == 422

    def test_unknown_references_404(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        response = client.post(
            f"/runs/{manifest.run_id}/annotations",
            json={"annotator": human(), "cf_id": "ghost", "unit_id": "ghost",
                  "target": "counterfactual", "verdict": True},
        )
        assert response.status_code == 404

    def test_resubmission_keeps_audit_trail(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        store = RunStore(root, manifest.run_id)
        graph = store.load_graph()
        unit = graph.units[0]
        cf = graph.counterfactuals_for(unit.explanation_id)[0]
        body = {"annotator": human(), "cf_id": cf.cf_id, "unit_id": unit.unit_id,
                "target": "counterfactual", "verdict": False}
        assert client.post(f"/runs/{manifest.run_id}/annotations",
                           json=body).status_code == 200
        body["verdict"] = True
        assert client.post(f"/runs/{manifest.run_id}/annotations",
                           json=body).status_code == 200
        rows = [
            a for a in store.load_graph().annotations
            if a.annotator.name == "alice" and a.unit_id == unit.unit_id
            and a.cf_id == cf.cf_id and a.target.value == "counterfactual"
        ]
        assert [a.verdict for a in rows] == [False, True]  # trail retained
        resolved = store.load_graph().resolved_annotations()
        assert resolved[rows[-1].logical_key()].verdict is True

    def test_human_verdicts_visible_to_report(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        store = RunStore(root, manifest.run_id)
        graph = store.load_graph()
        expl = graph.explanations[0]
        for cf in graph.counterfactuals_for(expl.id):
            for unit in graph.units_for(expl.id):
                for target in ("counterfactual", "counterfactual_output"):
                    client.post(
                        f"/runs/{manifest.run_id}/annotations",
                        json={"annotator": human(), "cf_id": cf.cf_id,
                              "unit_id": unit.unit_id, "target": target,
                              "verdict": True},
                    )
        report, _, _ = build_report(root, manifest.run_id, annotator_name="alice")
        assert report.precision == 1.0


class TestParseAudits:
    def test_valid_audit_stored(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        expl_id = RunStore(root, manifest.run_id).load_graph().explanations[0].id
        response = client.post(
            f"/runs/{manifest.run_id}/parse-audits",
            json={"explanation_id": expl_id, "parsed_ok": True},
        )
        assert response.status_code == 200
        _, _, audits = build_report(root, manifest.run_id)
        assert audits is not None
        assert audits.n_audited == 1 and audits.n_ok == 1

    def test_error_kind_with_ok_rejected(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        expl_id = RunStore(root, manifest.run_id).load_graph().explanations[0].id
        response = client.post(
            f"/runs/{manifest.run_id}/parse-audits",
            json={"explanation_id": expl_id, "parsed_ok": True,
                  "error_kind": "missing_extraction"},
        )
        assert response.status_code == 422

    def test_unknown_explanation_404(self, news_run):
        root, manifest = news_run
        response = client_for(root).post(
            f"/runs/{manifest.run_id}/parse-audits",
            json={"explanation_id": "ghost", "parsed_ok": True},
        )
        assert response.status_code == 404


class TestProgress:
    def test_empty_then_partial_then_full(self, news_run):
        root, manifest = news_run
        client = client_for(root)
        url = f"/runs/{manifest.run_id}/progress"
        progress = client.get(url).json()
        assert progress["total_tasks"] == 24
        judge_key = next(iter(progress["annotators"]))
        assert judge_key.startswith("llm_judge:")
        assert progress["annotators"][judge_key]["done"] == 24  # judge annotated all

        graph = RunStore(root, manifest.run_id).load_graph()
        unit = graph.units[0]
        cf = graph.counterfactuals_for(unit.explanation_id)[0]
        client.post(
            f"/runs/{manifest.run_id}/annotations",
            json={"annotator": human(), "cf_id": cf.cf_id,
                  "unit_id": unit.unit_id, "target": "counterfactual",
                  "verdict": True},
        )
        progress = client.get(url).json()
        alice = progress["annotators"]["human:alice"]
        assert alice["done"] == 1
        assert alice["open"] == 23
        assert alice["by_target"]["counterfactual"]["done"] == 1


class TestRoster:
    def test_token_flow(self, news_run):
        root, manifest = news_run
        client = TestClient(create_app(root, roster=["alice"]))
        assert client.get("/session", params={"annotator": "mallory"}).status_code == 403
        token = client.get("/session",
                           params={"annotator": "alice"}).json()["token"]
        graph = RunStore(root, manifest.run_id).load_graph()
        unit = graph.units[0]
        cf = graph.counterfactuals_for(unit.explanation_id)[0]
        body = {"annotator": human(), "cf_id": cf.cf_id, "unit_id": unit.unit_id,
                "target": "counterfactual", "verdict": True}
        url = f"/runs/{manifest.run_id}/annotations"
        assert client.post(url, json=body).status_code == 403  # missing token
        assert client.post(url, json=body,
                           headers={"X-Annotator-Token": token}).status_code == 200
