import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from diffadapt.backend import Backend
from diffadapt.core import Difficulty, ProbeParameters
from diffadapt.dispatch import BudgetTable
from diffadapt.errors import BackendError, DiffAdaptError
from diffadapt.probe import LoadedProbe
from diffadapt.service import create_app
from diffadapt.simulator import SimulatorBackend


def loaded_probe(params=None, fingerprint=""):
    return LoadedProbe(
        params=params or ProbeParameters.zeros(16, 8),
        class_order=("Easy", "Normal", "Hard"),
        provider_fingerprint=fingerprint,
        version=1,
    )


@pytest.fixture()
def client(profile):
    sim = SimulatorBackend(profile, seed=3)
    app = create_app(loaded_probe(), sim, BudgetTable(entries={}), "sim-model")
    return TestClient(app)


class TestHealth:
    def test_health_reports_probe_fingerprint(self, profile):
        sim = SimulatorBackend(profile, seed=3)
        app = create_app(
            loaded_probe(fingerprint=sim.representation_fingerprint()),
            sim,
            BudgetTable(entries={}),
            "sim-model",
        )
        resp = TestClient(app).get("/healthz")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["probe_fingerprint"].startswith("sim:")
        assert body["backend_reachable"] is True


class TestClassify:
    def test_wrong_dim_inline_feature_rejected(self, client):
        resp = client.post("/v1/classify", json={"feature": [1.0, 2.0]})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "dimension_mismatch"

    def test_inline_feature_classified(self, client):
        resp = client.post("/v1/classify", json={"feature": [0.0] * 16})
        assert resp.status_code == 200
        body = resp.json()
        assert body["label"] == "Normal"  # uniform probs tie-break
        assert set(body["probabilities"]) == {"Easy", "Normal", "Hard"}
        assert sum(body["probabilities"].values()) == pytest.approx(1.0)

    def test_classify_by_problem_id_uses_backend(self, client):
        resp = client.post(
            "/v1/classify", json={"problem_id": "q9", "question": "x", "difficulty_rating": 5}
        )
        assert resp.status_code == 200

    def test_missing_input_rejected(self, client):
        resp = client.post("/v1/classify", json={})
        assert resp.status_code == 400
        assert resp.json()["error"]["code"] == "missing_input"

    def test_feature_unavailable(self, client):
        # Simulator requires a difficulty rating; omit it to make the fetch fail.
        resp = client.post("/v1/classify", json={"problem_id": "q9", "question": "x"})
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "feature_unavailable"

    def test_body_validation_error_has_machine_code(self, client):
        resp = client.post("/v1/classify", json={"feature": "not-a-list"})
        assert resp.status_code == 422
        assert resp.json()["error"]["code"] == "validation_error"


class TestRouteEndpoint:
    def test_route_returns_label_tokens_and_fallback(self, client):
        resp = client.post(
            "/v1/route",
            json={
                "question": "What is 2+2?",
                "problem_id": "rt-1",
                "difficulty_rating": 4,
                "gold_answer": "4",
            },
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["label"] in {"Easy", "Normal", "Hard"}
        assert body["tokens"] >= 1
        assert body["fallback"] is False
        assert "answer_text" in body and body["entropy"] > 0

    def test_route_without_rating_falls_back_and_fails_completion(self, client):
        # No rating: the simulator cannot prefill or complete; the proxy
        # reports a backend failure with a machine-readable code.
        resp = client.post("/v1/route", json={"question": "hi", "problem_id": "rt-2"})
        assert resp.status_code == 502
        assert resp.json()["error"]["code"] == "backend_failure"

    def test_concurrent_identical_requests_agree(self, client):
        payload = {
            "question": "Same question",
            "problem_id": "rt-3",
            "difficulty_rating": 2,
            "gold_answer": "7",
        }
        results = []
        lock = threading.Lock()

        def hit():
            resp = client.post("/v1/route", json=payload)
            with lock:
                results.append((resp.status_code, resp.json()["label"]))

        threads = [threading.Thread(target=hit) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(code == 200 for code, _ in results)
        assert len({label for _, label in results}) == 1


class TestFingerprintGuard:
    def test_mismatch_refused(self, profile):
        sim = SimulatorBackend(profile, seed=3)
        with pytest.raises(DiffAdaptError):
            create_app(
                loaded_probe(fingerprint="dffv:sha256:other"),
                sim,
                BudgetTable(entries={}),
                "m",
            )

    def test_mismatch_allowed_with_override(self, profile):
        sim = SimulatorBackend(profile, seed=3)
        app = create_app(
            loaded_probe(fingerprint="dffv:sha256:other"),
            sim,
            BudgetTable(entries={}),
            "m",
            allow_fingerprint_mismatch=True,
        )
        assert TestClient(app).get("/healthz").status_code == 200
