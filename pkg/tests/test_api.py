"""Tests for the HTTP API."""

import io

import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.dgp import generate_panel
from app.utils.tables import write_panel


@pytest.fixture
def client():
    with TestClient(app) as test_client:
        yield test_client


@pytest.fixture
def panel_files(small_params):
    panel_buffer, outcome_buffer = io.StringIO(), io.StringIO()
    write_panel(generate_panel(small_params, 300, seed=1), panel_buffer, outcome_buffer)
    return {
        "panel_csv": ("panel.csv", panel_buffer.getvalue(), "text/csv"),
        "outcome_csv": ("outcome.csv", outcome_buffer.getvalue(), "text/csv"),
    }


def test_root_and_health(client):
    root = client.get("/")
    assert root.status_code == 200
    assert root.json()["endpoints"]["exact"] == "/api/exact"

    health = client.get("/health")
    assert health.status_code == 200
    assert health.json()["status"] == "healthy"


def test_favicon(client):
    assert client.get("/favicon.ico").status_code == 204


class TestEstimate:
    def test_coarsened_estimate(self, client, panel_files):
        response = client.post("/api/estimate", files=panel_files,
                               data={"method": "ir", "regime": "never", "delta": "8"})
        assert response.status_code == 200
        body = response.json()
        assert body["grid"] == [1, 9, 17]
        assert body["estimate"]["method"] == "ir"
        assert body["estimate"]["psi_hat"] is not None

    def test_bootstrap_interval(self, client, panel_files):
        response = client.post("/api/estimate", files=panel_files,
                               data={"method": "ir", "delta": "8", "bootstrap": "5", "seed": "3"})
        assert response.status_code == 200
        body = response.json()
        assert body["ci_lo"] <= body["ci_hi"]

    def test_unknown_method(self, client, panel_files):
        response = client.post("/api/estimate", files=panel_files, data={"method": "sgd"})
        assert response.status_code == 400

    def test_boundary_off_the_grid(self, client, panel_files):
        response = client.post("/api/estimate", files=panel_files,
                               data={"method": "ir", "regime": "no-treat-before:4", "delta": "8"})
        assert response.status_code == 400
        assert response.json()["detail"].startswith("data:")


class TestExact:
    def test_value(self, client, three_point_text):
        response = client.post("/api/exact", json={"mdp": three_point_text, "regime": "never"})
        assert response.status_code == 200
        assert response.json()["value"] == pytest.approx(0.425)

    def test_bound(self, client, three_point_text):
        response = client.post("/api/exact",
                               json={"mdp": three_point_text, "delta": 2, "action": "bound"})
        body = response.json()
        assert body["grid"] == [1, 3]
        assert body["lo"] == pytest.approx(-0.42)

    def test_check(self, client, three_point_text):
        response = client.post("/api/exact",
                               json={"mdp": three_point_text, "delta": 2, "action": "check"})
        report = response.json()["report"]
        assert report["condition_i"] and not report["condition_ii"]

    def test_malformed(self, client):
        response = client.post("/api/exact", json={"mdp": "horizon 2\n"})
        assert response.status_code == 400


class TestTruth:
    def test_truth(self, client):
        response = client.post("/api/simulate/truth", json={"t_star": 17, "m": 1000})
        assert response.status_code == 200
        body = response.json()
        assert body["m"] == 1000 and body["mc_se"] > 0

    def test_sample_size_floor(self, client):
        assert client.post("/api/simulate/truth", json={"m": 10}).status_code == 422
