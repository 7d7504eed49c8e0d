"""HTTP front-end: parse / run / analyze / optimize / report endpoints."""

from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from paramstudy.service import app

DEMO_2D = Path(__file__).resolve().parent.parent / "studies" / "demo_2d.yaml"


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setenv("PARAMSTUDY_ROOT", str(tmp_path))
    return TestClient(app)


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok"}


def test_parse_endpoint(client):
    r = client.post("/parse", json={
        "text": "analyze the effect of inlet velocity (from 10.0 to 60.0 "
                "m/s) on max temperature"})
    assert r.status_code == 200
    body = r.json()
    assert body["parameter_names"] == ["inlet_velocity"]
    assert body["qoi"] == "max_temperature"
    assert body["goal_kind"] is None
    assert "lower: 10.0" in body["spec_yaml"]


def test_parse_rejects_unrecognized_text(client):
    r = client.post("/parse", json={"text": "make me a sandwich"})
    assert r.status_code == 422
    assert "UnrecognizedTemplate" in r.json()["detail"]


def test_full_pipeline_over_http(client):
    spec_yaml = DEMO_2D.read_text()
    r = client.post("/studies/demo/run", json={"spec_yaml": spec_yaml,
                                               "workers": 2})
    assert r.status_code == 200
    assert r.json()["cases_ok"] == 8

    r = client.post("/studies/demo/analyze")
    assert r.status_code == 200
    assert "Active direction components" in r.json()["report"]

    r = client.post("/studies/demo/optimize")
    assert r.status_code == 200
    body = r.json()
    assert "x_star" in body["optimum"]
    assert "Optimized inlet_velocity" in body["report"]

    r = client.get("/studies/demo/report")
    assert r.status_code == 200
    assert "Study report" in r.json()["report"]


def test_analyze_unknown_study_is_404(client):
    r = client.post("/studies/ghost/analyze")
    assert r.status_code == 404


def test_bad_study_name_rejected(client):
    r = client.post("/studies/..%2Fescape/analyze")
    assert r.status_code in (404, 422)


def test_insufficient_data_maps_to_409(client):
    spec_yaml = DEMO_2D.read_text().replace("a1: 0.7", "a1: .nan")
    r = client.post("/studies/broken/run", json={"spec_yaml": spec_yaml})
    assert r.status_code == 409
