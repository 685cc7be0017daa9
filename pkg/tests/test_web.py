from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from chfnet import config
from chfnet.data.lut import QueryPoint, lookup
from chfnet.services.experiment import load_experiment_config, run_experiment
from chfnet.web import main as web


def _clear_caches() -> None:
    for cached in (config.get_settings, web._get_settings, web.get_lut, web._load_predictor):
        cached.cache_clear()


@pytest.fixture
def client(monkeypatch, tmp_path, sample_lut_path):
    monkeypatch.setenv("CHF_LUT_PATH", str(sample_lut_path))
    monkeypatch.setenv("CHF_OUTPUT_DIR", str(tmp_path / "run"))
    monkeypatch.delenv("CHF_MODEL_PATH", raising=False)
    _clear_caches()
    yield TestClient(web.app)
    _clear_caches()


@pytest.fixture
def trained_run(tmp_path, sample_lut_path):
    cfg = load_experiment_config(None, {
        "lut_path": sample_lut_path,
        "variants": "base,A2",
        "epochs": 1,
        "ae_epochs": 1,
        "output_dir": tmp_path / "run",
    })
    return run_experiment(cfg)


def test_health_without_model(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "model": None}


def test_predict_lut_only(client, sample_grid):
    response = client.get("/predict", params={"p": 7, "g": 1500, "x": 0.1, "d": 2})
    assert response.status_code == 200
    payload = response.json()
    assert payload["lut"]["chf_8mm"] == pytest.approx(sample_grid.chf_values[3, 2, 4])
    assert payload["lut"]["chf"] == pytest.approx(sample_grid.chf_values[3, 2, 4] * 0.5)
    assert payload["model"] is None


def test_predict_out_of_range(client):
    assert client.get("/predict", params={"p": 50, "g": 1500, "x": 0.1}).status_code == 422
    assert client.get("/predict", params={"p": 7, "g": 1500, "x": 0.1, "d": 0}).status_code == 422


def test_report_page_without_run(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "No run report" in response.text


def test_served_model_and_report(trained_run, client):
    assert client.get("/health").json()["model"] == "base"
    payload = client.get("/predict", params={"p": 7, "g": 1500, "x": 0.1}).json()
    assert payload["model"]["variant"] == "base"
    assert payload["model"]["chf"] >= 0.0
    page = client.get("/").text
    assert "DCNN-base" in page and "DCNN-AE2" in page
    assert "Ranking" in page


def test_predict_uses_table_lookup(client, sample_grid):
    payload = client.get("/predict", params={"p": 5.5, "g": 1234, "x": 0.07, "d": 12}).json()
    assert payload["lut"]["chf"] == lookup(sample_grid, QueryPoint(5.5, 1234.0, 0.07, 12.0))
    assert payload["lut"]["chf_8mm"] == lookup(sample_grid, QueryPoint(5.5, 1234.0, 0.07))


def test_predict_rejects_non_finite_query(client):
    assert client.get("/predict", params={"p": "nan", "g": 1500, "x": 0.1}).status_code == 422
