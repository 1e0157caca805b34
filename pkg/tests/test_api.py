import numpy as np
import pytest
from fastapi.testclient import TestClient
from scipy.stats import norm

from app.server import create_app
from app.services.registry import build_oracle


@pytest.fixture
def client():
    return TestClient(create_app(build_oracle("econ")))


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_health_without_model():
    response = TestClient(create_app()).get("/health")
    assert response.status_code == 503
    assert response.json()["status"] == "unhealthy"


def test_model_info(client):
    body = client.get("/model").json()
    assert body["kind"] == "oracle"
    assert (body["x_dim"], body["y_dim"]) == (1, 1)
    assert body["config"]["simulator"] == "econ"


def test_density_grid(client):
    response = client.post("/density/grid", json={"x": [1.0], "grid": {"lo": -3.0, "hi": 5.0, "n": 9}})
    assert response.status_code == 200
    body = response.json()
    assert body["y"] == pytest.approx(np.linspace(-3, 5, 9).tolist())
    # y | x=1 ~ N(1, 2**2)
    assert body["pdf"] == pytest.approx(norm.pdf(body["y"], 1.0, 2.0).tolist(), rel=1e-10)


def test_density_moments(client):
    body = client.post("/density/moments", json={"x": [2.0]}).json()
    assert body["mean"][0] == pytest.approx(4.0)
    assert body["covariance"][0][0] == pytest.approx(9.0)
    assert body["skewness"] == pytest.approx(0.0, abs=1e-5)


def test_density_risk(client):
    body = client.post("/density/risk", json={"x": [1.0], "alpha": 0.05}).json()
    assert body["value_at_risk"] == pytest.approx(norm.ppf(0.05, 1.0, 2.0), abs=1e-8)
    assert body["expected_shortfall"] < body["value_at_risk"]


def test_request_validation_errors(client):
    assert client.post("/density/grid", json={"x": [1.0], "grid": {"lo": 1.0, "hi": 0.0, "n": 5}}).status_code == 422
    assert client.post("/density/grid", json={"x": [1.0], "grid": {"lo": 0.0, "hi": 1.0, "n": 1}}).status_code == 422
    assert client.post("/density/risk", json={"x": [1.0], "alpha": 1.5}).status_code == 422
    response = client.post("/density/moments", json={})
    assert response.status_code == 422
    assert response.json()["error"] == "ValidationError"


def test_wrong_query_dimension_is_rejected(client):
    response = client.post("/density/moments", json={"x": [1.0, 2.0]})
    assert response.status_code == 422
    assert response.json()["error"] == "InputShapeError"


def test_routes_without_model_are_unavailable():
    assert TestClient(create_app()).get("/model").status_code == 503
