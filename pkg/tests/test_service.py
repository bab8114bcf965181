"""HTTP surface: endpoints, wire formats, error mapping."""

import math

import pytest
from fastapi.testclient import TestClient
from pytest import approx

from gwlab.model import fixture_model
from gwlab.service.app import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def model_doc(name):
    return fixture_model(name).to_dict()


class TestBasics:
    def test_healthz(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"

    def test_validate(self, client):
        resp = client.post("/validate", json={"model": model_doc("B")})
        assert resp.status_code == 200
        body = resp.json()
        assert body["aperiodic_A5"] and body["positive_regular"]
        assert body["q_positive"] == "unknown"

    def test_spectral(self, client):
        body = client.post(
            "/spectral", json={"model": model_doc("C"), "gap_table_n": 10}
        ).json()
        assert body["rho"] == approx((1.2 + math.sqrt(0.48)) / 2, abs=1e-10)
        assert len(body["gaps"]) == 10

    def test_extinction(self, client):
        body = client.post("/extinction", json={"model": model_doc("A")}).json()
        assert body["q"][0] == approx(1 / 3, abs=1e-12)
        assert body["residual"] <= 1e-12

    def test_tilt_critical(self, client):
        body = client.post(
            "/tilt", json={"model": model_doc("D"), "critical": True}
        ).json()
        assert body["a"][0] == approx(math.sqrt(0.4), abs=1e-9)
        assert body["rho_bar"] == approx(1.0, abs=1e-10)
        assert body["tilted_model"]["d"] == 1

    def test_qprocess(self, client):
        body = client.post(
            "/qprocess", json={"model": model_doc("B"), "a": [1.0], "box_cap": 12}
        ).json()
        entries = {
            (tuple(e["x"]), tuple(e["y"])): e["value"] for e in body["entries"]
        }
        assert entries[((1,), (1,))] == approx(0.4)
        assert entries[((1,), (2,))] == approx(0.6)

    def test_yaglom(self, client):
        body = client.post(
            "/yaglom", json={"model": model_doc("E"), "box_cap": 8}
        ).json()
        assert body["gamma"] == approx(1.0, abs=1e-10)
        nu = {tuple(r["state"]): r["mass"] for r in body["nu"]}
        assert nu[(1,)] == approx(1.0, abs=1e-12)

    def test_condition(self, client):
        payload = {
            "model": model_doc("A"),
            "path": {"initial": [1], "times": [2], "states": [[2]]},
            "set_spec": "nonextinct",
            "n": 40,
            "box_cap": 70,
        }
        body = client.post("/condition", json=payload).json()
        assert body["probability"] == approx(0.75, abs=1e-9)
        assert body["gap"] < 1e-9

    def test_double_limit(self, client):
        payload = {
            "model": model_doc("A"),
            "z": [2],
            "diagonal_m": 10,
            "fractions": [0.5],
            "fraction_m": 20,
            "box_cap": 50,
        }
        body = client.post("/double-limit", json=payload).json()
        schedules = {r["schedule"] for r in body["rows"]}
        assert schedules == {"diagonal", "t=0.5"}

    def test_progeny_pmf_with_oracle(self, client):
        payload = {"model": model_doc("B"), "x0": [1], "n": [3], "oracle": True}
        body = client.post("/progeny/pmf", json=payload).json()
        assert body["value"] == approx(0.075)
        assert body["gap"] < 1e-10

    def test_progeny_lemma1(self, client):
        payload = {
            "model": model_doc("D"),
            "a": [math.sqrt(0.4)],
            "x0": [1],
            "paths": [{"initial": [1], "times": [1], "states": [[2]]}],
            "n": [7],
        }
        body = client.post("/progeny/lemma1", json=payload).json()
        assert body["max_discrepancy"] < 1e-12

    def test_progeny_theorem2(self, client):
        payload = {
            "model": model_doc("B"),
            "path": {"initial": [1], "times": [1], "states": [[2]]},
            "n_values": [60],
        }
        body = client.post("/progeny/theorem2", json=payload).json()
        assert body["rows"][0]["limit"] == approx(0.6, abs=1e-12)

    def test_mc(self, client):
        payload = {
            "model": model_doc("B"),
            "path": {"initial": [1], "times": [1], "states": [[2]]},
            "condition_kind": "progeny",
            "progeny": [5],
            "seed": 4,
            "replicates": 4000,
            "horizon": 20,
        }
        body = client.post("/mc", json=payload).json()
        assert body["n_effective"] > 0
        assert 0.0 <= body["estimate"] <= 1.0


class TestErrorMapping:
    def test_malformed_model(self, client):
        doc = {"d": 1, "types": [{"atoms": [{"k": [0], "p": 0.5}]}]}
        resp = client.post("/extinction", json={"model": doc})
        assert resp.status_code == 400
        assert resp.json()["kind"] == "validation"

    def test_yaglom_needs_subcritical(self, client):
        resp = client.post("/yaglom", json={"model": model_doc("A")})
        assert resp.status_code == 400
        assert resp.json()["kind"] == "validation"

    def test_degenerate_condition(self, client):
        payload = {
            "model": model_doc("E"),
            "path": {"initial": [1], "times": [1], "states": [[1]]},
            "set_spec": "finite:[(2)]",
            "n": 5,
            "box_cap": 6,
        }
        with pytest.warns(UserWarning):
            resp = client.post("/condition", json=payload)
        assert resp.status_code == 400
        assert resp.json()["kind"] == "degenerate"

    def test_request_schema_enforced(self, client):
        resp = client.post("/extinction", json={"model": {"d": 1}})
        assert resp.status_code == 422
