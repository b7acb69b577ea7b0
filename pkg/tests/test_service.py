from __future__ import annotations

import base64
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import httpx
import pytest
from fastapi.testclient import TestClient

from mbelens import query
from mbelens.bundled import read_fixture
from mbelens.config import Settings
from mbelens.diff import diff_instances, diff_metamodels
from mbelens.gateway import MockBackend, RemoteBackend
from mbelens.ocl import check_compliance, parse_constraints
from mbelens.service import create_app

GOLDEN = Path(__file__).parent / "golden" / "service"
CASES = sorted(p.name[: -len(".request.json")] for p in GOLDEN.glob("*.request.json"))


def doc(name: str) -> dict:
    return {"format": "ccs-json", "data": json.loads(read_fixture(name))}


def _expand(value):
    if isinstance(value, dict):
        if set(value) == {"$fixture"}:
            return doc(value["$fixture"])
        if set(value) == {"$text"}:
            return read_fixture(value["$text"]).decode("utf-8")
        return {k: _expand(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_expand(v) for v in value]
    return value


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(Settings(), backend=None))


def low_resolution_request() -> dict:
    return {
        "mode": "structured",
        "structured": [{"op": "setSlot", "object": "frontCam", "attribute": "resolution", "value": 320}],
        "targetInstance": doc("demo-vehicle.json"),
        "rules": read_fixture("rules.ocl").decode("utf-8"),
    }


@pytest.mark.parametrize("case", CASES)
def test_golden_bodies(client, case):
    spec = json.loads((GOLDEN / f"{case}.request.json").read_text())
    expected = (GOLDEN / f"{case}.response.json").read_bytes()
    body = _expand(spec["body"])
    first = client.post(spec["path"], json=body)
    second = client.post(spec["path"], json=body)
    assert first.status_code == spec.get("status", 200)
    assert first.content == expected
    assert second.content == first.content
    assert first.headers["content-type"] == "application/json"


class TestRouteEquivalence:
    def test_extraction(self, client, ccs_mini, demo):
        got = client.post("/extractSensors", json={"diagram": doc("demo-vehicle.json")}).json()
        assert [s["id"] for s in got["sensors"]] == query.extract_by_role(ccs_mini, demo, "Sensor")

    def test_properties(self, client, ccs_mini, demo):
        got = client.post("/extractElementProperties",
                          json={"diagram": doc("demo-vehicle.json"), "elementName": "roofLidar"}).json()
        direct = query.element_properties(ccs_mini, demo, "roofLidar")
        assert [(p["name"], p["type"], p["value"]) for p in got["properties"]] == [
            (p.name, p.type, p.value) for p in direct]

    def test_differences(self, client, ccs_mini, ccs_reduced, demo):
        got = client.post("/detectDifferences", json={"currentDiagram": doc("ccs-mini.json"),
                                                      "newDiagram": doc("ccs-mini-reduced.json")}).json()
        assert got == diff_metamodels(ccs_mini, ccs_reduced).to_json()
        got = client.post("/detectDifferences", json={"currentDiagram": doc("demo-vehicle.json"),
                                                      "newDiagram": doc("demo-vehicle.json")}).json()
        assert got == diff_instances(demo, demo).to_json()

    def test_compliance(self, client, ccs_mini, demo, rules_text):
        got = client.post("/checkCompliance", json={"metamodel": doc("ccs-mini.json"),
                                                    "instance": doc("demo-vehicle.json"),
                                                    "rules": rules_text}).json()
        assert got == check_compliance(ccs_mini, demo, parse_constraints(rules_text)).to_json()

    def test_bare_documents_are_accepted(self, client):
        body = {"metamodel": json.loads(read_fixture("ccs-mini.json")),
                "instance": json.loads(read_fixture("demo-vehicle.json")), "rules": "context Camera inv t: true"}
        assert client.post("/checkCompliance", json=body).json()["compliant"] is True


class TestApplyChange:
    def test_low_resolution_feedback(self, client):
        response = client.post("/applyChange", json=low_resolution_request())
        assert response.status_code == 200
        out = response.json()
        assert out["compliance"]["compliant"] is False
        (violation,) = out["compliance"]["violations"]
        assert violation["object"] == "frontCam" and violation["constraint"] == "minRes"
        assert out["feedback"] == ["frontCam violates minRes (context Camera): self.resolution >= 640 "
                                   "is false (self.resolution = 320)"]
        cam = next(o for o in out["updatedInstance"]["objects"] if o["id"] == "frontCam")
        assert cam["slots"]["resolution"] == 320

    def test_resolution_increase(self, client):
        body = low_resolution_request()
        body["structured"][0]["value"] = 1920
        out = client.post("/applyChange", json=body).json()
        assert out["compliance"]["compliant"] is True and out["feedback"] == []
        assert [(e["kind"], e["path"]) for e in out["diff"]["entries"]] == [("SlotValueChanged", "frontCam.resolution")]

    def test_idempotent_second_application(self, client):
        body = low_resolution_request()
        body["structured"][0]["value"] = 1920
        first = client.post("/applyChange", json=body).json()
        body["targetInstance"] = {"format": "ccs-json", "data": first["updatedInstance"]}
        second = client.post("/applyChange", json=body).json()
        assert second["diff"]["entries"] == []

    def test_mini_grammar_string_edit(self, client):
        body = low_resolution_request()
        body["structured"] = ["set frontCam.resolution = 1920"]
        assert client.post("/applyChange", json=body).json()["diff"]["summary"] == {"SlotValueChanged": 1}

    @pytest.mark.parametrize("mutate,status,code", [
        (lambda b: b["structured"][0].update(object="rearCam"), 400, "UNRESOLVED_EDIT"),
        (lambda b: b["structured"][0].update(value="high"), 409, "NON_CONFORMANT"),
        (lambda b: b.update(freeform="set x.y = 1"), 400, "BAD_CHANGE_REQUEST"),
        (lambda b: b.pop("structured"), 400, "BAD_CHANGE_REQUEST"),
        (lambda b: b.update(mode="freeform"), 400, "BAD_CHANGE_REQUEST"),
        (lambda b: b.update(rules="context Camera inv"), 400, "SYNTAX_ERROR"),
        (lambda b: b.pop("targetInstance"), 400, "MISSING_FIELD"),
    ])
    def test_errors(self, client, mutate, status, code):
        body = low_resolution_request()
        mutate(body)
        response = client.post("/applyChange", json=body)
        assert response.status_code == status
        assert response.json()["error"]["code"] == code

    def test_non_conformant_lists_issues(self, client):
        body = low_resolution_request()
        body["structured"][0]["value"] = "high"
        issues = client.post("/applyChange", json=body).json()["error"]["issues"]
        assert [i["code"] for i in issues] == ["SLOT_TYPE_MISMATCH"]

    def test_freeform_needs_a_backend(self, client):
        body = low_resolution_request()
        body.pop("structured")
        body.update(mode="freeform", freeform="set frontCam.resolution = 1920")
        response = client.post("/applyChange", json=body)
        assert response.status_code == 502
        assert response.json()["error"]["code"] == "BACKEND_UNREACHABLE"

    def test_freeform_with_mock(self):
        mock_client = TestClient(create_app(Settings(backend_url="mock")))
        body = low_resolution_request()
        body.pop("structured")
        body.pop("mode")
        body.update(freeform="set frontCam.resolution = 1920")
        out = mock_client.post("/applyChange", json=body).json()
        assert out["compliance"]["compliant"] is True


class TestErrors:
    def test_malformed_body(self, client):
        response = client.post("/extractSensors", content=b"{nope")
        assert response.status_code == 400 and response.json()["error"]["code"] == "MALFORMED_JSON"

    def test_body_must_be_object(self, client):
        assert client.post("/extractSensors", json=[1]).status_code == 400

    def test_bad_base64(self, client):
        response = client.post("/extractActuators", json={"diagram": {"format": "image/png;base64", "data": "@@"}})
        assert response.status_code == 400 and response.json()["error"]["code"] == "BAD_BASE64"

    def test_image_without_backend(self, client):
        image = {"format": "image/png;base64", "data": base64.b64encode(b"png").decode()}
        response = client.post("/extractSensors", json={"diagram": image})
        assert response.status_code == 502
        assert response.json()["error"]["code"] == "BACKEND_UNREACHABLE"

    def test_mixed_formats(self, client):
        image = {"format": "image/png;base64", "data": base64.b64encode(b"png").decode()}
        response = client.post("/detectDifferences", json={"currentDiagram": image,
                                                           "newDiagram": doc("ccs-mini.json")})
        assert response.json()["error"]["code"] == "MIXED_FORMATS"

    def test_kind_mismatch(self, client):
        response = client.post("/detectDifferences", json={"currentDiagram": doc("ccs-mini.json"),
                                                           "newDiagram": doc("demo-vehicle.json")})
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "KIND_MISMATCH"

    def test_no_sensors(self, client):
        empty = {"format": "ccs-json", "data": {"kind": "instance", "metamodel": "ccs-mini", "objects": []}}
        assert client.post("/extractSensors", json={"diagram": empty}).json() == {"sensors": []}
        assert client.post("/extractActuators", json={"diagram": empty}).json() == {"actuators": []}

    def test_parse_error_has_path(self, client):
        bad = {"format": "ccs-json", "data": {"kind": "metamodel", "name": "m", "relations": []}}
        error = client.post("/detectDifferences", json={"currentDiagram": bad, "newDiagram": bad}).json()["error"]
        assert (error["code"], error["path"]) == ("MISSING_FIELD", "/classes")

    def test_unknown_metamodel(self, client):
        orphan = {"format": "ccs-json", "data": {"kind": "instance", "metamodel": "elsewhere", "objects": []}}
        assert client.post("/extractSensors", json={"diagram": orphan}).json()["error"]["code"] == "UNKNOWN_METAMODEL"


class TestImagePath:
    def test_remote_backend_answers_images(self):
        def handler(request):
            reply = '```json\n{"elements": [{"id": "cam", "class": "Camera"}]}\n```'
            return httpx.Response(200, json={"choices": [{"message": {"content": reply}}]})

        backend = RemoteBackend("http://llm.test", transport=httpx.MockTransport(handler))
        image_client = TestClient(create_app(Settings(), backend=backend))
        image = {"format": "image/png;base64", "data": base64.b64encode(b"png").decode()}
        assert image_client.post("/extractSensors", json={"diagram": image}).json() == {
            "sensors": [{"id": "cam", "class": "Camera"}]}

    def test_refusal_maps_to_502(self):
        backend = RemoteBackend("http://llm.test", transport=httpx.MockTransport(
            lambda r: httpx.Response(403, json={})))
        image_client = TestClient(create_app(Settings(), backend=backend))
        image = {"format": "image/png;base64", "data": base64.b64encode(b"png").decode()}
        error = image_client.post("/extractSensors", json={"diagram": image}).json()["error"]
        assert (error["code"], error["status"]) == ("BACKEND_REFUSED", 403)


def test_health():
    assert TestClient(create_app(Settings(), backend=None)).get("/health").json() == {
        "status": "ok", "backendConfigured": False}
    assert TestClient(create_app(Settings(backend_url="mock"))).get("/health").json()["backendConfigured"] is True
    assert isinstance(create_app(Settings(backend_url="mock")).state.backend, MockBackend)


def test_concurrent_requests_are_independent(client):
    body = {"diagram": doc("demo-vehicle.json")}
    with ThreadPoolExecutor(8) as pool:
        bodies = list(pool.map(lambda _: client.post("/extractSensors", json=body).content, range(16)))
    assert len(set(bodies)) == 1
