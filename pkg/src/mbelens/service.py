"""HTTP front end.

Every endpoint takes a JSON body and is stateless.  Canonical ``ccs-json``
payloads go straight to the engines; image payloads are forwarded to the
configured backend.  Errors come back as ``{"error": {"code", "message", ...}}``.
"""
from __future__ import annotations

import json
from typing import Any, Callable, Optional

from fastapi import FastAPI, Request
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool

from . import query
from .bundled import bundled_metamodels
from .config import Settings
from .diff import DiffReport, diff_instances, diff_metamodels
from .gateway import (
    CANONICAL_FORMAT,
    Backend,
    BackendError,
    DiagramPayload,
    PayloadError,
    PromptTask,
    ask,
    backend_from_settings,
)
from .model import Instance, Metamodel, ModelError, validate_instance
from .modelformat import ModelDocument, ParseError, document_from_json, loads_strict, scalar_to_json
from .names import normalize_name
from .ocl import OclSyntaxError, check_compliance, parse_constraints
from .workflow import Edit, EditError, NonConformantError, run_change, translate_freeform


class ApiError(Exception):
    def __init__(self, http_status: int, code: str, message: str, **extra: Any):
        super().__init__(message)
        self.status = http_status
        self.body = {"error": {"code": code, "message": message, **extra}}


def json_bytes(body: Any) -> bytes:
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _response(status: int, body: Any) -> Response:
    return Response(json_bytes(body), status_code=status, media_type="application/json")


_NOT_FOUND = {"UNKNOWN_ELEMENT"}


def _translate(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, ParseError):
        return ApiError(400, exc.code, exc.message, path=exc.path)
    if isinstance(exc, PayloadError):
        return ApiError(400, exc.code, exc.message)
    if isinstance(exc, OclSyntaxError):
        return ApiError(400, exc.code, exc.message, line=exc.line, column=exc.column)
    if isinstance(exc, BackendError):
        extra = {"status": exc.status} if exc.status is not None else {}
        return ApiError(502, exc.code, exc.message, **extra)
    if isinstance(exc, EditError):
        return ApiError(400, exc.code, exc.message)
    if isinstance(exc, NonConformantError):
        return ApiError(409, "NON_CONFORMANT", str(exc), issues=[i.to_json() for i in exc.issues])
    if isinstance(exc, ModelError):
        return ApiError(404 if exc.code in _NOT_FOUND else 400, exc.code, exc.message)
    raise exc


# -- body helpers --------------------------------------------------------------


def _field(body: dict, name: str, kind: type = dict) -> Any:
    if name not in body:
        raise ApiError(400, "MISSING_FIELD", f"request body lacks {name!r}")
    value = body[name]
    if not isinstance(value, kind):
        raise ApiError(400, "BAD_TYPE", f"{name!r} must be a JSON {kind.__name__}")
    return value


def _diagram(body: dict, name: str) -> DiagramPayload:
    return DiagramPayload.from_json(_field(body, name))


def _document(obj: Any) -> ModelDocument:
    """Accept either a ``{format, data}`` payload or a bare model document."""
    if isinstance(obj, dict) and "format" in obj:
        payload = DiagramPayload.from_json(obj)
        if payload.format != CANONICAL_FORMAT:
            raise ApiError(400, "BAD_PAYLOAD", "a canonical ccs-json model document is required here")
        return payload.document
    return document_from_json(obj)


def _metamodel(obj: Any) -> Metamodel:
    doc = _document(obj)
    if doc.kind != "metamodel":
        raise ApiError(400, "KIND_MISMATCH", "expected a metamodel document")
    if doc.issues:
        raise ApiError(400, "INVALID_MODEL", "metamodel does not validate",
                       issues=[i.to_json() for i in doc.issues])
    return doc.payload


def _resolve_metamodel(body: dict, inst: Instance) -> Metamodel:
    if body.get("metamodel") is not None:
        return _metamodel(body["metamodel"])
    found = bundled_metamodels().get(normalize_name(inst.metamodel_name))
    if found is None:
        raise ApiError(400, "UNKNOWN_METAMODEL",
                       f"metamodel {inst.metamodel_name!r} is not bundled; pass it as 'metamodel'")
    return found


def _conforming_instance(body: dict, doc: ModelDocument) -> tuple[Metamodel, Instance]:
    if doc.kind != "instance":
        raise ApiError(400, "KIND_MISMATCH", "expected a model instance")
    inst: Instance = doc.payload
    mm = _resolve_metamodel(body, inst)
    issues = validate_instance(inst, mm)
    if issues:
        raise ApiError(400, "INVALID_MODEL", "instance does not conform to its metamodel",
                       issues=[i.to_json() for i in issues])
    return mm, inst


def _optional_reference(body: dict) -> Optional[Metamodel]:
    return _metamodel(body["metamodel"]) if body.get("metamodel") is not None else None


# -- endpoint logic (synchronous, run in a worker thread) -----------------------


class Handlers:
    def __init__(self, backend: Optional[Backend]):
        self.backend = backend

    def _extract(self, body: dict, role: str, key: str) -> dict:
        diagram = _diagram(body, "diagram")
        if diagram.is_image:
            reference = _optional_reference(body)
            task = PromptTask("ExtractRole", {"role": role}, (diagram,))
            _, answer = ask(self.backend, task, reference)
            return {key: answer.value}
        mm, inst = _conforming_instance(body, diagram.document)
        ids = query.extract_by_role(mm, inst, role)
        return {key: [{"id": i, "class": inst.find(i).class_name} for i in ids]}

    def extract_sensors(self, body: dict) -> dict:
        return self._extract(body, "Sensor", "sensors")

    def extract_actuators(self, body: dict) -> dict:
        return self._extract(body, "Actuator", "actuators")

    def extract_element_properties(self, body: dict) -> dict:
        diagram = _diagram(body, "diagram")
        element = _field(body, "elementName", str)
        if diagram.is_image:
            task = PromptTask("ElementProperties", {"element": element}, (diagram,))
            _, answer = ask(self.backend, task, _optional_reference(body))
            return {"properties": answer.value}
        mm, inst = _conforming_instance(body, diagram.document)
        props = query.element_properties(mm, inst, element)
        return {"properties": [
            {"name": p.name, "type": p.type, "value": None if p.value is query.UNSET else scalar_to_json(p.value)}
            for p in props
        ]}

    def detect_differences(self, body: dict) -> dict:
        current = _diagram(body, "currentDiagram")
        new = _diagram(body, "newDiagram")
        if current.is_image != new.is_image:
            raise ApiError(400, "MIXED_FORMATS", "both diagrams must be images or both ccs-json")
        if current.is_image:
            task = PromptTask("DetectDifferences", {}, (current, new))
            _, answer = ask(self.backend, task, _optional_reference(body))
            counts: dict[str, int] = {}
            for entry in answer.value:
                counts[entry["kind"]] = counts.get(entry["kind"], 0) + 1
            return {"entries": answer.value, "summary": counts}
        a, b = current.document, new.document
        if a.kind != b.kind:
            raise ApiError(400, "KIND_MISMATCH", f"cannot compare {a.kind} and {b.kind} documents")
        if a.kind == "metamodel":
            report: DiffReport = diff_metamodels(a.payload, b.payload)
        else:
            report = diff_instances(a.payload, b.payload, _optional_reference(body))
        return report.to_json()

    def check_compliance(self, body: dict) -> dict:
        mm = _metamodel(_field(body, "metamodel"))
        doc = _document(_field(body, "instance"))
        _, inst = _conforming_instance({"metamodel": body["metamodel"]}, doc)
        constraints = parse_constraints(_field(body, "rules", str))
        return check_compliance(mm, inst, constraints).to_json()

    def apply_change(self, body: dict) -> dict:
        structured = body.get("structured")
        freeform = body.get("freeform")
        if (structured is None) == (freeform is None):
            raise ApiError(400, "BAD_CHANGE_REQUEST", "give exactly one of 'structured' or 'freeform'")
        mode = body.get("mode", "structured" if structured is not None else "freeform")
        if mode not in ("structured", "freeform") or (mode == "structured") != (structured is not None):
            raise ApiError(400, "BAD_CHANGE_REQUEST", "'mode' does not match the populated field")
        doc = _document(_field(body, "targetInstance"))
        mm, inst = _conforming_instance(body, doc)
        rules = body.get("rules") or ""
        if not isinstance(rules, str):
            raise ApiError(400, "BAD_TYPE", "'rules' must be OCL text")
        constraints = parse_constraints(rules)
        if structured is not None:
            if not isinstance(structured, list):
                raise ApiError(400, "BAD_TYPE", "'structured' must be a list of edits")
            edits = [Edit.from_json(e) for e in structured]
        else:
            if not isinstance(freeform, str):
                raise ApiError(400, "BAD_TYPE", "'freeform' must be text")
            edits = translate_freeform(self.backend, freeform, inst)
        return run_change(mm, inst, edits, constraints).to_json()


def create_app(settings: Optional[Settings] = None, backend: Any = "from-settings") -> FastAPI:
    """Build the application.  ``backend`` overrides the one named in ``settings``."""
    settings = settings or Settings.from_env()
    if backend == "from-settings":
        backend = backend_from_settings(settings)
    handlers = Handlers(backend)
    app = FastAPI(title="mbelens", version="0.1.0")
    app.state.backend = backend

    def route(path: str, fn: Callable[[dict], dict]) -> None:
        async def endpoint(request: Request) -> Response:
            raw = await request.body()
            try:
                body = loads_strict(raw)
                if not isinstance(body, dict):
                    raise ApiError(400, "BAD_TYPE", "request body must be a JSON object")
                result = await run_in_threadpool(fn, body)
            except Exception as exc:  # noqa: BLE001 - translated or re-raised
                err = _translate(exc)
                return _response(err.status, err.body)
            return _response(200, result)

        endpoint.__name__ = path.strip("/")
        app.add_api_route(path, endpoint, methods=["POST"])

    route("/extractSensors", handlers.extract_sensors)
    route("/extractActuators", handlers.extract_actuators)
    route("/extractElementProperties", handlers.extract_element_properties)
    route("/detectDifferences", handlers.detect_differences)
    route("/checkCompliance", handlers.check_compliance)
    route("/applyChange", handlers.apply_change)

    @app.get("/health")
    async def health() -> Response:
        return _response(200, {"status": "ok", "backendConfigured": backend is not None})

    return app


def serve(settings: Optional[Settings] = None) -> None:
    import uvicorn

    settings = settings or Settings.from_env()
    host, port = settings.listen_host_port
    uvicorn.run(create_app(settings), host=host, port=port)
