"""Canonical JSON documents for metamodels and instances.

Parsing is strict: unknown keys, missing keys and wrongly typed values are
rejected with a :class:`ParseError` whose ``path`` is a JSON pointer into the
input.  Emission is deterministic (fixed key order, two-space indentation,
trailing newline), and ``parse(emit(x)) == x`` for every valid value.

Object-reference slot values are written as ``{"$ref": "<object id>"}``.
Slot and link maps are emitted with sorted keys so that equal values always
produce identical bytes.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Any, Optional, Union

from .model import (
    AttributeDef,
    Instance,
    MetaClass,
    Metamodel,
    ModelObject,
    Multiplicity,
    ObjectRef,
    OperationDef,
    Param,
    Relation,
    ValidationIssue,
    validate_instance,
    validate_metamodel,
)

_MULTIPLICITY_RE = re.compile(r"(\d+)\.\.(\d+|\*)\Z")


class ParseError(Exception):
    def __init__(self, path: str, code: str, message: str):
        super().__init__(f"{code} at {path or '/'}: {message}")
        self.path = path
        self.code = code
        self.message = message

    def to_json(self) -> dict:
        return {"code": self.code, "path": self.path, "message": self.message}


@dataclass(frozen=True)
class ModelDocument:
    kind: str
    payload: Union[Metamodel, Instance]
    issues: tuple[ValidationIssue, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.issues


# -- parsing -----------------------------------------------------------------


class _DuplicateKey(ValueError):
    pass


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict:
    result: dict = {}
    for key, value in pairs:
        if key in result:
            raise _DuplicateKey(key)
        result[key] = value
    return result


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name} is not allowed")


def loads_strict(text: Union[bytes, str]) -> Any:
    """json.loads that rejects duplicate keys and non-finite numbers."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("", "MALFORMED_JSON", f"input is not UTF-8: {exc}") from None
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except _DuplicateKey as exc:
        raise ParseError("", "DUPLICATE_KEY", f"key {exc.args[0]!r} appears twice") from None
    except ValueError as exc:
        raise ParseError("", "MALFORMED_JSON", str(exc)) from None


def _escape(token: str) -> str:
    return token.replace("~", "~0").replace("/", "~1")


def _fields(obj: Any, path: str, required: tuple[str, ...]) -> dict:
    if not isinstance(obj, dict):
        raise ParseError(path, "BAD_TYPE", "expected an object")
    for key in required:
        if key not in obj:
            raise ParseError(f"{path}/{_escape(key)}", "MISSING_FIELD", f"missing field {key!r}")
    for key in obj:
        if key not in required:
            raise ParseError(f"{path}/{_escape(key)}", "UNKNOWN_FIELD", f"unknown field {key!r}")
    return obj


def _str(obj: dict, key: str, path: str) -> str:
    value = obj[key]
    if not isinstance(value, str):
        raise ParseError(f"{path}/{key}", "BAD_TYPE", f"{key!r} must be a string")
    return value


def _list(obj: dict, key: str, path: str) -> list:
    value = obj[key]
    if not isinstance(value, list):
        raise ParseError(f"{path}/{key}", "BAD_TYPE", f"{key!r} must be an array")
    return value


def parse_multiplicity(text: str, path: str = "") -> Multiplicity:
    match = _MULTIPLICITY_RE.match(text) if isinstance(text, str) else None
    if match is None:
        raise ParseError(path, "BAD_MULTIPLICITY", f"multiplicity {text!r} is not of the form lo..hi")
    lower = int(match.group(1))
    upper = None if match.group(2) == "*" else int(match.group(2))
    if upper is not None and (upper < 1 or lower > upper):
        raise ParseError(path, "BAD_MULTIPLICITY", f"multiplicity {text!r} has an empty range")
    return Multiplicity(lower, upper)


def _typed(obj: dict, path: str) -> tuple[str, str]:
    _fields(obj, path, ("name", "type"))
    return _str(obj, "name", path), _str(obj, "type", path)


def metamodel_from_json(obj: Any, path: str = "") -> Metamodel:
    _fields(obj, path, ("kind", "name", "classes", "relations"))
    if obj["kind"] != "metamodel":
        raise ParseError(f"{path}/kind", "BAD_KIND", f"expected kind 'metamodel', got {obj['kind']!r}")
    classes = []
    for i, raw in enumerate(_list(obj, "classes", path)):
        cpath = f"{path}/classes/{i}"
        _fields(raw, cpath, ("name", "abstract", "supertypes", "attributes", "operations"))
        if not isinstance(raw["abstract"], bool):
            raise ParseError(f"{cpath}/abstract", "BAD_TYPE", "'abstract' must be a boolean")
        supertypes = _list(raw, "supertypes", cpath)
        for j, sup in enumerate(supertypes):
            if not isinstance(sup, str):
                raise ParseError(f"{cpath}/supertypes/{j}", "BAD_TYPE", "supertype must be a string")
        attributes = tuple(
            AttributeDef(*_typed(a, f"{cpath}/attributes/{j}"))
            for j, a in enumerate(_list(raw, "attributes", cpath))
        )
        operations = []
        for j, op in enumerate(_list(raw, "operations", cpath)):
            opath = f"{cpath}/operations/{j}"
            _fields(op, opath, ("name", "params", "returns"))
            params = tuple(
                Param(*_typed(p, f"{opath}/params/{k}"))
                for k, p in enumerate(_list(op, "params", opath))
            )
            returns = op["returns"]
            if returns is not None and not isinstance(returns, str):
                raise ParseError(f"{opath}/returns", "BAD_TYPE", "'returns' must be a string or null")
            operations.append(OperationDef(_str(op, "name", opath), params, returns))
        classes.append(MetaClass(
            name=_str(raw, "name", cpath),
            abstract=raw["abstract"],
            supertypes=tuple(supertypes),
            attributes=attributes,
            operations=tuple(operations),
        ))
    relations = []
    for i, raw in enumerate(_list(obj, "relations", path)):
        rpath = f"{path}/relations/{i}"
        _fields(raw, rpath, ("kind", "name", "source", "target", "multiplicity"))
        kind = _str(raw, "kind", rpath)
        if kind not in ("association", "composition", "aggregation"):
            raise ParseError(f"{rpath}/kind", "BAD_RELATION_KIND", f"unknown relation kind {kind!r}")
        relations.append(Relation(
            kind=kind,
            name=_str(raw, "name", rpath),
            source=_str(raw, "source", rpath),
            target=_str(raw, "target", rpath),
            multiplicity=parse_multiplicity(_str(raw, "multiplicity", rpath), f"{rpath}/multiplicity"),
        ))
    return Metamodel(_str(obj, "name", path), tuple(classes), tuple(relations))


def scalar_from_json(value: Any, path: str) -> Any:
    if isinstance(value, bool) or isinstance(value, (int, str)):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ParseError(path, "BAD_VALUE", "real values must be finite")
        return value
    if isinstance(value, dict):
        _fields(value, path, ("$ref",))
        if not isinstance(value["$ref"], str):
            raise ParseError(f"{path}/$ref", "BAD_TYPE", "'$ref' must be a string")
        return ObjectRef(value["$ref"])
    raise ParseError(path, "BAD_VALUE", f"unsupported slot value {value!r}")


def instance_from_json(obj: Any, path: str = "") -> Instance:
    _fields(obj, path, ("kind", "metamodel", "objects"))
    if obj["kind"] != "instance":
        raise ParseError(f"{path}/kind", "BAD_KIND", f"expected kind 'instance', got {obj['kind']!r}")
    objects = []
    for i, raw in enumerate(_list(obj, "objects", path)):
        opath = f"{path}/objects/{i}"
        _fields(raw, opath, ("id", "class", "slots", "links"))
        slots_raw = raw["slots"]
        if not isinstance(slots_raw, dict):
            raise ParseError(f"{opath}/slots", "BAD_TYPE", "'slots' must be an object")
        slots = {k: scalar_from_json(v, f"{opath}/slots/{_escape(k)}") for k, v in slots_raw.items()}
        links_raw = raw["links"]
        if not isinstance(links_raw, dict):
            raise ParseError(f"{opath}/links", "BAD_TYPE", "'links' must be an object")
        links = {}
        for name, targets in links_raw.items():
            lpath = f"{opath}/links/{_escape(name)}"
            if not isinstance(targets, list) or not all(isinstance(t, str) for t in targets):
                raise ParseError(lpath, "BAD_TYPE", "a link must be an array of object ids")
            links[name] = tuple(targets)
        objects.append(ModelObject(_str(raw, "id", opath), _str(raw, "class", opath), slots, links))
    return Instance(_str(obj, "metamodel", path), tuple(objects))


def document_from_json(obj: Any, metamodel: Optional[Metamodel] = None) -> ModelDocument:
    """Build a document from already-decoded JSON.

    Metamodels get their validation issues attached; instances get them only
    when ``metamodel`` is supplied.
    """
    if not isinstance(obj, dict):
        raise ParseError("", "BAD_TYPE", "a model document must be a JSON object")
    if "kind" not in obj:
        raise ParseError("/kind", "MISSING_FIELD", "missing field 'kind'")
    if obj["kind"] == "metamodel":
        mm = metamodel_from_json(obj)
        return ModelDocument("metamodel", mm, tuple(validate_metamodel(mm)))
    if obj["kind"] == "instance":
        inst = instance_from_json(obj)
        issues = () if metamodel is None else tuple(validate_instance(inst, metamodel))
        return ModelDocument("instance", inst, issues)
    raise ParseError("/kind", "BAD_KIND", f"unknown document kind {obj['kind']!r}")


def parse_model_document(text: Union[bytes, str], metamodel: Optional[Metamodel] = None) -> ModelDocument:
    return document_from_json(loads_strict(text), metamodel)


# -- emission ----------------------------------------------------------------


def metamodel_to_json(mm: Metamodel) -> dict:
    return {
        "kind": "metamodel",
        "name": mm.name,
        "classes": [
            {
                "name": c.name,
                "abstract": c.abstract,
                "supertypes": list(c.supertypes),
                "attributes": [{"name": a.name, "type": a.type} for a in c.attributes],
                "operations": [
                    {
                        "name": op.name,
                        "params": [{"name": p.name, "type": p.type} for p in op.params],
                        "returns": op.returns,
                    }
                    for op in c.operations
                ],
            }
            for c in mm.classes
        ],
        "relations": [
            {
                "kind": r.kind,
                "name": r.name,
                "source": r.source,
                "target": r.target,
                "multiplicity": str(r.multiplicity),
            }
            for r in mm.relations
        ],
    }


def scalar_to_json(value: Any) -> Any:
    if isinstance(value, ObjectRef):
        return {"$ref": value.id}
    return value


def instance_to_json(inst: Instance) -> dict:
    return {
        "kind": "instance",
        "metamodel": inst.metamodel_name,
        "objects": [
            {
                "id": o.id,
                "class": o.class_name,
                "slots": {k: scalar_to_json(o.slots[k]) for k in sorted(o.slots)},
                "links": {k: list(o.links[k]) for k in sorted(o.links)},
            }
            for o in inst.objects
        ],
    }


def document_to_json(payload: Union[ModelDocument, Metamodel, Instance]) -> dict:
    if isinstance(payload, ModelDocument):
        payload = payload.payload
    if isinstance(payload, Metamodel):
        return metamodel_to_json(payload)
    return instance_to_json(payload)


def emit_model_document(doc: Union[ModelDocument, Metamodel, Instance]) -> bytes:
    text = json.dumps(document_to_json(doc), indent=2, ensure_ascii=False, allow_nan=False)
    return (text + "\n").encode("utf-8")


def canonicalize(text: Union[bytes, str]) -> bytes:
    return emit_model_document(parse_model_document(text))


def load_metamodel(text: Union[bytes, str]) -> Metamodel:
    """Parse a metamodel document and insist that it validates."""
    doc = parse_model_document(text)
    if doc.kind != "metamodel":
        raise ParseError("/kind", "BAD_KIND", "expected a metamodel document")
    if doc.issues:
        first = doc.issues[0]
        raise ParseError("", "INVALID_MODEL", f"{first.code} at {first.path}: {first.message}")
    return doc.payload
