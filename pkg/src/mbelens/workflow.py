"""Change requests against a model instance, and the compliance feedback loop.

Edits are applied to a copy of the instance; the result is diffed against
the original, checked for structural conformance and then against the
constraint set.  A non-compliant result is still returned, together with
human-readable feedback, so the caller can decide what to keep.

Free-form requests are turned into edits by a backend.  The mock backend
understands one edit per line (or separated by ``;``)::

    set <object>.<attribute> = <value>
    add <Class> <id>
    remove <id>
    link <object>.<relation> -> <target>
    unlink <object>.<relation> -> <target>
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

from .diff import DiffReport, diff_instances
from .gateway import Backend, BackendError, MockBackend, extract_json_block
from .model import (
    Instance,
    Metamodel,
    ModelObject,
    ObjectRef,
    PRIMITIVE_TYPES,
    ValidationIssue,
    index,
    validate_instance,
)
from .modelformat import instance_to_json, scalar_from_json, ParseError
from .ocl import ComplianceResult, Constraint, check_compliance, explain_violation

EDIT_OPS = ("setSlot", "addObject", "removeObject", "addLink", "removeLink")

DEFAULT_ROLES = (
    ("sensors", "Sensor"),
    ("actuators", "Actuator"),
    ("nodes", "Component"),
    ("tasks", "ProcessingTask"),
)


class EditError(Exception):
    def __init__(self, message: str, code: str = "UNRESOLVED_EDIT"):
        super().__init__(message)
        self.code = code
        self.message = message


class NonConformantError(Exception):
    def __init__(self, issues: Sequence[ValidationIssue]):
        super().__init__(f"{len(issues)} conformance issue(s)")
        self.issues = tuple(issues)


@dataclass(frozen=True)
class Edit:
    op: str
    object: Optional[str] = None
    attribute: Optional[str] = None
    value: Any = None
    class_name: Optional[str] = None
    relation: Optional[str] = None
    target: Optional[str] = None
    slots: Optional[dict] = None
    links: Optional[dict] = None

    @classmethod
    def from_json(cls, obj: Any) -> "Edit":
        if isinstance(obj, str):
            return parse_edit_line(obj)
        if not isinstance(obj, dict) or obj.get("op") not in EDIT_OPS:
            raise EditError(f"an edit must be an object with 'op' in {', '.join(EDIT_OPS)}")
        op = obj["op"]
        allowed = {
            "setSlot": {"op", "object", "attribute", "value"},
            "addObject": {"op", "id", "class", "slots", "links"},
            "removeObject": {"op", "id"},
            "addLink": {"op", "object", "relation", "target"},
            "removeLink": {"op", "object", "relation", "target"},
        }[op]
        extra = set(obj) - allowed
        if extra:
            raise EditError(f"unknown field(s) {', '.join(sorted(extra))} in {op} edit")
        required = allowed - {"op", "slots", "links", "value"}
        missing = [k for k in sorted(required) if not isinstance(obj.get(k), str)]
        if op == "setSlot" and "value" not in obj:
            missing.append("value")
        if missing:
            raise EditError(f"{op} edit lacks {', '.join(missing)}")
        if op in ("addObject", "removeObject"):
            return cls(op, object=obj["id"], class_name=obj.get("class"),
                       slots=obj.get("slots"), links=obj.get("links"))
        return cls(op, object=obj["object"], attribute=obj.get("attribute"), value=obj.get("value"),
                   relation=obj.get("relation"), target=obj.get("target"))

    def to_json(self) -> dict:
        if self.op == "setSlot":
            return {"op": self.op, "object": self.object, "attribute": self.attribute, "value": self.value}
        if self.op == "addObject":
            body = {"op": self.op, "id": self.object, "class": self.class_name}
            if self.slots:
                body["slots"] = self.slots
            if self.links:
                body["links"] = self.links
            return body
        if self.op == "removeObject":
            return {"op": self.op, "id": self.object}
        return {"op": self.op, "object": self.object, "relation": self.relation, "target": self.target}


_SET_RE = re.compile(r"^set\s+([A-Za-z][\w\-]*)\.([A-Za-z][\w\-]*)\s*=\s*(.+)$", re.IGNORECASE)
_ADD_RE = re.compile(r"^add\s+([A-Za-z][\w\-]*)\s+([A-Za-z][\w\-]*)$", re.IGNORECASE)
_REMOVE_RE = re.compile(r"^remove\s+([A-Za-z][\w\-]*)$", re.IGNORECASE)
_LINK_RE = re.compile(r"^(link|unlink)\s+([A-Za-z][\w\-]*)\.([A-Za-z][\w\-]*)\s*->\s*([A-Za-z][\w\-]*)$",
                      re.IGNORECASE)


def _literal(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except ValueError:
        pass
    if len(text) >= 2 and text[0] == text[-1] == "'":
        return text[1:-1]
    return text


def parse_edit_line(line: str) -> Edit:
    line = line.strip().rstrip(".").strip()
    if m := _SET_RE.match(line):
        return Edit("setSlot", object=m.group(1), attribute=m.group(2), value=_literal(m.group(3)))
    if m := _ADD_RE.match(line):
        return Edit("addObject", object=m.group(2), class_name=m.group(1))
    if m := _REMOVE_RE.match(line):
        return Edit("removeObject", object=m.group(1))
    if m := _LINK_RE.match(line):
        op = "addLink" if m.group(1).lower() == "link" else "removeLink"
        return Edit(op, object=m.group(2), relation=m.group(3), target=m.group(4))
    raise EditError(f"cannot understand change {line!r}")


def parse_edit_script(text: str) -> list[Edit]:
    parts = [p.strip() for p in re.split(r"[;\n]", text)]
    return [parse_edit_line(p) for p in parts if p and not p.startswith("#")]


# -- applying edits ----------------------------------------------------------


def _coerce(value: Any, type_ref: str, path: str) -> Any:
    if value is None:
        return None
    if type_ref not in PRIMITIVE_TYPES:
        if isinstance(value, str):
            return ObjectRef(value)
        if isinstance(value, dict):
            try:
                return scalar_from_json(value, path)
            except ParseError as exc:
                raise EditError(exc.message) from None
        return value
    if isinstance(value, (dict, list)):
        raise EditError(f"value for {path} must be a scalar")
    if type_ref == "real" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def apply_edits(mm: Metamodel, inst: Instance, edits: Sequence[Edit]) -> Instance:
    """Return a new instance with ``edits`` applied in order.

    Names are resolved under normalization.  Raises EditError when an edit
    references something that does not exist.
    """
    idx = index(mm)
    objects = list(inst.objects)

    def position(object_id: str) -> int:
        current = Instance(inst.metamodel_name, tuple(objects))
        obj = current.find(object_id)
        if obj is None:
            raise EditError(f"unknown object {object_id!r}")
        return objects.index(obj)

    for edit in edits:
        if edit.op == "setSlot":
            i = position(edit.object)
            obj = objects[i]
            if idx.lookup(obj.class_name) is None:
                raise EditError(f"class {obj.class_name!r} of {obj.id!r} does not resolve")
            attr = idx.find_attribute(obj.class_name, edit.attribute)
            if attr is None:
                raise EditError(f"{obj.class_name} has no attribute {edit.attribute!r}")
            slots = dict(obj.slots)
            value = _coerce(edit.value, attr.type, f"{obj.id}.{attr.name}")
            if value is None:
                slots.pop(attr.name, None)
            else:
                slots[attr.name] = value
            objects[i] = replace(obj, slots=slots)
        elif edit.op == "addObject":
            if Instance(inst.metamodel_name, tuple(objects)).find(edit.object) is not None:
                raise EditError(f"object {edit.object!r} already exists", "DUPLICATE_OBJECT")
            cls = idx.lookup(edit.class_name or "")
            if cls is None:
                raise EditError(f"unknown class {edit.class_name!r}")
            slots = {}
            for name, raw in (edit.slots or {}).items():
                attr = idx.find_attribute(cls.name, name)
                if attr is None:
                    raise EditError(f"{cls.name} has no attribute {name!r}")
                slots[attr.name] = _coerce(raw, attr.type, f"{edit.object}.{attr.name}")
            links = {}
            for name, targets in (edit.links or {}).items():
                rel = idx.find_relation(cls.name, name)
                if rel is None:
                    raise EditError(f"{cls.name} has no relation {name!r}")
                links[rel.name] = tuple(targets)
            objects.append(ModelObject(edit.object, cls.name, slots, links))
        elif edit.op == "removeObject":
            i = position(edit.object)
            gone = objects.pop(i).id
            cleaned = []
            for obj in objects:
                links = {k: tuple(t for t in v if t != gone) for k, v in obj.links.items()}
                slots = {k: v for k, v in obj.slots.items() if not (isinstance(v, ObjectRef) and v.id == gone)}
                cleaned.append(replace(obj, links=links, slots=slots) if (links != obj.links or slots != obj.slots) else obj)
            objects = cleaned
        else:
            i = position(edit.object)
            obj = objects[i]
            if idx.lookup(obj.class_name) is None:
                raise EditError(f"class {obj.class_name!r} of {obj.id!r} does not resolve")
            rel = idx.find_relation(obj.class_name, edit.relation or "")
            if rel is None:
                raise EditError(f"{obj.class_name} has no relation {edit.relation!r}")
            target = Instance(inst.metamodel_name, tuple(objects)).find(edit.target or "")
            if target is None:
                raise EditError(f"unknown link target {edit.target!r}")
            current = list(obj.links.get(rel.name, ()))
            if edit.op == "addLink":
                current.append(target.id)
            elif target.id in current:
                current.remove(target.id)
            else:
                raise EditError(f"{obj.id}.{rel.name} does not link to {target.id!r}")
            links = dict(obj.links)
            links[rel.name] = tuple(current)
            objects[i] = replace(obj, links=links)
    return Instance(inst.metamodel_name, tuple(objects))


# -- change plan -------------------------------------------------------------


def change_plan(mm: Metamodel, old: Instance, new: Instance, report: DiffReport,
                roles: Sequence[tuple[str, str]] = DEFAULT_ROLES) -> dict:
    """Diff entries grouped by element role; input for downstream code generation."""
    idx = index(mm)
    active = [(label, cls) for label, cls in roles if idx.lookup(cls) is not None]
    groups = {label: {"added": [], "removed": [], "modified": []} for label, _ in active}
    groups["other"] = {"added": [], "removed": [], "modified": []}

    def role_of(object_id: str) -> str:
        obj = new.find(object_id) or old.find(object_id)
        if obj is not None and idx.lookup(obj.class_name) is not None:
            for label, cls in active:
                if idx.conforms(obj.class_name, cls):
                    return label
        return "other"

    for entry in report.entries:
        object_id = entry.path.split(".")[0]
        group = groups[role_of(object_id)]
        if entry.kind == "ObjectAdded":
            group["added"].append(object_id)
        elif entry.kind == "ObjectRemoved":
            group["removed"].append(object_id)
        else:
            for item in group["modified"]:
                if item["element"] == object_id:
                    item["changes"].append(entry.to_json())
                    break
            else:
                group["modified"].append({"element": object_id, "changes": [entry.to_json()]})
    return groups


# -- the workflow ------------------------------------------------------------


@dataclass(frozen=True)
class WorkflowOutcome:
    updated_instance: Instance
    diff: DiffReport
    compliance: ComplianceResult
    feedback: tuple[str, ...]
    change_plan: dict

    def to_json(self) -> dict:
        return {
            "updatedInstance": instance_to_json(self.updated_instance),
            "diff": self.diff.to_json(),
            "compliance": self.compliance.to_json(),
            "feedback": list(self.feedback),
            "changePlan": self.change_plan,
        }


def run_change(mm: Metamodel, inst: Instance, edits: Sequence[Edit],
               constraints: Sequence[Constraint]) -> WorkflowOutcome:
    """Apply, diff, check.  Raises EditError or NonConformantError."""
    updated = apply_edits(mm, inst, edits)
    issues = validate_instance(updated, mm)
    if issues:
        raise NonConformantError(issues)
    report = diff_instances(inst, updated, mm)
    compliance = check_compliance(mm, updated, list(constraints))
    feedback = tuple(explain_violation(v) for v in (*compliance.violations, *compliance.errors))
    return WorkflowOutcome(updated, report, compliance, feedback, change_plan(mm, inst, updated, report))


EDIT_SYSTEM_PROMPT = (
    "You translate change requests for an automotive system model instance into primitive edits. "
    "Reply with exactly one fenced ```json block of the form {\"edits\": [...]} where each edit is one of "
    '{"op": "setSlot", "object": id, "attribute": name, "value": scalar}, '
    '{"op": "addObject", "id": id, "class": className}, {"op": "removeObject", "id": id}, '
    '{"op": "addLink", "object": id, "relation": name, "target": id}, '
    '{"op": "removeLink", "object": id, "relation": name, "target": id}.'
)


def translate_freeform(backend: Optional[Backend], text: str, inst: Instance) -> list[Edit]:
    """Map a free-text change request to edits using ``backend``."""
    if backend is None:
        raise BackendError("BACKEND_UNREACHABLE", "no backend is configured for free-form changes")
    if isinstance(backend, MockBackend):
        return parse_edit_script(text)
    complete_raw = getattr(backend, "complete_raw", None)
    if complete_raw is None:
        raise BackendError("BACKEND_UNSUPPORTED", f"backend {backend.name!r} cannot translate changes")
    document = json.dumps(instance_to_json(inst), indent=2)
    body = {
        "model": getattr(backend, "model", ""),
        "messages": [
            {"role": "system", "content": EDIT_SYSTEM_PROMPT},
            {"role": "user", "content": f"Current instance:\n```json\n{document}\n```\n\nChange request: {text}"},
        ],
        "temperature": 0,
    }
    raw = complete_raw(body)
    data = extract_json_block(raw)
    if not isinstance(data, dict) or not isinstance(data.get("edits"), list):
        raise BackendError("BACKEND_BAD_RESPONSE", "backend did not return an edit list")
    return [Edit.from_json(e) for e in data["edits"]]
