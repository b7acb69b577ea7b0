"""Prompting multimodal models about diagrams, and reading their answers back.

A :class:`PromptTask` names one of the diagram questions.  ``build_prompt``
turns it into system/user text plus image attachments, a backend produces raw
text, and ``normalize_answer`` recovers a structured value from that text.

Two backends exist.  :class:`RemoteBackend` speaks the OpenAI-compatible
chat-completions protocol.  :class:`MockBackend` accepts only canonical
``ccs-json`` diagrams and answers by running the deterministic engines, which
makes the whole pipeline testable offline.
"""
from __future__ import annotations

import base64
import binascii
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Protocol, Union

import httpx

from . import query
from .bundled import bundled_metamodels
from .config import DEFAULT_MAX_CONCURRENCY, Settings
from .diff import diff_instances, diff_metamodels
from .model import Instance, Metamodel, ModelError
from .modelformat import (
    ModelDocument,
    ParseError,
    document_from_json,
    document_to_json,
    emit_model_document,
    scalar_to_json,
)
from .names import normalize_name

log = logging.getLogger(__name__)

PROMPT_VERSION = "1"
DEFAULT_SUBJECT = "Centralized Car Server Metamodel"

TASK_KINDS = (
    "ListClasses",
    "ListMembers",
    "KindOfQuery",
    "RelationChainQuery",
    "SubclassQuery",
    "ExtractRole",
    "ElementProperties",
    "DetectDifferences",
)

IMAGE_FORMAT = "image/png;base64"
CANONICAL_FORMAT = "ccs-json"


class BackendError(Exception):
    def __init__(self, code: str, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status

    def to_json(self) -> dict:
        body = {"code": self.code, "message": self.message}
        if self.status is not None:
            body["status"] = self.status
        return body


class PayloadError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


# -- payloads and tasks ------------------------------------------------------


@dataclass(frozen=True)
class DiagramPayload:
    format: str
    data: Union[bytes, ModelDocument]

    @classmethod
    def image(cls, png: bytes) -> "DiagramPayload":
        return cls(IMAGE_FORMAT, png)

    @classmethod
    def canonical(cls, doc: ModelDocument) -> "DiagramPayload":
        return cls(CANONICAL_FORMAT, doc)

    @classmethod
    def from_json(cls, obj: Any) -> "DiagramPayload":
        """Decode ``{"format": ..., "data": ...}``; raises PayloadError or ParseError."""
        if not isinstance(obj, dict) or set(obj) != {"format", "data"}:
            raise PayloadError("BAD_PAYLOAD", "a diagram must be an object with exactly 'format' and 'data'")
        fmt, data = obj["format"], obj["data"]
        if fmt == IMAGE_FORMAT:
            if not isinstance(data, str):
                raise PayloadError("BAD_PAYLOAD", "image data must be a base64 string")
            try:
                raw = base64.b64decode(data, validate=True)
            except (binascii.Error, ValueError):
                raise PayloadError("BAD_BASE64", "image data is not valid base64") from None
            return cls(IMAGE_FORMAT, raw)
        if fmt == CANONICAL_FORMAT:
            return cls(CANONICAL_FORMAT, document_from_json(data))
        raise PayloadError("BAD_PAYLOAD", f"unknown diagram format {fmt!r}")

    @property
    def is_image(self) -> bool:
        return self.format == IMAGE_FORMAT

    @property
    def document(self) -> ModelDocument:
        if not isinstance(self.data, ModelDocument):
            raise BackendError("MOCK_NEEDS_CANONICAL", "this diagram is an image, not a canonical model document")
        return self.data

    def data_url(self) -> str:
        return "data:image/png;base64," + base64.b64encode(self.data).decode("ascii")


@dataclass(frozen=True)
class PromptTask:
    kind: str
    arguments: Mapping[str, Any] = field(default_factory=dict)
    diagrams: tuple[DiagramPayload, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        expected = 2 if self.kind == "DetectDifferences" else 1
        if len(self.diagrams) != expected:
            raise ValueError(f"{self.kind} takes exactly {expected} diagram(s), got {len(self.diagrams)}")

    def arg(self, name: str, default: Any = None) -> Any:
        return self.arguments.get(name, default)


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str
    attachments: tuple[str, ...]
    task: PromptTask


@dataclass(frozen=True)
class BackendAnswer:
    raw_text: str
    structured: Optional[Any] = None
    latency_ms: int = 0


@dataclass(frozen=True)
class NormalizedAnswer:
    kind: str
    value: Any
    unparsed_lines: tuple[str, ...] = ()


# -- prompt construction -----------------------------------------------------

_SCHEMAS = {
    "ListClasses": '{"classes": [string], "count": integer}',
    "ListMembers": ('{"attributes": [{"name": string, "type": string}], '
                    '"operations": [{"name": string, "params": [{"name": string, "type": string}], '
                    '"returns": string or null}]}'),
    "KindOfQuery": '{"answers": [boolean]}  (one boolean per question part, in order)',
    "RelationChainQuery": '{"chain": [string]}  (class names from the first to the second class)',
    "SubclassQuery": '{"subclasses": [string]}',
    "ExtractRole": '{"elements": [{"id": string, "class": string}]}',
    "ElementProperties": '{"properties": [{"name": string, "type": string, "value": any}]}',
    "DetectDifferences": ('{"differences": [{"kind": string, "path": string, '
                          '"before": string or null, "after": string or null}]}  '
                          '(kind is e.g. ClassRemoved, ClassAdded, AttributeAdded, SlotValueChanged)'),
}

SYSTEM_PREAMBLE = (
    "You analyse model-based engineering diagrams (UML/EMF class diagrams and model instances) "
    "for automotive software. Answer only from what the diagram shows; do not invent elements. "
    "Reply with exactly one fenced ```json block that matches this schema:\n"
)


def _question(task: PromptTask) -> str:
    kind = task.kind
    if kind == "ListClasses":
        return "list all classes in this UML diagram"
    if kind == "ListMembers":
        return f"list all properties and functions in {task.arg('class')} class"
    if kind == "KindOfQuery":
        pairs = task.arg("pairs") or []
        parts = [f"is {a} one of the {b}?" for a, b in pairs]
        if len(parts) == 1:
            return parts[0]
        return " / ".join(f"{p} ({chr(ord('A') + i)})" for i, p in enumerate(parts))
    if kind == "RelationChainQuery":
        return f"list all classes on the relation chain between {task.arg('from')} and {task.arg('to')}"
    if kind == "SubclassQuery":
        if task.arg("direct", True):
            return f"list all subclasses that {task.arg('class')} class has"
        return f"list all direct and indirect subclasses that {task.arg('class')} class has"
    if kind == "ExtractRole":
        return f"list all elements of kind {task.arg('role')} in this diagram, with the class of each element"
    if kind == "ElementProperties":
        return f"list all properties and their values for the element {task.arg('element')}"
    return "what are the differences between these diagrams?"


def build_prompt(task: PromptTask) -> Prompt:
    """Deterministic prompt text for ``task``; image diagrams become attachments."""
    subject = task.arg("subject", DEFAULT_SUBJECT)
    if task.kind == "DetectDifferences":
        lead = f"Given two UML diagrams about {subject}, "
    else:
        lead = f"Given a UML diagram about {subject}, "
    user = lead + _question(task)
    attachments = []
    for i, diagram in enumerate(task.diagrams, start=1):
        if diagram.is_image:
            attachments.append(diagram.data_url())
        else:
            label = f"Diagram {i}" if len(task.diagrams) > 1 else "The diagram"
            text = emit_model_document(diagram.document).decode("utf-8")
            user += f"\n\n{label} is given as a JSON model document:\n```json\n{text}```"
    system = SYSTEM_PREAMBLE + _SCHEMAS[task.kind] + f"\n(prompt version {PROMPT_VERSION})"
    return Prompt(system, user, tuple(attachments), task)


# -- backends ----------------------------------------------------------------


class Backend(Protocol):
    name: str

    def complete(self, prompt: Prompt) -> str: ...


MetamodelResolver = Callable[[str], Optional[Metamodel]]


def _bundled_resolver(name: str) -> Optional[Metamodel]:
    return bundled_metamodels().get(normalize_name(name))


def _metamodel_for(task: PromptTask, doc: ModelDocument, resolver: MetamodelResolver) -> Metamodel:
    if doc.kind == "metamodel":
        return doc.payload
    mm = task.arg("metamodel")
    if isinstance(mm, Metamodel):
        return mm
    found = resolver(doc.payload.metamodel_name)
    if found is None:
        raise ModelError("UNKNOWN_METAMODEL", f"metamodel {doc.payload.metamodel_name!r} is not known")
    return found


def _members_json(mm: Metamodel, class_name: str) -> dict:
    attrs, ops = query.list_members(mm, class_name)
    return {
        "attributes": [{"name": a.name, "type": a.type} for a in attrs],
        "operations": [
            {"name": o.name, "params": [{"name": p.name, "type": p.type} for p in o.params], "returns": o.returns}
            for o in ops
        ],
    }


def _require_kind(doc: ModelDocument, kind: str, task: PromptTask) -> None:
    if doc.kind != kind:
        raise ModelError("KIND_MISMATCH", f"{task.kind} needs a {kind} document, got a {doc.kind}")


def engine_answer(task: PromptTask, resolver: MetamodelResolver = _bundled_resolver) -> Any:
    """The deterministic answer to ``task``, shaped like ``NormalizedAnswer.value``."""
    doc = task.diagrams[0].document
    kind = task.kind
    if kind == "DetectDifferences":
        other = task.diagrams[1].document
        if doc.kind != other.kind:
            raise ModelError("KIND_MISMATCH", "cannot compare a metamodel with an instance")
        if doc.kind == "metamodel":
            report = diff_metamodels(doc.payload, other.payload)
        else:
            report = diff_instances(doc.payload, other.payload)
        return [e.to_json() for e in report.entries]
    if kind in ("ExtractRole", "ElementProperties"):
        _require_kind(doc, "instance", task)
        mm = _metamodel_for(task, doc, resolver)
        inst: Instance = doc.payload
        if kind == "ExtractRole":
            return [
                {"id": oid, "class": inst.find(oid).class_name}
                for oid in query.extract_by_role(mm, inst, task.arg("role"))
            ]
        return [
            {"name": p.name, "type": p.type, "value": None if p.value is query.UNSET else scalar_to_json(p.value)}
            for p in query.element_properties(mm, inst, task.arg("element"))
        ]
    _require_kind(doc, "metamodel", task)
    mm = doc.payload
    if kind == "ListClasses":
        return query.list_classes(mm)
    if kind == "ListMembers":
        return _members_json(mm, task.arg("class"))
    if kind == "KindOfQuery":
        return [query.is_kind_of(mm, a, b) for a, b in task.arg("pairs")]
    if kind == "RelationChainQuery":
        return list(query.relation_chain(mm, task.arg("from"), task.arg("to")).class_names)
    return sorted(query.subclasses_of(mm, task.arg("class"), task.arg("direct", True)))


def _answer_payload(kind: str, value: Any) -> dict:
    if kind == "ListClasses":
        return {"classes": value, "count": len(value)}
    if kind == "ListMembers":
        return value
    key = {
        "KindOfQuery": "answers",
        "RelationChainQuery": "chain",
        "SubclassQuery": "subclasses",
        "ExtractRole": "elements",
        "ElementProperties": "properties",
        "DetectDifferences": "differences",
    }[kind]
    return {key: value}


def fenced_json(payload: Any) -> str:
    return "```json\n" + json.dumps(payload, indent=2, ensure_ascii=False) + "\n```\n"


class MockBackend:
    """Answers canonical diagrams with the deterministic engines.  Stateless."""

    name = "mock"

    def __init__(self, resolver: MetamodelResolver = _bundled_resolver):
        self.resolver = resolver

    def complete(self, prompt: Prompt) -> str:
        task = prompt.task
        if any(d.is_image for d in task.diagrams):
            raise BackendError("MOCK_NEEDS_CANONICAL", "the mock backend only understands ccs-json diagrams")
        try:
            value = engine_answer(task, self.resolver)
        except ModelError as exc:
            # a real model would answer something; the mock states the failure plainly
            return f"I cannot answer this: {exc.message}"
        return fenced_json(_answer_payload(task.kind, value))


class RemoteBackend:
    """OpenAI-compatible chat-completions client with image content parts."""

    def __init__(
        self,
        base_url: str,
        model: str = "",
        api_key: str = "",
        timeout_s: float = 60.0,
        max_concurrency: int = DEFAULT_MAX_CONCURRENCY,
        max_retries: int = 2,
        backoff_s: float = 0.5,
        transport: Optional[httpx.BaseTransport] = None,
        name: Optional[str] = None,
    ):
        self.url = base_url.rstrip("/")
        if not self.url.endswith("/chat/completions"):
            self.url += "/chat/completions"
        self.model = model
        self.api_key = api_key
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.name = name or model or "remote"
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._client = httpx.Client(timeout=timeout_s, transport=transport)

    @classmethod
    def from_settings(cls, settings: Settings, **kwargs: Any) -> "RemoteBackend":
        return cls(settings.backend_url, settings.backend_model, settings.backend_key,
                   settings.backend_timeout_s, **kwargs)

    def request_body(self, prompt: Prompt) -> dict:
        content: list[dict] = [{"type": "text", "text": prompt.user}]
        content += [{"type": "image_url", "image_url": {"url": url}} for url in prompt.attachments]
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": content},
            ],
            "temperature": 0,
        }

    def complete(self, prompt: Prompt) -> str:
        return self.complete_raw(self.request_body(prompt))

    def complete_raw(self, body: dict) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        with self._slots:
            for attempt in range(self.max_retries + 1):
                try:
                    response = self._client.post(self.url, json=body, headers=headers)
                except httpx.TransportError as exc:
                    if attempt < self.max_retries:
                        delay = self.backoff_s * (2 ** attempt)
                        log.warning("backend transport failure (%s); retrying in %.2fs", exc, delay)
                        time.sleep(delay)
                        continue
                    raise BackendError("BACKEND_UNREACHABLE", f"cannot reach {self.url}: {exc}") from None
                break
        if not response.is_success:
            raise BackendError("BACKEND_REFUSED", f"backend answered HTTP {response.status_code}",
                               response.status_code)
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise BackendError("BACKEND_BAD_RESPONSE", "response is not a chat completion") from None
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        if not isinstance(content, str):
            raise BackendError("BACKEND_BAD_RESPONSE", "completion content is not text")
        return content

    def close(self) -> None:
        self._client.close()


def backend_from_settings(settings: Settings) -> Optional[Backend]:
    """The configured backend; ``MBE_BACKEND_URL=mock`` selects the mock."""
    if not settings.backend_url:
        return None
    if settings.backend_url == "mock":
        return MockBackend()
    return RemoteBackend.from_settings(settings)


_FENCE_RE = re.compile(r"```[ \t]*(?:json|JSON)?[ \t]*\r?\n(.*?)```", re.DOTALL)


def extract_json_block(text: str) -> Optional[Any]:
    """The first fenced block that parses as JSON, else the whole text if it is JSON."""
    for match in _FENCE_RE.finditer(text):
        try:
            return json.loads(match.group(1))
        except ValueError:
            continue
    stripped = text.strip()
    if stripped[:1] in ("{", "["):
        try:
            return json.loads(stripped)
        except ValueError:
            return None
    return None


def send_to_backend(backend: Optional[Backend], prompt: Prompt) -> BackendAnswer:
    if backend is None:
        raise BackendError("BACKEND_UNREACHABLE", "no backend is configured")
    started = time.perf_counter()
    raw = backend.complete(prompt)
    latency = int((time.perf_counter() - started) * 1000)
    return BackendAnswer(raw, extract_json_block(raw), latency)


# -- answer normalization ----------------------------------------------------

_BULLET_RE = re.compile(r"^\s*(?:[-*•+]\s+|\d+[.)]\s*|\(?[a-zA-Z]\)\s+)")
_WORD_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9_\-]*")
_NAMEISH_RE = re.compile(r"[A-Za-z][A-Za-z0-9_\-]*(?: [A-Za-z][A-Za-z0-9_\-]*){0,2}\Z")
_SPLIT_RE = re.compile(r"\s*(?:,|;|->|→|=>|\band\b)\s*")
_BOOL_RE = re.compile(r"\b(yes|no|true|false)\b", re.IGNORECASE)
_TYPE_SYNONYMS = {
    "integer": "int", "int": "int", "long": "int",
    "real": "real", "float": "real", "double": "real", "number": "real",
    "string": "string", "str": "string", "text": "string",
    "bool": "bool", "boolean": "bool",
}


class _Names:
    """Known element names from a metamodel, matched under normalization."""

    def __init__(self, mm: Optional[Metamodel]):
        self.known: dict[str, str] = {}
        if mm is not None:
            for cls in mm.classes:
                self.known.setdefault(normalize_name(cls.name), cls.name)

    def canonical(self, text: str) -> Optional[str]:
        return self.known.get(normalize_name(text))

    def canonical_or_raw(self, text: str) -> str:
        return self.canonical(text) or text.strip()

    def find_in(self, line: str) -> list[str]:
        """Known names mentioned anywhere in ``line`` as one to three words, in order."""
        words = _WORD_RE.findall(line)
        found: list[str] = []
        i = 0
        while i < len(words):
            for width in (3, 2, 1):
                chunk = " ".join(words[i:i + width])
                name = self.canonical(chunk) if i + width <= len(words) else None
                if name is not None:
                    if name not in found:
                        found.append(name)
                    i += width
                    break
            else:
                i += 1
        return found


def _clean(line: str) -> str:
    line = line.replace("**", "").replace("`", "").strip()
    line = _BULLET_RE.sub("", line)
    return line.strip().rstrip(".").strip()


def _content_lines(text: str) -> list[str]:
    lines = []
    in_fence = False
    for raw in text.splitlines():
        if raw.strip().startswith("```"):
            in_fence = not in_fence
            continue
        if raw.strip():
            lines.append(raw)
    return lines


def _canonical_type(type_text: Optional[str], names: _Names) -> Optional[str]:
    if type_text is None:
        return None
    type_text = type_text.strip()
    return _TYPE_SYNONYMS.get(type_text.lower()) or names.canonical_or_raw(type_text)


def _parse_bool(token: Any) -> Optional[bool]:
    if isinstance(token, bool):
        return token
    if isinstance(token, str):
        match = _BOOL_RE.search(token)
        if match:
            return match.group(1).lower() in ("yes", "true")
    return None


def _name_list_from_lines(text: str, names: _Names) -> tuple[list[str], list[str]]:
    values: list[str] = []
    unparsed: list[str] = []
    for raw in _content_lines(text):
        line = _clean(raw)
        if not line or line.endswith(":"):
            unparsed.append(raw.strip())
            continue
        accepted: list[str] = []
        whole = names.canonical(line)
        if whole is not None:
            accepted.append(whole)
        else:
            for piece in _SPLIT_RE.split(line):
                piece = _clean(piece)
                if not piece:
                    continue
                known = names.canonical(piece)
                if known is not None:
                    accepted.append(known)
                elif _NAMEISH_RE.match(piece) and (not names.known or " " not in piece):
                    accepted.append(piece)
                else:
                    accepted.extend(names.find_in(piece))
        if accepted:
            values.extend(a for a in accepted if a not in values)
        else:
            unparsed.append(raw.strip())
    return values, unparsed


_OP_LINE_RE = re.compile(r"^[+\-#~]?\s*([A-Za-z_][\w\-]*)\s*\(([^)]*)\)\s*(?::\s*([\w\-]+))?\s*$")
_ATTR_LINE_RE = re.compile(r"^[+\-#~]?\s*([A-Za-z_][\w\-]*)\s*(?::\s*([\w\-]+))?\s*$")


def _members_from_lines(text: str, names: _Names) -> tuple[dict, list[str]]:
    attributes: list[dict] = []
    operations: list[dict] = []
    unparsed: list[str] = []
    for raw in _content_lines(text):
        line = _clean(raw)
        op = _OP_LINE_RE.match(line)
        if op:
            params = []
            for part in filter(None, (p.strip() for p in op.group(2).split(","))):
                pname, _, ptype = part.partition(":")
                params.append({"name": pname.strip(), "type": _canonical_type(ptype or None, names)})
            operations.append({"name": op.group(1), "params": params,
                               "returns": _canonical_type(op.group(3), names)})
            continue
        attr = _ATTR_LINE_RE.match(line)
        if attr and not line.endswith(":"):
            attributes.append({"name": attr.group(1), "type": _canonical_type(attr.group(2), names)})
            continue
        unparsed.append(raw.strip())
    return {"attributes": attributes, "operations": operations}, unparsed


def _members_from_json(data: Any, names: _Names) -> Optional[dict]:
    if not isinstance(data, dict) or not ({"attributes", "operations"} & set(data)):
        return None
    attributes, operations = [], []
    for item in data.get("attributes") or []:
        if isinstance(item, dict) and isinstance(item.get("name"), str):
            attributes.append({"name": item["name"], "type": _canonical_type(item.get("type"), names)})
        elif isinstance(item, str):
            parsed, _ = _members_from_lines(item, names)
            attributes.extend(parsed["attributes"])
    for item in data.get("operations") or []:
        if isinstance(item, dict) and isinstance(item.get("name"), str):
            params = [
                {"name": p.get("name"), "type": _canonical_type(p.get("type"), names)}
                for p in item.get("params") or [] if isinstance(p, dict)
            ]
            operations.append({"name": item["name"], "params": params,
                               "returns": _canonical_type(item.get("returns"), names)})
        elif isinstance(item, str):
            parsed, _ = _members_from_lines(item, names)
            operations.extend(parsed["operations"])
    return {"attributes": attributes, "operations": operations}


def _bools_from_text(text: str, count: int) -> tuple[list[Optional[bool]], list[str]]:
    """First yes/no token decides each answer part."""
    lines = _content_lines(text)
    per_line = []
    unparsed = []
    for raw in lines:
        match = _BOOL_RE.search(raw)
        if match:
            per_line.append(match.group(1).lower() in ("yes", "true"))
        else:
            unparsed.append(raw.strip())
    if len(per_line) >= count:
        values: list[Optional[bool]] = per_line[:count]
    else:
        tokens = [m.group(1).lower() in ("yes", "true") for m in _BOOL_RE.finditer(text)]
        values = tokens[:count]
    values += [None] * (count - len(values))
    return values, unparsed


_ROLE_LINE_RE = re.compile(r"^([A-Za-z][\w\-]*)\s*(?:\(\s*([\w\-]+)\s*\)|:\s*([\w\-]+))?$")
_PROP_LINE_RE = re.compile(r"^([A-Za-z][\w\-]*)\s*(?::\s*([\w\-]+))?\s*(?:=|:)\s*(.+)$")
_REMOVED_RE = re.compile(r"\b(removed|missing|lacks?|lacking|deleted|absent|no longer)\b", re.IGNORECASE)
_ADDED_RE = re.compile(r"\b(added|new|additional|introduced|extra)\b", re.IGNORECASE)
_CAPITALIZED_RE = re.compile(r"\b[A-Z][A-Za-z0-9_\-]*\b")
_NOT_NAMES = frozenset({"The", "A", "An", "UML", "Diagram", "Diagrams", "Class", "Classes", "In", "It",
                        "First", "Second", "This", "These", "There", "Both", "No", "Yes", "JSON"})


def _json_scalar(text: str) -> Any:
    try:
        return json.loads(text)
    except ValueError:
        return text.strip().strip("'\"")


def _diffs_from_lines(text: str, names: _Names) -> tuple[list[dict], list[str]]:
    entries: list[dict] = []
    unparsed: list[str] = []
    for raw in _content_lines(text):
        line = _clean(raw)
        if names.known:
            mentioned = names.find_in(line)
        else:
            mentioned = [w for w in _CAPITALIZED_RE.findall(line) if w not in _NOT_NAMES]
        if _REMOVED_RE.search(line):
            kind = "ClassRemoved"
        elif _ADDED_RE.search(line):
            kind = "ClassAdded"
        else:
            kind = None
        if kind is None or not mentioned:
            unparsed.append(raw.strip())
            continue
        for name in mentioned:
            entry = {"kind": kind, "path": name, "before": None, "after": None}
            if entry not in entries:
                entries.append(entry)
    return entries, unparsed


def normalize_answer(task: PromptTask, answer: BackendAnswer, mm: Optional[Metamodel] = None) -> NormalizedAnswer:
    """Recover a structured value: fenced JSON first, then line heuristics.

    Names are matched case- and punctuation-insensitively against ``mm`` when
    given.  Lines that yield nothing are kept in ``unparsed_lines``.
    """
    names = _Names(mm)
    data = answer.structured if answer.structured is not None else extract_json_block(answer.raw_text)
    kind = task.kind
    text = answer.raw_text

    def listed(key: str) -> Optional[list]:
        if isinstance(data, dict) and isinstance(data.get(key), list):
            return data[key]
        if isinstance(data, list):
            return data
        return None

    if kind in ("ListClasses", "RelationChainQuery", "SubclassQuery"):
        key = {"ListClasses": "classes", "RelationChainQuery": "chain", "SubclassQuery": "subclasses"}[kind]
        items = listed(key)
        if items is not None and all(isinstance(i, str) for i in items):
            value = [names.canonical_or_raw(i) for i in items]
            unparsed: list[str] = []
        else:
            value, unparsed = _name_list_from_lines(text, names)
        if kind == "SubclassQuery":
            value = sorted(set(value))
        return NormalizedAnswer(kind, value, tuple(unparsed))

    if kind == "ListMembers":
        value = _members_from_json(data, names)
        if value is not None:
            return NormalizedAnswer(kind, value)
        value, unparsed = _members_from_lines(text, names)
        return NormalizedAnswer(kind, value, tuple(unparsed))

    if kind == "KindOfQuery":
        count = len(task.arg("pairs") or [])
        items = listed("answers")
        if items is not None and len(items) == count and all(_parse_bool(i) is not None for i in items):
            return NormalizedAnswer(kind, [_parse_bool(i) for i in items])
        value, unparsed = _bools_from_text(text, count)
        return NormalizedAnswer(kind, value, tuple(unparsed))

    if kind == "ExtractRole":
        items = listed("elements")
        if items is not None and all(isinstance(i, dict) and isinstance(i.get("id"), str) for i in items):
            return NormalizedAnswer(kind, [
                {"id": i["id"], "class": names.canonical_or_raw(i["class"]) if isinstance(i.get("class"), str) else None}
                for i in items
            ])
        value, unparsed = [], []
        for raw in _content_lines(text):
            match = _ROLE_LINE_RE.match(_clean(raw))
            if match:
                cls = match.group(2) or match.group(3)
                value.append({"id": match.group(1), "class": names.canonical_or_raw(cls) if cls else None})
            else:
                unparsed.append(raw.strip())
        return NormalizedAnswer(kind, value, tuple(unparsed))

    if kind == "ElementProperties":
        items = listed("properties")
        if items is not None and all(isinstance(i, dict) and isinstance(i.get("name"), str) for i in items):
            return NormalizedAnswer(kind, [
                {"name": i["name"], "type": _canonical_type(i.get("type"), names), "value": i.get("value")}
                for i in items
            ])
        value, unparsed = [], []
        for raw in _content_lines(text):
            match = _PROP_LINE_RE.match(_clean(raw))
            if match:
                value.append({"name": match.group(1), "type": _canonical_type(match.group(2), names),
                              "value": _json_scalar(match.group(3))})
            else:
                unparsed.append(raw.strip())
        return NormalizedAnswer(kind, value, tuple(unparsed))

    items = listed("differences")
    if items is not None and all(isinstance(i, dict) and isinstance(i.get("kind"), str) for i in items):
        return NormalizedAnswer(kind, [
            {"kind": i["kind"], "path": str(i.get("path", "")), "before": i.get("before"), "after": i.get("after")}
            for i in items
        ])
    value, unparsed = _diffs_from_lines(text, names)
    return NormalizedAnswer(kind, value, tuple(unparsed))


def ask(backend: Optional[Backend], task: PromptTask, mm: Optional[Metamodel] = None) -> tuple[BackendAnswer, NormalizedAnswer]:
    """Build, send and normalize in one step."""
    answer = send_to_backend(backend, build_prompt(task))
    return answer, normalize_answer(task, answer, mm)


def diagram_json(payload: DiagramPayload) -> dict:
    if payload.is_image:
        return {"format": IMAGE_FORMAT, "data": base64.b64encode(payload.data).decode("ascii")}
    return {"format": CANONICAL_FORMAT, "data": document_to_json(payload.document)}


__all__ = [
    "TASK_KINDS", "BackendError", "PayloadError", "ParseError", "DiagramPayload", "PromptTask", "Prompt",
    "BackendAnswer", "NormalizedAnswer", "build_prompt", "MockBackend", "RemoteBackend",
    "backend_from_settings", "send_to_backend", "normalize_answer", "engine_answer", "ask",
    "extract_json_block", "fenced_json",
]
