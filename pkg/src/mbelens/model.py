"""In-memory metamodels and instances, plus structural validation.

Every value here is immutable after construction.  Metamodels are built from
tuples and are hashable, which lets the derived lookup index be cached.
Lookups by name go through :func:`mbelens.names.normalize_name`, so
``"Co-Processor"`` and ``"CoProcessor"`` address the same class.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Optional, Union

from .names import is_identifier, normalize_name

PRIMITIVE_TYPES = ("int", "real", "string", "bool")
RELATION_KINDS = ("association", "composition", "aggregation")
REAL_TOLERANCE = 1e-9


class ModelError(Exception):
    """A lookup or contract failure carrying a machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    path: str
    message: str

    def to_json(self) -> dict:
        return {"code": self.code, "path": self.path, "message": self.message}


@dataclass(frozen=True)
class AttributeDef:
    name: str
    type: str


@dataclass(frozen=True)
class Param:
    name: str
    type: str


@dataclass(frozen=True)
class OperationDef:
    name: str
    params: tuple[Param, ...] = ()
    returns: Optional[str] = None

    def signature(self) -> str:
        params = ", ".join(f"{p.name}:{p.type}" for p in self.params)
        ret = f":{self.returns}" if self.returns is not None else ""
        return f"{self.name}({params}){ret}"


@dataclass(frozen=True)
class MetaClass:
    name: str
    abstract: bool = False
    supertypes: tuple[str, ...] = ()
    attributes: tuple[AttributeDef, ...] = ()
    operations: tuple[OperationDef, ...] = ()


@dataclass(frozen=True)
class Multiplicity:
    lower: int
    upper: Optional[int]  # None means unbounded

    def __str__(self) -> str:
        return f"{self.lower}..{'*' if self.upper is None else self.upper}"

    def admits(self, count: int) -> bool:
        return count >= self.lower and (self.upper is None or count <= self.upper)


@dataclass(frozen=True)
class Relation:
    kind: str
    name: str
    source: str
    target: str
    multiplicity: Multiplicity = Multiplicity(0, None)


@dataclass(frozen=True)
class Metamodel:
    name: str
    classes: tuple[MetaClass, ...] = ()
    relations: tuple[Relation, ...] = ()


@dataclass(frozen=True)
class ObjectRef:
    """Slot value pointing at another object of the same instance."""

    id: str


ScalarValue = Union[int, float, str, bool, ObjectRef]


@dataclass(frozen=True)
class ModelObject:
    id: str
    class_name: str
    slots: Mapping[str, ScalarValue] = field(default_factory=dict)
    links: Mapping[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class Instance:
    metamodel_name: str
    objects: tuple[ModelObject, ...] = ()

    def find(self, object_id: str) -> Optional[ModelObject]:
        """Exact id match first, then normalized match."""
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        key = normalize_name(object_id)
        for obj in self.objects:
            if normalize_name(obj.id) == key:
                return obj
        return None


class MetamodelIndex:
    """Derived lookup tables for one metamodel.  Tolerates invalid input."""

    def __init__(self, mm: Metamodel):
        self.mm = mm
        self.by_key: dict[str, MetaClass] = {}
        for cls in mm.classes:
            self.by_key.setdefault(normalize_name(cls.name), cls)
        self.subclasses: dict[str, list[str]] = {c.name: [] for c in mm.classes}
        for cls in mm.classes:
            for sup in cls.supertypes:
                target = self.lookup(sup)
                if target is not None and cls.name not in self.subclasses[target.name]:
                    self.subclasses[target.name].append(cls.name)
        self._ancestors: dict[str, tuple[str, ...]] = {}

    def lookup(self, name: str) -> Optional[MetaClass]:
        return self.by_key.get(normalize_name(name))

    def require(self, name: str) -> MetaClass:
        cls = self.lookup(name)
        if cls is None:
            raise ModelError("UNKNOWN_CLASS", f"unknown class {name!r} in metamodel {self.mm.name!r}")
        return cls

    def ancestors(self, name: str) -> tuple[str, ...]:
        """Proper ancestors in breadth-first order, nearest first."""
        cls = self.require(name)
        cached = self._ancestors.get(cls.name)
        if cached is not None:
            return cached
        seen = {cls.name}
        order: list[str] = []
        queue = deque([cls])
        while queue:
            current = queue.popleft()
            for sup in current.supertypes:
                target = self.lookup(sup)
                if target is None or target.name in seen:
                    continue
                seen.add(target.name)
                order.append(target.name)
                queue.append(target)
        result = tuple(order)
        self._ancestors[cls.name] = result
        return result

    def conforms(self, name: str, ancestor: str) -> bool:
        cls = self.require(name)
        anc = self.require(ancestor)
        return cls.name == anc.name or anc.name in self.ancestors(cls.name)

    def all_attributes(self, name: str) -> list[AttributeDef]:
        cls = self.require(name)
        result: list[AttributeDef] = []
        seen: set[str] = set()
        for owner in (cls.name, *self.ancestors(cls.name)):
            for attr in self.by_key[normalize_name(owner)].attributes:
                if attr.name not in seen:
                    seen.add(attr.name)
                    result.append(attr)
        return result

    def all_operations(self, name: str) -> list[OperationDef]:
        cls = self.require(name)
        result: list[OperationDef] = []
        seen: set[str] = set()
        for owner in (cls.name, *self.ancestors(cls.name)):
            for op in self.by_key[normalize_name(owner)].operations:
                if op.name not in seen:
                    seen.add(op.name)
                    result.append(op)
        return result

    def find_attribute(self, class_name: str, attr_name: str) -> Optional[AttributeDef]:
        attrs = self.all_attributes(class_name)
        for attr in attrs:
            if attr.name == attr_name:
                return attr
        key = normalize_name(attr_name)
        for attr in attrs:
            if normalize_name(attr.name) == key:
                return attr
        return None

    def find_relation(self, class_name: str, rel_name: str) -> Optional[Relation]:
        """A relation named ``rel_name`` whose source is the class or one of its ancestors."""
        cls = self.require(class_name)
        owners = {cls.name, *self.ancestors(cls.name)}
        candidates = [
            r for r in self.mm.relations
            if self.lookup(r.source) is not None and self.lookup(r.source).name in owners
        ]
        for rel in candidates:
            if rel.name == rel_name:
                return rel
        key = normalize_name(rel_name)
        for rel in candidates:
            if normalize_name(rel.name) == key:
                return rel
        return None


@lru_cache(maxsize=128)
def index(mm: Metamodel) -> MetamodelIndex:
    return MetamodelIndex(mm)


def all_attributes_of(mm: Metamodel, class_name: str) -> list[AttributeDef]:
    """Declared attributes followed by inherited ones, nearest ancestor first.

    Raises ModelError(UNKNOWN_CLASS) when the class does not resolve.
    """
    return index(mm).all_attributes(class_name)


# -- metamodel validation ----------------------------------------------------


def _inheritance_cycles(mm: Metamodel, idx: MetamodelIndex) -> list[list[str]]:
    edges = {
        c.name: [idx.lookup(s).name for s in c.supertypes if idx.lookup(s) is not None]
        for c in mm.classes
    }

    def reach(start: str) -> set[str]:
        seen: set[str] = set()
        stack = list(edges.get(start, ()))
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(edges.get(node, ()))
        return seen

    reachable = {name: reach(name) for name in edges}
    cycles: list[list[str]] = []
    assigned: set[str] = set()
    for cls in mm.classes:
        name = cls.name
        if name in assigned or name not in reachable[name]:
            continue
        members = [c.name for c in mm.classes
                   if c.name == name or (c.name in reachable[name] and name in reachable[c.name])]
        assigned.update(members)
        cycles.append(members)
    return cycles


def _type_resolves(type_ref: str, idx: MetamodelIndex) -> bool:
    return type_ref in PRIMITIVE_TYPES or idx.lookup(type_ref) is not None


def validate_metamodel(mm: Metamodel) -> list[ValidationIssue]:
    """All violated metamodel invariants, in a deterministic order."""
    issues: list[ValidationIssue] = []

    def add(code: str, path: str, message: str) -> None:
        issues.append(ValidationIssue(code, path, message))

    if not is_identifier(mm.name):
        add("BAD_IDENTIFIER", mm.name, f"metamodel name {mm.name!r} is not an identifier")

    idx = MetamodelIndex(mm)
    seen_classes: dict[str, str] = {}
    for cls in mm.classes:
        if not is_identifier(cls.name):
            add("BAD_IDENTIFIER", cls.name, f"class name {cls.name!r} is not an identifier")
        key = normalize_name(cls.name)
        if key in seen_classes:
            add("DUPLICATE_CLASS", cls.name, f"class {cls.name!r} duplicates {seen_classes[key]!r}")
        else:
            seen_classes[key] = cls.name

    for cls in mm.classes:
        for sup in cls.supertypes:
            if idx.lookup(sup) is None:
                add("UNRESOLVED_SUPERTYPE", cls.name, f"supertype {sup!r} of {cls.name!r} does not resolve")
        attr_names: set[str] = set()
        for attr in cls.attributes:
            path = f"{cls.name}.{attr.name}"
            if not is_identifier(attr.name):
                add("BAD_IDENTIFIER", path, f"attribute name {attr.name!r} is not an identifier")
            if attr.name in attr_names:
                add("DUPLICATE_ATTRIBUTE", path, f"attribute {attr.name!r} declared twice in {cls.name!r}")
            attr_names.add(attr.name)
            if not _type_resolves(attr.type, idx):
                add("UNRESOLVED_TYPE", path, f"type {attr.type!r} does not resolve")
        op_names: set[str] = set()
        for op in cls.operations:
            path = f"{cls.name}.{op.name}()"
            if not is_identifier(op.name):
                add("BAD_IDENTIFIER", path, f"operation name {op.name!r} is not an identifier")
            if op.name in op_names:
                add("DUPLICATE_OPERATION", path, f"operation {op.name!r} declared twice in {cls.name!r}")
            op_names.add(op.name)
            param_names: set[str] = set()
            for param in op.params:
                if not is_identifier(param.name):
                    add("BAD_IDENTIFIER", path, f"parameter name {param.name!r} is not an identifier")
                if param.name in param_names:
                    add("DUPLICATE_PARAMETER", path, f"parameter {param.name!r} repeated")
                param_names.add(param.name)
                if not _type_resolves(param.type, idx):
                    add("UNRESOLVED_TYPE", path, f"parameter type {param.type!r} does not resolve")
            if op.returns is not None and not _type_resolves(op.returns, idx):
                add("UNRESOLVED_TYPE", path, f"return type {op.returns!r} does not resolve")

    cycles = _inheritance_cycles(mm, idx)
    for members in cycles:
        add("INHERITANCE_CYCLE", members[0], "inheritance cycle among " + ", ".join(members))

    if not cycles:
        issues.extend(_shadowing_issues(mm, idx))

    seen_relations: set[tuple[str, str]] = set()
    for rel in mm.relations:
        path = f"{rel.source}.{rel.name}"
        if rel.kind not in RELATION_KINDS:
            add("BAD_RELATION_KIND", path, f"relation kind {rel.kind!r} is not one of {', '.join(RELATION_KINDS)}")
        if not is_identifier(rel.name):
            add("BAD_IDENTIFIER", path, f"relation name {rel.name!r} is not an identifier")
        for end in (rel.source, rel.target):
            if idx.lookup(end) is None:
                add("UNRESOLVED_RELATION_END", path, f"relation end {end!r} does not resolve")
        mult = rel.multiplicity
        if mult.lower < 0 or (mult.upper is not None and (mult.upper < 1 or mult.lower > mult.upper)):
            add("BAD_MULTIPLICITY", path, f"multiplicity {mult} is not valid")
        key = (normalize_name(rel.source), normalize_name(rel.name))
        if key in seen_relations:
            add("DUPLICATE_RELATION", path, f"relation {rel.name!r} declared twice on {rel.source!r}")
        seen_relations.add(key)
    return issues


def _shadowing_issues(mm: Metamodel, idx: MetamodelIndex) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    conflicts: dict[str, set[str]] = {}
    # Parents before children, so each class can subtract conflicts it merely inherits.
    order = sorted(mm.classes, key=lambda c: len(idx.ancestors(c.name)))
    for cls in order:
        owners: dict[str, set[str]] = {}
        for anc in idx.ancestors(cls.name):
            for attr in idx.lookup(anc).attributes:
                owners.setdefault(attr.name, set()).add(anc)
        for attr in cls.attributes:
            if attr.name in owners:
                issues.append(ValidationIssue(
                    "SHADOWED_ATTRIBUTE", f"{cls.name}.{attr.name}",
                    f"attribute {attr.name!r} shadows the one inherited from {sorted(owners[attr.name])[0]!r}",
                ))
        here = {name for name, who in owners.items() if len(who) > 1}
        conflicts[cls.name] = here
        inherited: set[str] = set()
        for sup in cls.supertypes:
            target = idx.lookup(sup)
            if target is not None:
                inherited |= conflicts.get(target.name, set())
        for name in sorted(here - inherited):
            issues.append(ValidationIssue(
                "CONFLICTING_ATTRIBUTE", f"{cls.name}.{name}",
                f"attribute {name!r} is inherited from {', '.join(sorted(owners[name]))}",
            ))
    position = {c.name: i for i, c in enumerate(mm.classes)}
    issues.sort(key=lambda i: position[i.path.split(".")[0]])
    return issues


# -- instance validation -----------------------------------------------------


def value_matches(value: object, type_ref: str) -> bool:
    """Scalar-level type check; class-typed refs are checked against the instance elsewhere."""
    if type_ref == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if type_ref == "real":
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if type_ref == "string":
        return isinstance(value, str)
    if type_ref == "bool":
        return isinstance(value, bool)
    return isinstance(value, ObjectRef)


def render_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, ObjectRef):
        return f"@{value.id}"
    if isinstance(value, str):
        return f'"{value}"'
    return repr(value)


def validate_instance(inst: Instance, mm: Metamodel) -> list[ValidationIssue]:
    """All violated instance invariants against ``mm``.

    A link key that is absent is treated as unspecified; multiplicity is
    checked only for link lists that are present.
    """
    issues: list[ValidationIssue] = []

    def add(code: str, path: str, message: str) -> None:
        issues.append(ValidationIssue(code, path, message))

    idx = index(mm)
    if normalize_name(inst.metamodel_name) != normalize_name(mm.name):
        add("METAMODEL_MISMATCH", inst.metamodel_name,
            f"instance targets {inst.metamodel_name!r}, not {mm.name!r}")

    by_id: dict[str, ModelObject] = {}
    for obj in inst.objects:
        if not is_identifier(obj.id):
            add("BAD_IDENTIFIER", obj.id, f"object id {obj.id!r} is not an identifier")
        if obj.id in by_id:
            add("DUPLICATE_OBJECT_ID", obj.id, f"object id {obj.id!r} is used twice")
        else:
            by_id[obj.id] = obj

    def class_of(object_id: str) -> Optional[MetaClass]:
        target = by_id.get(object_id)
        return None if target is None else idx.lookup(target.class_name)

    for obj in inst.objects:
        cls = idx.lookup(obj.class_name)
        if cls is None:
            add("UNKNOWN_CLASS", obj.id, f"class {obj.class_name!r} of {obj.id!r} does not resolve")
            continue
        if cls.abstract:
            add("ABSTRACT_INSTANTIATION", obj.id, f"{obj.id!r} instantiates abstract class {cls.name!r}")
        declared = {a.name: a for a in idx.all_attributes(cls.name)}
        for slot, value in obj.slots.items():
            path = f"{obj.id}.{slot}"
            attr = declared.get(slot)
            if attr is None:
                add("UNKNOWN_SLOT", path, f"{cls.name!r} has no attribute {slot!r}")
                continue
            if isinstance(value, float) and not math.isfinite(value):
                add("NON_FINITE_REAL", path, f"value {value!r} is not finite")
                continue
            if not value_matches(value, attr.type):
                add("SLOT_TYPE_MISMATCH", path,
                    f"value {render_value(value)} does not match type {attr.type!r}")
                continue
            if attr.type not in PRIMITIVE_TYPES:
                target_cls = class_of(value.id)
                if target_cls is None:
                    add("UNKNOWN_REFERENCE", path, f"referenced object {value.id!r} does not exist")
                elif not idx.conforms(target_cls.name, attr.type):
                    add("SLOT_TYPE_MISMATCH", path,
                        f"{value.id!r} is a {target_cls.name!r}, not a {attr.type!r}")
        for link, targets in obj.links.items():
            path = f"{obj.id}.{link}"
            rel = idx.find_relation(cls.name, link)
            if rel is None or rel.name != link:
                add("UNKNOWN_LINK", path, f"{cls.name!r} has no relation {link!r}")
                continue
            for pos, target_id in enumerate(targets):
                target_cls = class_of(target_id)
                if target_cls is None:
                    add("UNKNOWN_LINK_TARGET", f"{path}[{pos}]", f"link target {target_id!r} does not exist")
                elif idx.lookup(rel.target) is not None and not idx.conforms(target_cls.name, rel.target):
                    add("LINK_TARGET_TYPE", f"{path}[{pos}]",
                        f"{target_id!r} is a {target_cls.name!r}, not a {rel.target!r}")
            if not rel.multiplicity.admits(len(targets)):
                add("MULTIPLICITY_VIOLATION", path,
                    f"{len(targets)} targets outside multiplicity {rel.multiplicity}")
    return issues
