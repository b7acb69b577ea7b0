"""Structural differences between two metamodels or two instances.

Elements are matched by normalized name (classes, attributes, operations,
relations) or by object id.  There is no rename detection.  A removed or
added class produces a single entry; its members are implied.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

from .model import (
    REAL_TOLERANCE,
    Instance,
    MetaClass,
    Metamodel,
    ModelObject,
    ObjectRef,
    Relation,
    render_value,
)
from .names import normalize_name

DIFF_KINDS = (
    "ClassAdded",
    "ClassRemoved",
    "ClassAbstractChanged",
    "SupertypesChanged",
    "AttributeAdded",
    "AttributeRemoved",
    "AttributeTypeChanged",
    "OperationAdded",
    "OperationRemoved",
    "OperationSignatureChanged",
    "RelationAdded",
    "RelationRemoved",
    "RelationChanged",
    "ObjectAdded",
    "ObjectRemoved",
    "SlotValueChanged",
    "LinkSetChanged",
)
_RANK = {kind: i for i, kind in enumerate(DIFF_KINDS)}
_MIRROR = {
    "ClassAdded": "ClassRemoved",
    "AttributeAdded": "AttributeRemoved",
    "OperationAdded": "OperationRemoved",
    "RelationAdded": "RelationRemoved",
    "ObjectAdded": "ObjectRemoved",
}
_MIRROR.update({v: k for k, v in list(_MIRROR.items())})


@dataclass(frozen=True)
class DiffEntry:
    kind: str
    path: str
    before: Optional[str] = None
    after: Optional[str] = None

    def sort_key(self) -> tuple[int, str]:
        return _RANK[self.kind], self.path

    def mirrored(self) -> "DiffEntry":
        """The entry describing the same change seen from the other side."""
        return DiffEntry(_MIRROR.get(self.kind, self.kind), self.path, self.after, self.before)

    def to_json(self) -> dict:
        return {"kind": self.kind, "path": self.path, "before": self.before, "after": self.after}


@dataclass(frozen=True)
class DiffReport:
    entries: tuple[DiffEntry, ...]

    @classmethod
    def of(cls, entries: Iterable[DiffEntry]) -> "DiffReport":
        return cls(tuple(sorted(entries, key=DiffEntry.sort_key)))

    @property
    def summary_counts(self) -> dict[str, int]:
        counts = Counter(e.kind for e in self.entries)
        return {kind: counts[kind] for kind in DIFF_KINDS if counts[kind]}

    def mirrored(self) -> "DiffReport":
        return DiffReport.of(e.mirrored() for e in self.entries)

    def to_json(self) -> dict:
        return {"entries": [e.to_json() for e in self.entries], "summary": self.summary_counts}

    def render(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"


def _keyed(items, name_of) -> dict:
    result = {}
    for item in items:
        result.setdefault(normalize_name(name_of(item)), item)
    return result


def _render_class(cls: MetaClass) -> str:
    text = ("abstract class " if cls.abstract else "class ") + cls.name
    if cls.supertypes:
        text += " extends " + ", ".join(cls.supertypes)
    return text


def _render_relation(rel: Relation) -> str:
    return f"{rel.kind} {rel.source}.{rel.name} -> {rel.target} [{rel.multiplicity}]"


def _norm_type(type_ref: Optional[str]) -> Optional[str]:
    return None if type_ref is None else normalize_name(type_ref)


def _signature_key(op) -> tuple:
    return tuple((normalize_name(p.name), _norm_type(p.type)) for p in op.params), _norm_type(op.returns)


def _diff_class(old: MetaClass, new: MetaClass) -> list[DiffEntry]:
    entries: list[DiffEntry] = []
    name = new.name
    if old.abstract != new.abstract:
        entries.append(DiffEntry("ClassAbstractChanged", name,
                                 render_value(old.abstract), render_value(new.abstract)))
    if [normalize_name(s) for s in old.supertypes] != [normalize_name(s) for s in new.supertypes]:
        entries.append(DiffEntry("SupertypesChanged", name,
                                 ", ".join(old.supertypes), ", ".join(new.supertypes)))

    old_attrs = _keyed(old.attributes, lambda a: a.name)
    new_attrs = _keyed(new.attributes, lambda a: a.name)
    for key, attr in old_attrs.items():
        if key not in new_attrs:
            entries.append(DiffEntry("AttributeRemoved", f"{name}.{attr.name}", f"{attr.name}:{attr.type}"))
        elif _norm_type(attr.type) != _norm_type(new_attrs[key].type):
            entries.append(DiffEntry("AttributeTypeChanged", f"{name}.{new_attrs[key].name}",
                                     attr.type, new_attrs[key].type))
    for key, attr in new_attrs.items():
        if key not in old_attrs:
            entries.append(DiffEntry("AttributeAdded", f"{name}.{attr.name}", None, f"{attr.name}:{attr.type}"))

    old_ops = _keyed(old.operations, lambda o: o.name)
    new_ops = _keyed(new.operations, lambda o: o.name)
    for key, op in old_ops.items():
        if key not in new_ops:
            entries.append(DiffEntry("OperationRemoved", f"{name}.{op.name}", op.signature()))
        elif _signature_key(op) != _signature_key(new_ops[key]):
            entries.append(DiffEntry("OperationSignatureChanged", f"{name}.{new_ops[key].name}",
                                     op.signature(), new_ops[key].signature()))
    for key, op in new_ops.items():
        if key not in old_ops:
            entries.append(DiffEntry("OperationAdded", f"{name}.{op.name}", None, op.signature()))
    return entries


def diff_metamodels(old: Metamodel, new: Metamodel) -> DiffReport:
    entries: list[DiffEntry] = []
    old_classes = _keyed(old.classes, lambda c: c.name)
    new_classes = _keyed(new.classes, lambda c: c.name)
    for key, cls in old_classes.items():
        if key not in new_classes:
            entries.append(DiffEntry("ClassRemoved", cls.name, _render_class(cls)))
        else:
            entries.extend(_diff_class(cls, new_classes[key]))
    for key, cls in new_classes.items():
        if key not in old_classes:
            entries.append(DiffEntry("ClassAdded", cls.name, None, _render_class(cls)))

    def rel_key(rel: Relation) -> str:
        return f"{normalize_name(rel.source)}.{normalize_name(rel.name)}"

    def rel_shape(rel: Relation) -> tuple:
        return rel.kind, normalize_name(rel.target), rel.multiplicity

    old_rels = _keyed(old.relations, rel_key)
    new_rels = _keyed(new.relations, rel_key)
    for key, rel in old_rels.items():
        path = f"{rel.source}.{rel.name}"
        if key not in new_rels:
            entries.append(DiffEntry("RelationRemoved", path, _render_relation(rel)))
        elif rel_shape(rel) != rel_shape(new_rels[key]):
            new_rel = new_rels[key]
            entries.append(DiffEntry("RelationChanged", f"{new_rel.source}.{new_rel.name}",
                                     _render_relation(rel), _render_relation(new_rel)))
    for key, rel in new_rels.items():
        if key not in old_rels:
            entries.append(DiffEntry("RelationAdded", f"{rel.source}.{rel.name}", None, _render_relation(rel)))
    return DiffReport.of(entries)


def values_equal(a: object, b: object) -> bool:
    """Slot equality; reals compare with absolute tolerance."""
    if isinstance(a, bool) or isinstance(b, bool):
        return type(a) is type(b) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if isinstance(a, float) or isinstance(b, float):
            return abs(a - b) <= REAL_TOLERANCE
        return a == b
    if isinstance(a, ObjectRef) or isinstance(b, ObjectRef):
        return a == b
    return type(a) is type(b) and a == b


def _render_object(obj: ModelObject) -> str:
    return f"{obj.id} : {obj.class_name}"


def _render_links(targets: tuple[str, ...]) -> str:
    return "[" + ", ".join(targets) + "]"


def diff_instances(old: Instance, new: Instance, mm: Optional[Metamodel] = None) -> DiffReport:
    """Object-level differences.  ``mm`` is accepted for symmetry with callers; matching needs only ids."""
    entries: list[DiffEntry] = []
    old_objs = {o.id: o for o in old.objects}
    new_objs = {o.id: o for o in new.objects}
    for oid, obj in old_objs.items():
        other = new_objs.get(oid)
        if other is None or normalize_name(other.class_name) != normalize_name(obj.class_name):
            entries.append(DiffEntry("ObjectRemoved", oid, _render_object(obj)))
            if other is not None:
                entries.append(DiffEntry("ObjectAdded", oid, None, _render_object(other)))
            continue
        for slot in sorted(set(obj.slots) | set(other.slots)):
            before, after = obj.slots.get(slot), other.slots.get(slot)
            if before is None and after is None:
                continue
            if before is None or after is None or not values_equal(before, after):
                entries.append(DiffEntry(
                    "SlotValueChanged", f"{oid}.{slot}",
                    "unset" if before is None else render_value(before),
                    "unset" if after is None else render_value(after),
                ))
        for link in sorted(set(obj.links) | set(other.links)):
            before_l, after_l = tuple(obj.links.get(link, ())), tuple(other.links.get(link, ()))
            if before_l != after_l:
                entries.append(DiffEntry("LinkSetChanged", f"{oid}.{link}",
                                         _render_links(before_l), _render_links(after_l)))
    for oid, obj in new_objs.items():
        if oid not in old_objs:
            entries.append(DiffEntry("ObjectAdded", oid, None, _render_object(obj)))
    return DiffReport.of(entries)
