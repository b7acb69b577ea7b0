"""Deterministic answers to the diagram question classes.

These functions are the ground-truth oracle for the evaluation harness and
the engine behind the mock backend.  All of them are pure.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from .model import (
    AttributeDef,
    Instance,
    Metamodel,
    ModelError,
    OperationDef,
    ScalarValue,
    index,
)

EDGE_ORDER = ("inheritance", "association", "composition", "aggregation")


class _Unset:
    """Marker for an attribute without a slot value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNSET"


UNSET = _Unset()


@dataclass(frozen=True)
class RelationChain:
    class_names: tuple[str, ...]
    edges: tuple[tuple[str, Optional[str]], ...]

    def __str__(self) -> str:
        return " -> ".join(self.class_names)


@dataclass(frozen=True)
class PropertyValue:
    name: str
    type: str
    value: object  # ScalarValue or UNSET


def list_classes(mm: Metamodel) -> list[str]:
    return [c.name for c in mm.classes]


def list_members(mm: Metamodel, class_name: str) -> tuple[list[AttributeDef], list[OperationDef]]:
    idx = index(mm)
    return idx.all_attributes(class_name), idx.all_operations(class_name)


def is_kind_of(mm: Metamodel, class_name: str, ancestor_name: str) -> bool:
    return index(mm).conforms(class_name, ancestor_name)


def subclasses_of(mm: Metamodel, class_name: str, direct: bool = True) -> set[str]:
    idx = index(mm)
    root = idx.require(class_name).name
    if direct:
        return set(idx.subclasses[root])
    found: set[str] = set()
    stack = list(idx.subclasses[root])
    while stack:
        name = stack.pop()
        if name in found or name == root:
            continue
        found.add(name)
        stack.extend(idx.subclasses[name])
    return found


def _chain_graph(mm: Metamodel) -> dict[str, dict[str, list[tuple[str, Optional[str]]]]]:
    """Undirected adjacency: node -> neighbour -> edges between them."""
    idx = index(mm)
    graph: dict[str, dict[str, list[tuple[str, Optional[str]]]]] = {c.name: {} for c in mm.classes}

    def connect(a: str, b: str, edge: tuple[str, Optional[str]]) -> None:
        graph[a].setdefault(b, []).append(edge)
        if a != b:
            graph[b].setdefault(a, []).append(edge)

    for cls in mm.classes:
        for sup in cls.supertypes:
            target = idx.lookup(sup)
            if target is not None:
                connect(cls.name, target.name, ("inheritance", None))
    for rel in mm.relations:
        src, dst = idx.lookup(rel.source), idx.lookup(rel.target)
        if src is not None and dst is not None:
            connect(src.name, dst.name, (rel.kind, rel.name))
    return graph


def _preferred_edge(edges: list[tuple[str, Optional[str]]]) -> tuple[str, Optional[str]]:
    return min(edges, key=lambda e: (EDGE_ORDER.index(e[0]), e[1] or ""))


def relation_chain(mm: Metamodel, from_class: str, to_class: str) -> RelationChain:
    """Shortest undirected path over inheritance and relation edges.

    Among equally short paths, each step takes the lexicographically smallest
    next class name.  When several edges join the same two classes, the
    inheritance edge wins, then association, composition, aggregation, then
    the smallest relation name.
    """
    idx = index(mm)
    start = idx.require(from_class).name
    goal = idx.require(to_class).name
    graph = _chain_graph(mm)

    # distances measured from the goal let the forward walk pick greedily
    dist = {goal: 0}
    queue = deque([goal])
    while queue:
        node = queue.popleft()
        for nxt in graph[node]:
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    if start not in dist:
        raise ModelError("NO_CHAIN", f"no relation chain between {start!r} and {goal!r}")

    names = [start]
    edges: list[tuple[str, Optional[str]]] = []
    node = start
    while node != goal:
        step = min(n for n in graph[node] if dist.get(n) == dist[node] - 1)
        edges.append(_preferred_edge(graph[node][step]))
        names.append(step)
        node = step
    return RelationChain(tuple(names), tuple(edges))


def extract_by_role(mm: Metamodel, inst: Instance, role_class: str) -> list[str]:
    idx = index(mm)
    role = idx.require(role_class).name
    return [
        obj.id for obj in inst.objects
        if idx.lookup(obj.class_name) is not None and idx.conforms(obj.class_name, role)
    ]


def element_properties(mm: Metamodel, inst: Instance, element_name: str) -> list[PropertyValue]:
    """Every attribute of the element's class with its value, or UNSET."""
    obj = inst.find(element_name)
    if obj is None:
        raise ModelError("UNKNOWN_ELEMENT", f"no element named {element_name!r}")
    result = []
    for attr in index(mm).all_attributes(obj.class_name):
        value: ScalarValue | _Unset = obj.slots.get(attr.name, UNSET)
        result.append(PropertyValue(attr.name, attr.type, value))
    return result
