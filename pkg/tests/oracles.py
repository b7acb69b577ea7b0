"""Independent reference implementations used to cross-check the engines.

These are deliberately naive: exhaustive search and direct enumeration, no
shared code with the package beyond the data classes.
"""
from __future__ import annotations

from typing import Optional

from mbelens.model import Instance, Metamodel, ModelObject


def _norm(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch.isalnum())


def adjacency(mm: Metamodel) -> dict[str, set[str]]:
    """Undirected class graph over inheritance and relation edges."""
    graph: dict[str, set[str]] = {c.name: set() for c in mm.classes}
    for cls in mm.classes:
        for sup in cls.supertypes:
            graph[cls.name].add(sup)
            graph[sup].add(cls.name)
    for rel in mm.relations:
        graph[rel.source].add(rel.target)
        graph[rel.target].add(rel.source)
    return graph


def all_simple_paths(mm: Metamodel, start: str, goal: str) -> list[list[str]]:
    graph = adjacency(mm)
    out: list[list[str]] = []

    def walk(node: str, path: list[str]) -> None:
        if node == goal:
            out.append(list(path))
            return
        for nxt in graph[node]:
            if nxt not in path:
                path.append(nxt)
                walk(nxt, path)
                path.pop()

    walk(start, [start])
    return out


def shortest_chain_length(mm: Metamodel, start: str, goal: str) -> Optional[int]:
    """Fewest classes on any simple path; None when disconnected."""
    paths = all_simple_paths(mm, start, goal)
    return min(map(len, paths)) if paths else None


def ancestors(mm: Metamodel, name: str) -> set[str]:
    """Reflexive transitive supertype closure, by fixpoint iteration."""
    supers = {c.name: set(c.supertypes) for c in mm.classes}
    closure = {name}
    while True:
        grown = closure | {s for c in closure for s in supers.get(c, ())}
        if grown == closure:
            return closure
        closure = grown


def kind_of(mm: Metamodel, name: str, ancestor: str) -> bool:
    return ancestor in ancestors(mm, name)


def find_object(inst: Instance, name: str) -> Optional[ModelObject]:
    for obj in inst.objects:
        if obj.id == name:
            return obj
    for obj in inst.objects:
        if _norm(obj.id) == _norm(name):
            return obj
    return None


# -- quantifier fixture: Box --items--> Item{v:int}, Box{limit:int} --------------


def quantifier_expectations(values: list[int], limit: int, k: int) -> dict[str, bool | int]:
    """Expected results for the fixed constraint battery, by direct enumeration."""
    result: dict[str, bool | int] = {}
    result["size"] = len(values)
    result["isEmpty"] = len(values) == 0
    result["notEmpty"] = len(values) > 0
    result["forAllGtK"] = True
    for v in values:
        if not v > k:
            result["forAllGtK"] = False
    result["existsEqK"] = False
    for v in values:
        if v == k:
            result["existsEqK"] = True
    result["forAllLeLimit"] = all(v <= limit for v in values)
    pairs = [(a, b) for a in values for b in values]
    result["forAllExistsGe"] = all(any(b >= a for b in values) for a in values)
    result["existsPairSum"] = any(a + b == limit for a, b in pairs)
    result["forAllPairsDistinctOrSame"] = all(a != b or a == b for a, b in pairs)
    result["sizeTimesTwoGtLimit"] = len(values) * 2 > limit
    result["notAllEven"] = not all(v % 2 == 0 for v in values) if values else False
    return result


QUANTIFIER_BATTERY = {
    "size": "self.items->size()",
    "isEmpty": "self.items->isEmpty()",
    "notEmpty": "self.items->notEmpty()",
    "forAllGtK": "self.items->forAll(i | i.v > {k})",
    "existsEqK": "self.items->exists(i | i.v = {k})",
    "forAllLeLimit": "self.items->forAll(i | i.v <= self.limit)",
    "forAllExistsGe": "self.items->forAll(a | self.items->exists(b | b.v >= a.v))",
    "existsPairSum": "self.items->exists(a | self.items->exists(b | a.v + b.v = self.limit))",
    "forAllPairsDistinctOrSame": "self.items->forAll(a | self.items->forAll(b | a.v <> b.v or a.v = b.v))",
    "sizeTimesTwoGtLimit": "self.items->size() * 2 > self.limit",
    "notAllEven": "self.items->notEmpty() and not self.items->forAll(i | i.even)",
}
