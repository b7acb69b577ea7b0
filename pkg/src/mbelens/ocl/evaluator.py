"""Evaluation of constraints over a model instance.

Semantics worth knowing:

* navigating an attribute yields its slot value; an unset slot is an
  evaluation error, not an undefined value;
* navigating a relation yields the ordered tuple of target objects;
* ``and``, ``or``, ``implies``, ``forAll`` and ``exists`` short-circuit left
  to right, so guards such as ``x->notEmpty() implies ...`` protect the
  right-hand side;
* reals compare with an absolute tolerance of 1e-9;
* division always yields a real; dividing by zero is an evaluation error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from ..model import (
    REAL_TOLERANCE,
    Instance,
    Metamodel,
    ModelError,
    ModelObject,
    ObjectRef,
    index,
)
from .ast import (
    Arith,
    BoolOp,
    CollOp,
    Compare,
    Constraint,
    Expr,
    Literal,
    Nav,
    Neg,
    Not,
    SelfRef,
    VarRef,
    to_source,
)


class OclEvalError(Exception):
    pass


@dataclass(frozen=True)
class Violation:
    constraint_name: str
    context_class: str
    object_id: str
    message: str

    def to_json(self) -> dict:
        return {
            "constraint": self.constraint_name,
            "context": self.context_class,
            "object": self.object_id,
            "message": self.message,
            "explanation": explain_violation(self),
        }


@dataclass(frozen=True)
class EvaluationError:
    """A constraint that could not be evaluated for one object."""

    constraint_name: str
    context_class: str
    object_id: str
    message: str

    def to_json(self) -> dict:
        return {
            "constraint": self.constraint_name,
            "context": self.context_class,
            "object": self.object_id,
            "message": self.message,
            "explanation": explain_violation(self),
        }


@dataclass(frozen=True)
class ComplianceResult:
    violations: tuple[Violation, ...] = ()
    errors: tuple[EvaluationError, ...] = ()

    @property
    def compliant(self) -> bool:
        return not self.violations and not self.errors

    def to_json(self) -> dict:
        return {
            "compliant": self.compliant,
            "violations": [v.to_json() for v in self.violations],
            "errors": [e.to_json() for e in self.errors],
        }


def explain_violation(v: Violation | EvaluationError) -> str:
    if isinstance(v, EvaluationError):
        return (f"{v.object_id}: constraint {v.constraint_name} (context {v.context_class}) "
                f"could not be evaluated: {v.message}")
    return f"{v.object_id} violates {v.constraint_name} (context {v.context_class}): {v.message}"


def render(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, ModelObject):
        return value.id
    if isinstance(value, tuple):
        return "[" + ", ".join(render(v) for v in value) + "]"
    if isinstance(value, str):
        return repr(value)
    return repr(value)


def _type_name(value: Any) -> str:
    if isinstance(value, bool):
        return "Boolean"
    if isinstance(value, int):
        return "Integer"
    if isinstance(value, float):
        return "Real"
    if isinstance(value, str):
        return "String"
    if isinstance(value, ModelObject):
        return value.class_name
    if isinstance(value, tuple):
        return "Collection"
    return type(value).__name__


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass
class Evaluator:
    mm: Metamodel
    inst: Instance
    _by_id: dict[str, ModelObject] = field(init=False)

    def __post_init__(self) -> None:
        self.idx = index(self.mm)
        self._by_id = {o.id: o for o in self.inst.objects}

    def resolve(self, object_id: str) -> ModelObject:
        obj = self._by_id.get(object_id)
        if obj is None:
            raise OclEvalError(f"object {object_id!r} does not exist")
        return obj

    def eval(self, expr: Expr, env: Mapping[str, Any]) -> Any:
        method = getattr(self, "_eval_" + type(expr).__name__)
        return method(expr, env)

    def eval_bool(self, expr: Expr, env: Mapping[str, Any]) -> bool:
        value = self.eval(expr, env)
        if not isinstance(value, bool):
            raise OclEvalError(f"{to_source(expr)} is {_type_name(value)} {render(value)}, not Boolean")
        return value

    def _eval_Literal(self, expr: Literal, env):
        return expr.value

    def _eval_SelfRef(self, expr: SelfRef, env):
        return env["self"]

    def _eval_VarRef(self, expr: VarRef, env):
        if expr.name not in env:
            raise OclEvalError(f"unbound variable {expr.name!r}")
        return env[expr.name]

    def _eval_Nav(self, expr: Nav, env):
        receiver = self.eval(expr.receiver, env)
        if not isinstance(receiver, ModelObject):
            raise OclEvalError(f"cannot navigate .{expr.member} on {_type_name(receiver)} {render(receiver)}")
        if self.idx.lookup(receiver.class_name) is None:
            raise OclEvalError(f"class {receiver.class_name!r} of {receiver.id} is unknown")
        attr = self.idx.find_attribute(receiver.class_name, expr.member)
        if attr is not None:
            if attr.name not in receiver.slots:
                raise OclEvalError(f"{receiver.id}.{attr.name} is unset")
            value = receiver.slots[attr.name]
            return self.resolve(value.id) if isinstance(value, ObjectRef) else value
        rel = self.idx.find_relation(receiver.class_name, expr.member)
        if rel is not None:
            return tuple(self.resolve(t) for t in receiver.links.get(rel.name, ()))
        raise OclEvalError(f"{receiver.class_name} has no member {expr.member!r}")

    def _eval_CollOp(self, expr: CollOp, env):
        coll = self.eval(expr.receiver, env)
        if not isinstance(coll, tuple):
            raise OclEvalError(f"->{expr.op}() applied to {_type_name(coll)} {render(coll)}, not a collection")
        if expr.op == "size":
            return len(coll)
        if expr.op == "isEmpty":
            return not coll
        if expr.op == "notEmpty":
            return bool(coll)
        if expr.op == "includes":
            needle = self.eval(expr.body, env)
            return any(_same(item, needle) for item in coll)
        if expr.op == "forAll":
            return all(self.eval_bool(expr.body, {**env, expr.var: item}) for item in coll)
        if expr.op == "exists":
            return any(self.eval_bool(expr.body, {**env, expr.var: item}) for item in coll)
        raise OclEvalError(f"unknown collection operation {expr.op!r}")

    def _eval_BoolOp(self, expr: BoolOp, env):
        left = self.eval_bool(expr.left, env)
        if expr.op == "and":
            return left and self.eval_bool(expr.right, env)
        if expr.op == "or":
            return left or self.eval_bool(expr.right, env)
        return (not left) or self.eval_bool(expr.right, env)

    def _eval_Not(self, expr: Not, env):
        return not self.eval_bool(expr.operand, env)

    def _eval_Compare(self, expr: Compare, env):
        return compare(expr.op, self.eval(expr.left, env), self.eval(expr.right, env))

    def _eval_Arith(self, expr: Arith, env):
        left, right = self.eval(expr.left, env), self.eval(expr.right, env)
        if not (_is_number(left) and _is_number(right)):
            raise OclEvalError(
                f"operator {expr.op} needs numbers, got {_type_name(left)} and {_type_name(right)}")
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if right == 0:
            raise OclEvalError(f"division by zero in {to_source(expr)}")
        return left / right

    def _eval_Neg(self, expr: Neg, env):
        value = self.eval(expr.operand, env)
        if not _is_number(value):
            raise OclEvalError(f"unary minus needs a number, got {_type_name(value)}")
        return -value


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, ModelObject) or isinstance(b, ModelObject):
        return isinstance(a, ModelObject) and isinstance(b, ModelObject) and a.id == b.id
    try:
        return compare("=", a, b)
    except OclEvalError:
        return False


def compare(op: str, left: Any, right: Any) -> bool:
    if _is_number(left) and _is_number(right):
        if isinstance(left, float) or isinstance(right, float):
            tol = REAL_TOLERANCE
        else:
            tol = 0
        diff = left - right
        return {
            "=": abs(diff) <= tol,
            "<>": abs(diff) > tol,
            "<": diff < -tol,
            "<=": diff <= tol,
            ">": diff > tol,
            ">=": diff >= -tol,
        }[op]
    if isinstance(left, str) and isinstance(right, str):
        return {"=": left == right, "<>": left != right, "<": left < right,
                "<=": left <= right, ">": left > right, ">=": left >= right}[op]
    if op in ("=", "<>"):
        if isinstance(left, bool) and isinstance(right, bool):
            return (left == right) == (op == "=")
        if isinstance(left, ModelObject) and isinstance(right, ModelObject):
            return (left.id == right.id) == (op == "=")
    raise OclEvalError(f"cannot compare {_type_name(left)} {render(left)} {op} {_type_name(right)} {render(right)}")


# -- explanations ------------------------------------------------------------


def _operand_notes(ev: Evaluator, exprs: tuple[Expr, ...], env) -> str:
    notes = []
    for sub in exprs:
        if isinstance(sub, Literal):
            continue
        try:
            notes.append(f"{to_source(sub)} = {render(ev.eval(sub, env))}")
        except OclEvalError as exc:
            notes.append(f"{to_source(sub)}: {exc}")
    return f" ({'; '.join(notes)})" if notes else ""


def explain_failure(ev: Evaluator, expr: Expr, env: Mapping[str, Any]) -> str:
    """Describe the smallest subexpression that makes ``expr`` false."""
    if isinstance(expr, BoolOp):
        if expr.op == "and":
            if not ev.eval_bool(expr.left, env):
                return explain_failure(ev, expr.left, env)
            return explain_failure(ev, expr.right, env)
        if expr.op == "implies":
            return explain_failure(ev, expr.right, env) + f" although {to_source(expr.left)} holds"
        return (f"neither {to_source(expr.left)} nor {to_source(expr.right)} holds"
                f"{_operand_notes(ev, (expr.left, expr.right), env)}")
    if isinstance(expr, Compare):
        return f"{to_source(expr)} is false{_operand_notes(ev, (expr.left, expr.right), env)}"
    if isinstance(expr, Not):
        return f"{to_source(expr.operand)} holds"
    if isinstance(expr, CollOp) and expr.op == "forAll":
        for item in ev.eval(expr.receiver, env):
            inner = {**env, expr.var: item}
            if not ev.eval_bool(expr.body, inner):
                return (f"{to_source(expr.receiver)}->forAll fails for {expr.var} = {render(item)}: "
                        + explain_failure(ev, expr.body, inner))
    if isinstance(expr, CollOp) and expr.op == "exists":
        coll = ev.eval(expr.receiver, env)
        return f"no element of {to_source(expr.receiver)} = {render(coll)} satisfies {to_source(expr.body)}"
    if isinstance(expr, CollOp):
        return f"{to_source(expr)} is false ({to_source(expr.receiver)} = {render(ev.eval(expr.receiver, env))})"
    return f"{to_source(expr)} is false"


def evaluate(mm: Metamodel, inst: Instance, expr: Expr, self_object: ModelObject,
             variables: Mapping[str, Any] | None = None) -> Any:
    """Evaluate ``expr`` with ``self`` bound to ``self_object``."""
    env = {"self": self_object, **(variables or {})}
    return Evaluator(mm, inst).eval(expr, env)


def check_compliance(mm: Metamodel, inst: Instance, constraints: list[Constraint]) -> ComplianceResult:
    """Evaluate every constraint once per object whose class conforms to its context."""
    idx = index(mm)
    for c in constraints:
        if idx.lookup(c.context_class) is None:
            raise ModelError("UNKNOWN_CONTEXT_CLASS", f"context class {c.context_class!r} of {c.name!r} does not resolve")
    ev = Evaluator(mm, inst)
    violations: list[Violation] = []
    errors: list[EvaluationError] = []
    for c in constraints:
        context = idx.require(c.context_class).name
        for obj in inst.objects:
            if idx.lookup(obj.class_name) is None or not idx.conforms(obj.class_name, context):
                continue
            env = {"self": obj}
            try:
                holds = ev.eval_bool(c.body, env)
                if not holds:
                    try:
                        message = explain_failure(ev, c.body, env)
                    except OclEvalError:
                        message = f"{to_source(c.body)} is false"
                    violations.append(Violation(c.name, context, obj.id, message))
            except OclEvalError as exc:
                errors.append(EvaluationError(c.name, context, obj.id, str(exc)))
    return ComplianceResult(tuple(violations), tuple(errors))
