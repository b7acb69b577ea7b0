"""Expression tree for the constraint language, plus a source printer.

``to_source`` emits the fewest parentheses needed for the parser to rebuild
an equal tree.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union


class Expr:
    __slots__ = ()


@dataclass(frozen=True, eq=False)
class Literal(Expr):
    value: Union[int, float, str, bool]

    # 1 == 1.0 == True in Python; literals of different types must stay distinct
    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Literal) and type(self.value) is type(other.value)
                and self.value == other.value)

    def __hash__(self) -> int:
        return hash((type(self.value), self.value))


@dataclass(frozen=True)
class SelfRef(Expr):
    pass


@dataclass(frozen=True)
class VarRef(Expr):
    name: str


@dataclass(frozen=True)
class Nav(Expr):
    receiver: Expr
    member: str


@dataclass(frozen=True)
class CollOp(Expr):
    """``receiver->op(...)``.  ``var``/``body`` are set for forAll and exists;
    ``body`` alone holds the argument of includes."""

    receiver: Expr
    op: str
    var: Optional[str] = None
    body: Optional[Expr] = None


@dataclass(frozen=True)
class BoolOp(Expr):
    op: str  # and | or | implies
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr


@dataclass(frozen=True)
class Compare(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Arith(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Constraint:
    context_class: str
    name: str
    body: Expr

    def to_source(self) -> str:
        return f"context {self.context_class} inv {self.name}: {to_source(self.body)}"


COLLECTION_OPS = ("size", "isEmpty", "notEmpty", "includes", "forAll", "exists")
COMPARE_OPS = ("=", "<>", "<", "<=", ">", ">=")

# precedence levels, loosest first
_IMPLIES, _OR, _AND, _NOT, _REL, _ADD, _MUL, _UNARY, _POSTFIX = range(9)


def _level(expr: Expr) -> int:
    if isinstance(expr, BoolOp):
        return {"implies": _IMPLIES, "or": _OR, "and": _AND}[expr.op]
    if isinstance(expr, Not):
        return _NOT
    if isinstance(expr, Compare):
        return _REL
    if isinstance(expr, Arith):
        return _ADD if expr.op in "+-" else _MUL
    if isinstance(expr, Neg):
        return _UNARY
    return _POSTFIX


def _wrap(expr: Expr, minimum: int) -> str:
    text = to_source(expr)
    return f"({text})" if _level(expr) < minimum else text


def _literal_source(value: Union[int, float, str, bool]) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace("'", "\\'").replace("\n", "\\n").replace("\t", "\\t")
        return f"'{escaped}'"
    return repr(value)


def to_source(expr: Expr) -> str:
    if isinstance(expr, Literal):
        return _literal_source(expr.value)
    if isinstance(expr, SelfRef):
        return "self"
    if isinstance(expr, VarRef):
        return expr.name
    if isinstance(expr, Nav):
        return f"{_wrap(expr.receiver, _POSTFIX)}.{expr.member}"
    if isinstance(expr, CollOp):
        receiver = _wrap(expr.receiver, _POSTFIX)
        if expr.op in ("forAll", "exists"):
            return f"{receiver}->{expr.op}({expr.var} | {to_source(expr.body)})"
        if expr.op == "includes":
            return f"{receiver}->includes({to_source(expr.body)})"
        return f"{receiver}->{expr.op}()"
    if isinstance(expr, BoolOp):
        level = _level(expr)
        if expr.op == "implies":
            # implies does not chain: both sides must be or-expressions
            return f"{_wrap(expr.left, _OR)} implies {_wrap(expr.right, _OR)}"
        return f"{_wrap(expr.left, level)} {expr.op} {_wrap(expr.right, level + 1)}"
    if isinstance(expr, Not):
        return f"not {_wrap(expr.operand, _NOT)}"
    if isinstance(expr, Compare):
        return f"{_wrap(expr.left, _ADD)} {expr.op} {_wrap(expr.right, _ADD)}"
    if isinstance(expr, Arith):
        level = _level(expr)
        return f"{_wrap(expr.left, level)} {expr.op} {_wrap(expr.right, level + 1)}"
    if isinstance(expr, Neg):
        inner = _wrap(expr.operand, _UNARY)
        # "--" would open a comment
        return f"- {inner}" if inner.startswith("-") else f"-{inner}"
    raise TypeError(f"not an expression: {expr!r}")
