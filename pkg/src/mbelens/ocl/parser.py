"""Lexer and recursive-descent parser for the constraint language.

Grammar::

    constraint := "context" IDENT "inv" IDENT ":" expr
    expr       := orE ("implies" orE)?
    orE        := andE ("or" andE)*
    andE       := notE ("and" notE)*
    notE       := "not" notE | rel
    rel        := add (("=" | "<>" | "<" | "<=" | ">" | ">=") add)?
    add        := mul (("+" | "-") mul)*
    mul        := unary (("*" | "/") unary)*
    unary      := "-" unary | postfix
    postfix    := primary ("." IDENT | "->" collOp)*
    collOp     := ("size" | "isEmpty" | "notEmpty") "(" ")"
                | ("forAll" | "exists") "(" IDENT "|" expr ")"
                | "includes" "(" expr ")"
    primary    := "self" | IDENT | INT | REAL | STRING | "true" | "false" | "(" expr ")"

Comments run from ``--`` to the end of the line.  Strings are single-quoted.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Optional

from .ast import (
    COMPARE_OPS,
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
)

KEYWORDS = frozenset({"context", "inv", "self", "true", "false", "and", "or", "not", "implies"})


class OclSyntaxError(Exception):
    def __init__(self, line: int, column: int, message: str, code: str = "SYNTAX_ERROR"):
        super().__init__(f"{code} at line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message
        self.code = code

    def to_json(self) -> dict:
        return {"code": self.code, "line": self.line, "column": self.column, "message": self.message}


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, INT, REAL, STRING, KW, OP, EOF
    text: str
    line: int
    column: int
    value: object = None


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>--[^\n]*)
  | (?P<real>\d+(?:\.\d+(?:[eE][+-]?\d+)?|[eE][+-]?\d+))
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>'(?:[^'\\\n]|\\.)*')
  | (?P<op>->|<>|<=|>=|[=<>+\-*/().:|,])
""", re.VERBOSE)

_ESCAPES = {"n": "\n", "t": "\t", "\\": "\\", "'": "'"}


def _unescape(body: str, line: int, column: int) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            nxt = body[i + 1]
            if nxt not in _ESCAPES:
                raise OclSyntaxError(line, column + i + 1, f"unknown escape \\{nxt}")
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def tokenize(text: str) -> Iterator[Token]:
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        column = pos - line_start + 1
        if match is None:
            if text[pos] == "'":
                raise OclSyntaxError(line, column, "unterminated string literal")
            raise OclSyntaxError(line, column, f"unexpected character {text[pos]!r}")
        kind = match.lastgroup
        lexeme = match.group()
        if kind == "real":
            yield Token("REAL", lexeme, line, column, float(lexeme))
        elif kind == "int":
            yield Token("INT", lexeme, line, column, int(lexeme))
        elif kind == "ident":
            yield Token("KW" if lexeme in KEYWORDS else "IDENT", lexeme, line, column)
        elif kind == "string":
            yield Token("STRING", lexeme, line, column, _unescape(lexeme[1:-1], line, column))
        elif kind == "op":
            yield Token("OP", lexeme, line, column)
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            line_start = pos + lexeme.rindex("\n") + 1
        pos = match.end()
    yield Token("EOF", "", line, pos - line_start + 1)


class Parser:
    def __init__(self, text: str):
        self.tokens = list(tokenize(text))
        self.pos = 0
        self.scopes: list[str] = []

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        tok = self.tok
        return tok.kind == kind and (text is None or tok.text == text)

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Token]:
        if self.at(kind, text):
            tok = self.tok
            self.pos += 1
            return tok
        return None

    def error(self, message: str, tok: Optional[Token] = None) -> OclSyntaxError:
        current = self.tok
        at = tok or current
        found = "end of input" if current.kind == "EOF" else repr(current.text)
        return OclSyntaxError(at.line, at.column, f"{message}, found {found}")

    def expect(self, kind: str, text: Optional[str] = None, what: Optional[str] = None) -> Token:
        tok = self.accept(kind, text)
        if tok is None:
            label = what or (repr(text) if text else kind.lower())
            raise self.error(f"expected {label}")
        return tok

    # -- grammar

    def constraints(self) -> list[Constraint]:
        result = []
        while not self.at("EOF"):
            result.append(self.constraint())
        return result

    def constraint(self) -> Constraint:
        self.expect("KW", "context", "'context'")
        context = self.expect("IDENT", what="a class name").text
        self.expect("KW", "inv", "'inv'")
        name = self.expect("IDENT", what="an invariant name").text
        self.expect("OP", ":", "':'")
        body = self.expr()
        if not (self.at("EOF") or self.at("KW", "context")):
            raise self.error("expected end of constraint")
        return Constraint(context, name, body)

    def expr(self) -> Expr:
        left = self.or_expr()
        if self.accept("KW", "implies"):
            return BoolOp("implies", left, self.or_expr())
        return left

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.accept("KW", "or"):
            left = BoolOp("or", left, self.and_expr())
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.accept("KW", "and"):
            left = BoolOp("and", left, self.not_expr())
        return left

    def not_expr(self) -> Expr:
        if self.accept("KW", "not"):
            return Not(self.not_expr())
        return self.rel()

    def rel(self) -> Expr:
        left = self.add()
        if self.tok.kind == "OP" and self.tok.text in COMPARE_OPS:
            op = self.accept("OP").text
            return Compare(op, left, self.add())
        return left

    def add(self) -> Expr:
        left = self.mul()
        while self.tok.kind == "OP" and self.tok.text in ("+", "-"):
            op = self.accept("OP").text
            left = Arith(op, left, self.mul())
        return left

    def mul(self) -> Expr:
        left = self.unary()
        while self.tok.kind == "OP" and self.tok.text in ("*", "/"):
            op = self.accept("OP").text
            left = Arith(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.accept("OP", "-"):
            return Neg(self.unary())
        return self.postfix()

    def postfix(self) -> Expr:
        expr = self.primary()
        while True:
            dot = self.accept("OP", ".")
            if dot is not None:
                member = self.accept("IDENT")
                if member is None:
                    raise self.error("expected a member name after '.'", dot)
                expr = Nav(expr, member.text)
                continue
            arrow = self.accept("OP", "->")
            if arrow is not None:
                expr = self.coll_op(expr, arrow)
                continue
            return expr

    def coll_op(self, receiver: Expr, arrow: Token) -> Expr:
        name = self.accept("IDENT")
        if name is None:
            raise self.error("expected a collection operation after '->'", arrow)
        op = name.text
        self.expect("OP", "(", "'('")
        if op in ("size", "isEmpty", "notEmpty"):
            self.expect("OP", ")", "')'")
            return CollOp(receiver, op)
        if op in ("forAll", "exists"):
            var = self.expect("IDENT", what="an iterator variable").text
            self.expect("OP", "|", "'|'")
            self.scopes.append(var)
            try:
                body = self.expr()
            finally:
                self.scopes.pop()
            self.expect("OP", ")", "')'")
            return CollOp(receiver, op, var, body)
        if op == "includes":
            arg = self.expr()
            self.expect("OP", ")", "')'")
            return CollOp(receiver, op, None, arg)
        raise OclSyntaxError(name.line, name.column, f"unknown collection operation {op!r}")

    def primary(self) -> Expr:
        tok = self.tok
        if self.accept("KW", "self"):
            return SelfRef()
        if self.accept("KW", "true"):
            return Literal(True)
        if self.accept("KW", "false"):
            return Literal(False)
        if tok.kind in ("INT", "REAL", "STRING"):
            self.pos += 1
            return Literal(tok.value)
        if tok.kind == "IDENT":
            self.pos += 1
            if tok.text not in self.scopes:
                raise OclSyntaxError(tok.line, tok.column, f"unbound variable {tok.text!r}", "UNBOUND_VARIABLE")
            return VarRef(tok.text)
        if self.accept("OP", "("):
            inner = self.expr()
            self.expect("OP", ")", "')'")
            return inner
        raise self.error("expected an expression")


def parse_constraints(text: str) -> list[Constraint]:
    """Parse every ``context ... inv ...:`` clause in ``text``."""
    return Parser(text).constraints()


def parse_expression(text: str, variables: tuple[str, ...] = ()) -> Expr:
    parser = Parser(text)
    parser.scopes.extend(variables)
    expr = parser.expr()
    if not parser.at("EOF"):
        raise parser.error("expected end of expression")
    return expr
