"""Guard expressions over markings.

Grammar (whitespace-insensitive)::

    Or    := And ('OR' And)*
    And   := Unary ('AND' Unary)*
    Unary := 'NOT' Unary | '(' Or ')' | '#' id relop int
    relop := '>' | '>=' | '=' | '<' | '<='

Guards are immutable trees.  ``compile_guard`` lowers a tree to a flat
postfix program that the simulation kernel evaluates without Python
objects.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import GuardSyntaxError, UnknownPlaceError

RELOPS = (">", ">=", "=", "<", "<=")

# opcodes of the postfix program; atoms use the relop's index
OP_AND = 5
OP_OR = 6
OP_NOT = 7


@dataclass(frozen=True)
class Atom:
    place: str
    op: str
    value: int

    def __post_init__(self):
        if self.op not in RELOPS:
            raise ValueError(f"unknown relational operator {self.op!r}")


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass(frozen=True)
class Not:
    item: object


GuardExpr = Union[Atom, And, Or, Not]


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>-?\d+)|(?P<word>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>>=|<=|[><=#()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        mt = _TOKEN_RE.match(text, pos)
        if mt is None:
            raise GuardSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = mt.lastgroup
        start = mt.start(kind)
        tokens.append((kind, mt.group(kind), start))
        pos = mt.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise GuardSyntaxError(msg, tok[2], self.text)

    def keyword(self, word: str) -> bool:
        kind, val, _ = self.peek()
        return kind == "word" and val.upper() == word

    def parse(self) -> GuardExpr:
        expr = self.parse_or()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return expr

    def parse_or(self):
        items = [self.parse_and()]
        while self.keyword("OR"):
            self.take()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self):
        items = [self.parse_unary()]
        while self.keyword("AND"):
            self.take()
            items.append(self.parse_unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_unary(self):
        kind, val, pos = self.peek()
        if self.keyword("NOT"):
            self.take()
            return Not(self.parse_unary())
        if val == "(":
            self.take()
            expr = self.parse_or()
            if self.peek()[1] != ")":
                self.fail("expected ')'")
            self.take()
            return expr
        if val == "#":
            self.take()
            kind, name, _ = self.take()
            if kind != "word":
                self.fail("expected place id after '#'", self.tokens[self.i - 1])
            kind, op, _ = self.take()
            if op not in RELOPS:
                self.fail("expected relational operator", self.tokens[self.i - 1])
            kind, num, _ = self.take()
            if kind != "num":
                self.fail("expected integer constant", self.tokens[self.i - 1])
            return Atom(name, op, int(num))
        if kind == "end":
            self.fail("unexpected end of expression")
        self.fail(f"unexpected {val!r}")


def places_of(g: GuardExpr) -> set[str]:
    if isinstance(g, Atom):
        return {g.place}
    if isinstance(g, Not):
        return places_of(g.item)
    out: set[str] = set()
    for item in g.items:
        out |= places_of(item)
    return out


def parse_guard(text: str, net=None) -> GuardExpr:
    """Parse ``text`` into a guard tree.

    When ``net`` is given, every ``#id`` must name one of its places,
    otherwise :class:`UnknownPlaceError` is raised.
    """
    if not text or not text.strip():
        raise GuardSyntaxError("empty guard expression", 0, text or "")
    g = _Parser(text).parse()
    if net is not None:
        known = set(net.place_ids)
        for name in sorted(places_of(g)):
            if name not in known:
                raise UnknownPlaceError(name)
    return g


def to_text(g: GuardExpr) -> str:
    """Pretty-print with full parenthesisation; reparses to the same tree."""
    if isinstance(g, Atom):
        return f"#{g.place}{g.op}{g.value}"
    if isinstance(g, Not):
        return f"NOT ({to_text(g.item)})"
    sep = " AND " if isinstance(g, And) else " OR "
    return sep.join(f"({to_text(item)})" for item in g.items)


_CMP: dict[str, Callable[[int, int], bool]] = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "=": lambda a, b: a == b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}


def eval_guard(g: GuardExpr, m: Mapping[str, int]) -> bool:
    """Evaluate ``g`` against a place-id -> token-count mapping."""
    if isinstance(g, Atom):
        return _CMP[g.op](m[g.place], g.value)
    if isinstance(g, Not):
        return not eval_guard(g.item, m)
    if isinstance(g, And):
        return all(eval_guard(item, m) for item in g.items)
    return any(eval_guard(item, m) for item in g.items)


def compile_guard(g: GuardExpr, index: Mapping[str, int]) -> Callable[[Sequence[int]], bool]:
    """Return a fast predicate over a dense marking vector."""
    src = _py_source(g, index)
    return eval(f"lambda m: {src}", {})  # noqa: S307 - source built from a validated tree


def _py_source(g: GuardExpr, index: Mapping[str, int]) -> str:
    if isinstance(g, Atom):
        op = "==" if g.op == "=" else g.op
        return f"(m[{index[g.place]}] {op} {g.value})"
    if isinstance(g, Not):
        return f"(not {_py_source(g.item, index)})"
    joiner = " and " if isinstance(g, And) else " or "
    return "(" + joiner.join(_py_source(item, index) for item in g.items) + ")"


def to_postfix(g: GuardExpr, index: Mapping[str, int]) -> np.ndarray:
    """Lower ``g`` to an (n, 3) int64 postfix program of (opcode, place, value)."""
    prog: list[tuple[int, int, int]] = []

    def emit(node):
        if isinstance(node, Atom):
            prog.append((RELOPS.index(node.op), index[node.place], node.value))
        elif isinstance(node, Not):
            emit(node.item)
            prog.append((OP_NOT, 0, 0))
        else:
            code = OP_AND if isinstance(node, And) else OP_OR
            emit(node.items[0])
            for item in node.items[1:]:
                emit(item)
                prog.append((code, 0, 0))

    emit(g)
    return np.asarray(prog, dtype=np.int64).reshape(-1, 3)
