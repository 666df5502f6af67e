"""Textual event expressions compiled to register-sized CNF.

Grammar::

    expr    := conj ("or" conj)*
    conj    := atom ("and" atom)*
    atom    := literal | "(" expr ")"
    literal := operand CMP UINT
    operand := IDENT | ("sum" | "max") "(" IDENT ")"

``and`` binds tighter than ``or``. A bare identifier aggregates by sum over
hops. Identifiers are slot names; ``-`` is accepted in place of ``_`` and
``queue_buildup`` is an alias for ``queue_occupancy``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..detection import (
    MAX_CLAUSES,
    MAX_LITERALS,
    Aggregate,
    CnfExpression,
    Comparator,
    Literal,
)
from ..int_wire import U32, Slot


class ExpressionError(ValueError):
    def __init__(self, message: str, pos: int | None = None):
        super().__init__(message if pos is None else f"{message} (at offset {pos})")
        self.pos = pos


ALIASES = {
    "queue_buildup": Slot.QUEUE_OCCUPANCY,
    "queue_depth": Slot.QUEUE_OCCUPANCY,
    "latency": Slot.HOP_LATENCY,
}

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<num>\d[\w]*)
      | (?P<cmp><=|>=|==|!=|<|>)
      | (?P<lp>\()
      | (?P<rp>\))
      | (?P<ident>[A-Za-z_][\w\-~]*)
    )""",
    re.VERBOSE,
)


def lookup_slot(name: str) -> Slot:
    norm = name.lower().replace("-", "_").replace("~", "_")
    if norm in ALIASES:
        return ALIASES[norm]
    try:
        return Slot[norm.upper()]
    except KeyError:
        raise ExpressionError(f"unknown identifier {name!r}") from None


# AST: Literal | ("and", l, r) | ("or", l, r)
@dataclass(frozen=True)
class Node:
    op: str
    left: object
    right: object


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character {text[pos:].lstrip()[:1]!r}", pos)
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, -1)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None:
            raise ExpressionError("unexpected end of expression")
        if (kind and tok[0] != kind) or (value and tok[1].lower() != value):
            raise ExpressionError(f"unexpected {tok[1]!r}", tok[2])
        self.i += 1
        return tok

    def keyword(self, word: str) -> bool:
        k, v, _ = self.peek()
        return k == "ident" and v.lower() == word

    def parse(self):
        node = self.expr()
        if self.peek()[0] is not None:
            raise ExpressionError(f"trailing input {self.peek()[1]!r}", self.peek()[2])
        return node

    def expr(self):
        node = self.conj()
        while self.keyword("or"):
            self.i += 1
            node = Node("or", node, self.conj())
        return node

    def conj(self):
        node = self.atom()
        while self.keyword("and"):
            self.i += 1
            node = Node("and", node, self.atom())
        return node

    def atom(self):
        if self.peek()[0] == "lp":
            self.i += 1
            node = self.expr()
            self.take("rp")
            return node
        return self.literal()

    def literal(self) -> Literal:
        _, name, pos = self.take("ident")
        agg = Aggregate.SUM
        if name.lower() in ("sum", "max") and self.peek()[0] == "lp":
            agg = Aggregate[name.upper()]
            self.take("lp")
            _, name, pos = self.take("ident")
            self.take("rp")
        slot = lookup_slot(name)
        _, sym, _ = self.take("cmp")
        _, num, npos = self.take("num")
        if not num.isdigit():
            raise ExpressionError(f"malformed number {num!r}", npos)
        value = int(num)
        if value > U32:
            raise ExpressionError(f"constant {value} does not fit in 32 bits", npos)
        return Literal(slot, Comparator.from_symbol(sym), value, agg)


def parse_expression(text: str):
    return _Parser(text).parse()


def to_cnf(node) -> list[tuple[Literal, ...]]:
    if isinstance(node, Literal):
        return [(node,)]
    left, right = to_cnf(node.left), to_cnf(node.right)
    if node.op == "and":
        return left + right
    # distribute or over and
    return [_dedup(a + b) for a in left for b in right]


def _dedup(lits) -> tuple[Literal, ...]:
    return tuple(dict.fromkeys(lits))


def simplify(clauses: list[tuple[Literal, ...]]) -> list[tuple[Literal, ...]]:
    """Drop duplicate clauses and clauses absorbed by a smaller one."""
    uniq = list(dict.fromkeys(_dedup(c) for c in clauses))
    sets = [frozenset(c) for c in uniq]
    keep = []
    for i, c in enumerate(uniq):
        absorbed = any(
            j != i and (sets[j] < sets[i] or (sets[j] == sets[i] and j < i)) for j in range(len(uniq))
        )
        if not absorbed:
            keep.append(c)
    return keep


def compile_expression(text: str) -> CnfExpression:
    clauses = simplify(to_cnf(parse_expression(text)))
    if len(clauses) > MAX_CLAUSES:
        raise ExpressionError(f"expression needs {len(clauses)} clauses, limit is {MAX_CLAUSES}")
    widest = max((len(c) for c in clauses), default=0)
    if widest > MAX_LITERALS:
        raise ExpressionError(f"expression needs {widest} literals in one clause, limit is {MAX_LITERALS}")
    return CnfExpression(tuple(clauses))
