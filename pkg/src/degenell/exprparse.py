"""Coefficient expression language.

Grammar (loosest to tightest binding)::

    expr    := expr ('+' | '-') expr          left associative
             | expr ('*' | '/') expr          left associative
             | '-' expr                        prefix minus
             | expr '^' expr                   right associative
             | NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

so ``-t^2`` is ``-(t^2)`` and ``2^3^2`` is ``2^9 = 512``.  Variables are
``x1 .. x{n-1}`` and ``t``; functions are sin, cos, exp, log, sqrt, abs.

Evaluation works on floats or numpy arrays (broadcast over grid nodes).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")

_BINARY_POWER = {"+": (10, 11), "-": (10, 11), "*": (20, 21), "/": (20, 21), "^": (41, 40)}
_PREFIX_POWER = 30


class ExprError(ValueError):
    """Parse-time failure located at a byte offset of the UTF-8 input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.message = message
        self.offset = offset


class ExprSyntaxError(ExprError):
    pass


class UnknownIdentifierError(ExprError):
    pass


class ArityError(ExprError):
    pass


class EvalDomainError(ArithmeticError):
    def __init__(self, message: str, node: "Node"):
        super().__init__(f"{message} in {to_text(node)}")
        self.node = node


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, BinOp, Call]


def variables_for(n: int) -> tuple[str, ...]:
    return tuple(f"x{k}" for k in range(1, n)) + ("t",)


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int  # byte offset


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    byte = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", byte)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), byte))
        byte += len(m.group().encode("utf-8"))
        pos = m.end()
    toks.append(_Tok("end", "", byte))
    return toks


class _Parser:
    def __init__(self, text: str, n: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = variables_for(n)

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.next()
        if tok.text != text:
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", tok.offset)
        return tok

    def parse(self) -> Node:
        node = self.expr(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {tok.text!r}", tok.offset)
        return node

    def expr(self, min_power: int) -> Node:
        left = self.prefix()
        while True:
            tok = self.peek()
            if tok.kind != "op" or tok.text not in _BINARY_POWER:
                break
            lbp, rbp = _BINARY_POWER[tok.text]
            if lbp < min_power:
                break
            self.next()
            left = BinOp(tok.text, left, self.expr(rbp))
        return left

    def prefix(self) -> Node:
        tok = self.next()
        if tok.kind == "num":
            value = float(tok.text)
            if not np.isfinite(value):
                raise ExprSyntaxError(f"number {tok.text} overflows", tok.offset)
            return Num(value)
        if tok.text == "-":
            return Neg(self.expr(_PREFIX_POWER))
        if tok.text == "(":
            inner = self.expr(0)
            self.expect(")")
            return inner
        if tok.kind == "name":
            return self.name(tok)
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"expected an operand, found {found}", tok.offset)

    def name(self, tok: _Tok) -> Node:
        if tok.text in FUNCTIONS:
            if self.peek().text != "(":
                raise ArityError(f"function {tok.text} takes 1 argument", tok.offset)
            open_tok = self.next()
            if self.peek().text == ")":
                raise ArityError(f"function {tok.text} takes 1 argument, got 0", open_tok.offset)
            arg = self.expr(0)
            if self.peek().text == ",":
                raise ArityError(f"function {tok.text} takes 1 argument", self.peek().offset)
            self.expect(")")
            return Call(tok.text, arg)
        if tok.text in self.vars:
            return Var(tok.text)
        raise UnknownIdentifierError(f"unknown identifier {tok.text!r}", tok.offset)


def parse(text: str | bytes, n: int = 2) -> Node:
    """Parse ``text`` into an expression tree over the variables of dimension ``n``."""
    if n not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {n}")
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ExprSyntaxError("invalid UTF-8", exc.start) from None
    return _Parser(text, n).parse()


def to_text(node: Node) -> str:
    """Print with explicit parentheses; ``parse(to_text(a)) == a``."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.operand)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    return f"{node.func}({to_text(node.arg)})"


def free_variables(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Neg):
        return free_variables(node.operand)
    if isinstance(node, BinOp):
        return free_variables(node.left) | free_variables(node.right)
    return free_variables(node.arg)


def polynomial_degree(node: Node) -> int | None:
    """Total polynomial degree if recognizably polynomial, else None."""
    if isinstance(node, Num):
        return 0
    if isinstance(node, Var):
        return 1
    if isinstance(node, Neg):
        return polynomial_degree(node.operand)
    if isinstance(node, Call):
        return 0 if not free_variables(node.arg) else None
    dl, dr = polynomial_degree(node.left), polynomial_degree(node.right)
    if dl is None or dr is None:
        return None
    if node.op in "+-":
        return max(dl, dr)
    if node.op == "*":
        return dl + dr
    if node.op == "/":
        return dl if dr == 0 and not free_variables(node.right) else None
    # '^' with a constant non-negative integer exponent
    if free_variables(node.right):
        return None
    try:
        k = float(evaluate(node.right, {}))
    except EvalDomainError:
        return None
    if k < 0 or k != int(k):
        return 0 if dl == 0 else None
    return dl * int(k)


def _domain_check(bad, message: str, node: Node) -> None:
    if np.any(bad):
        raise EvalDomainError(message, node)


def _eval(node: Node, env: Mapping[str, np.ndarray | float]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            _domain_check(np.asarray(b) == 0, "division by zero", node)
            return np.divide(a, b)
        fractional = np.asarray(b) != np.round(b)
        _domain_check((np.asarray(a) < 0) & fractional, "fractional power of a negative number", node)
        _domain_check((np.asarray(a) == 0) & (np.asarray(b) < 0), "zero to a negative power", node)
        return np.power(np.asarray(a, dtype=float), b)
    x = _eval(node.arg, env)
    if node.func == "log":
        _domain_check(np.asarray(x) <= 0, "log of non-positive argument", node)
        return np.log(x)
    if node.func == "sqrt":
        _domain_check(np.asarray(x) < 0, "sqrt of negative argument", node)
        return np.sqrt(x)
    return {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs}[node.func](x)


def evaluate(node: Node, env: Mapping[str, np.ndarray | float]):
    """Evaluate at a point or over arrays; ``env`` maps variable names to values."""
    missing = free_variables(node) - set(env)
    if missing:
        raise KeyError(f"no value for variable(s) {sorted(missing)}")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = _eval(node, env)
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


def evaluate_at(node: Node, point, n: int):
    """Evaluate at coordinates ``point = (x1, ..., t)``; arrays broadcast."""
    if len(point) != n:
        raise ValueError(f"point has {len(point)} coordinates, expected {n}")
    return evaluate(node, dict(zip(variables_for(n), point)))


def as_node(value: Node | str | float | int, n: int) -> Node:
    if isinstance(value, (Num, Var, Neg, BinOp, Call)):
        return value
    if isinstance(value, str):
        return parse(value, n)
    return Num(float(value))
