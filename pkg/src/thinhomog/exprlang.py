"""Closed-form expression language for boundary profiles and forcing terms.

A deliberately small grammar: real literals, the constant ``pi``, declared
variables, the unary functions ``sin``, ``cos``, ``exp``, ``abs``, ``sqrt``,
unary minus and the binary operators ``+ - * / ^``.  Precedence is
``^`` > unary minus > ``* /`` > ``+ -``; everything is left-associative
except ``^`` which associates to the right.  Evaluation is plain IEEE
double arithmetic and accepts numpy arrays for the variable bindings, so
profile functions can be sampled on whole lattices in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "abs", "sqrt")


class ExprError(ValueError):
    """Base class for all expression-language failures."""


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class DomainError(ExprError):
    """Evaluation left the real domain (division by zero, sqrt of a negative)."""


class DiffError(ExprError):
    """The expression cannot be differentiated symbolically."""


# --- AST nodes ------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Num | Var | Neg | Call | Bin

_ZERO = Num(0.0)
_ONE = Num(1.0)


# --- tokenizer / parser ---------------------------------------------------

class _Tokenizer:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        self._scan()
        self.index = 0

    def _scan(self):
        src = self.source
        i = 0
        while i < len(src):
            c = src[i]
            if c.isspace():
                i += 1
            elif c.isdigit() or c == ".":
                j = i
                while j < len(src) and (src[j].isdigit() or src[j] == "."):
                    j += 1
                if j < len(src) and src[j] in "eE":
                    k = j + 1
                    if k < len(src) and src[k] in "+-":
                        k += 1
                    if k < len(src) and src[k].isdigit():
                        j = k
                        while j < len(src) and src[j].isdigit():
                            j += 1
                text = src[i:j]
                try:
                    float(text)
                except ValueError:
                    raise ParseError(f"malformed number {text!r}", i) from None
                self.tokens.append(("num", text, i))
                i = j
            elif c.isalpha() or c == "_":
                j = i
                while j < len(src) and (src[j].isalnum() or src[j] == "_"):
                    j += 1
                self.tokens.append(("name", src[i:j], i))
                i = j
            elif c in "+-*/^()":
                self.tokens.append(("op", c, i))
                i += 1
            else:
                raise ParseError(f"unexpected character {c!r}", i)
        self.tokens.append(("end", "", len(src)))

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.index]

    def next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.index]
        self.index += 1
        return tok


class _Parser:
    def __init__(self, source: str, allowed_vars: frozenset[str]):
        self.toks = _Tokenizer(source)
        self.allowed = allowed_vars

    def parse(self) -> Expr:
        node = self._sum()
        kind, text, pos = self.toks.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos)
        return node

    def _sum(self) -> Expr:
        node = self._product()
        while True:
            kind, text, _ = self.toks.peek()
            if kind == "op" and text in "+-":
                self.toks.next()
                rhs = self._product()
                node = Bin(text, node, rhs)
            else:
                return node

    def _product(self) -> Expr:
        node = self._unary()
        while True:
            kind, text, _ = self.toks.peek()
            if kind == "op" and text in "*/":
                self.toks.next()
                rhs = self._unary()
                node = Bin(text, node, rhs)
            else:
                return node

    def _unary(self) -> Expr:
        kind, text, _ = self.toks.peek()
        if kind == "op" and text == "-":
            self.toks.next()
            return Neg(self._unary())
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        kind, text, _ = self.toks.peek()
        if kind == "op" and text == "^":
            self.toks.next()
            # right-associative; exponent may carry its own unary minus
            return Bin("^", base, self._unary())
        return base

    def _atom(self) -> Expr:
        kind, text, pos = self.toks.next()
        if kind == "num":
            return Num(float(text))
        if kind == "op" and text == "(":
            node = self._sum()
            kind, text, pos = self.toks.next()
            if text != ")":
                raise ParseError("expected ')'", pos)
            return node
        if kind == "name":
            if text == "pi":
                return Num(math.pi)
            if text in FUNCTIONS:
                kind2, text2, pos2 = self.toks.next()
                if text2 != "(":
                    raise ParseError(f"expected '(' after {text}", pos2)
                arg = self._sum()
                kind2, text2, pos2 = self.toks.next()
                if text2 != ")":
                    raise ParseError("expected ')'", pos2)
                return Call(text, arg)
            if text in self.allowed:
                return Var(text)
            raise ParseError(f"unknown or disallowed identifier {text!r}", pos)
        raise ParseError(f"unexpected token {text!r}", pos)


def parse(source: str, allowed_vars) -> Expr:
    """Parse ``source`` into an immutable AST.

    ``allowed_vars`` is the set of variable names that may appear free;
    anything else raises :class:`ParseError` with the offending position.
    """
    return _Parser(source, frozenset(allowed_vars)).parse()


# --- evaluation -----------------------------------------------------------

_CALLS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
}


def _eval_node(node: Expr, bindings: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return bindings[node.name]
        except KeyError:
            raise DomainError(f"unbound variable {node.name!r}") from None
    if isinstance(node, Neg):
        return -_eval_node(node.arg, bindings)
    if isinstance(node, Call):
        return _CALLS[node.func](_eval_node(node.arg, bindings))
    assert isinstance(node, Bin)
    a = _eval_node(node.left, bindings)
    b = _eval_node(node.right, bindings)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return np.power(a, b)


def evaluate(ast: Expr, bindings: dict):
    """Evaluate ``ast`` with the given variable bindings.

    Bindings may be scalars or numpy arrays (broadcasting applies).  Any
    non-finite result is reported as :class:`DomainError` instead of letting
    NaN/inf leak into callers.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = _eval_node(ast, bindings)
    if not np.all(np.isfinite(out)):
        raise DomainError("expression evaluation produced a non-finite value")
    return out


# --- symbolic differentiation ----------------------------------------------

def _is_num(node: Expr, value: float | None = None) -> bool:
    return isinstance(node, Num) and (value is None or node.value == value)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return Neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return _ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_num(a, 0.0):
        return _ZERO
    if _is_num(b, 1.0):
        return a
    return Bin("/", a, b)


def diff(ast: Expr, var: str) -> Expr:
    """Symbolic derivative of ``ast`` with respect to ``var``.

    Only constant integer exponents are differentiated under ``^``; the
    result is lightly folded (zeros and ones) but not otherwise simplified.
    """
    if isinstance(ast, Num):
        return _ZERO
    if isinstance(ast, Var):
        return _ONE if ast.name == var else _ZERO
    if isinstance(ast, Neg):
        inner = diff(ast.arg, var)
        return _ZERO if _is_num(inner, 0.0) else Neg(inner)
    if isinstance(ast, Call):
        darg = diff(ast.arg, var)
        if _is_num(darg, 0.0):
            return _ZERO
        if ast.func == "sin":
            outer: Expr = Call("cos", ast.arg)
        elif ast.func == "cos":
            outer = Neg(Call("sin", ast.arg))
        elif ast.func == "exp":
            outer = Call("exp", ast.arg)
        elif ast.func == "sqrt":
            outer = _div(Num(0.5), Call("sqrt", ast.arg))
        elif ast.func == "abs":
            # d|u| = sign(u) du, expressed as u/|u|; undefined at u = 0
            outer = _div(ast.arg, Call("abs", ast.arg))
        else:  # pragma: no cover - grammar admits no other functions
            raise DiffError(f"cannot differentiate {ast.func}")
        return _mul(outer, darg)
    assert isinstance(ast, Bin)
    da = diff(ast.left, var)
    db = diff(ast.right, var)
    if ast.op == "+":
        return _add(da, db)
    if ast.op == "-":
        return _sub(da, db)
    if ast.op == "*":
        return _add(_mul(da, ast.right), _mul(ast.left, db))
    if ast.op == "/":
        num = _sub(_mul(da, ast.right), _mul(ast.left, db))
        return _div(num, Bin("*", ast.right, ast.right))
    # power rule, restricted to constant integer exponents
    if not isinstance(ast.right, Num) or ast.right.value != round(ast.right.value):
        raise DiffError("'^' is differentiable only for constant integer exponents")
    n = ast.right.value
    if n == 0.0:
        return _ZERO
    return _mul(_mul(Num(n), Bin("^", ast.left, Num(n - 1.0))), da)


# --- printing --------------------------------------------------------------

def to_string(ast: Expr) -> str:
    """Render an AST back to parseable source (fully parenthesized)."""
    if isinstance(ast, Num):
        return repr(ast.value)
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{to_string(ast.arg)})"
    if isinstance(ast, Call):
        return f"{ast.func}({to_string(ast.arg)})"
    assert isinstance(ast, Bin)
    return f"({to_string(ast.left)}{ast.op}{to_string(ast.right)})"


def free_variables(ast: Expr) -> frozenset[str]:
    if isinstance(ast, Var):
        return frozenset((ast.name,))
    if isinstance(ast, (Neg, Call)):
        return free_variables(ast.arg)
    if isinstance(ast, Bin):
        return free_variables(ast.left) | free_variables(ast.right)
    return frozenset()
