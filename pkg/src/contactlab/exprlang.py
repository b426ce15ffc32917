"""Closed-form scalar expressions with exact symbolic differentiation.

Expressions are immutable trees built from literals, chart variables, the
binary operators ``+ - * / ^``, unary minus and a fixed list of elementary
functions. They are produced by :func:`parse` or by the arithmetic operators
on :class:`Expr`, differentiated with :func:`differentiate`, evaluated
pointwise with :func:`evaluate` and compiled to vectorised numpy callables
with :func:`compile_exprs`.

Light constant folding (``0 + e -> e``, ``1 * e -> e``, literal arithmetic)
happens in the node constructors so derivative trees stay small; no further
simplification is attempted.

Example
-------
>>> e = parse("1 - x^2 - y^2")
>>> evaluate(differentiate(e, "y"), {"x": 0.0, "y": 3.0, "z": 0.0})
-6.0
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifier

CARTESIAN_VARS = ("x", "y", "z")
TORUS_VARS = ("a", "b", "t")
CYLINDER_VARS = ("x", "t")

FUNCTIONS = ("sin", "cos", "sinh", "cosh", "tanh", "exp", "ln", "sqrt", "asinh")


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float

    def __repr__(self):
        return f"Num({self.value!r})"


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str

    def __repr__(self):
        return f"Var({self.name!r})"


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    fn: str
    arg: Expr


ZERO = Num(0.0)
ONE = Num(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Num(float(value))
    if isinstance(value, str):
        return parse(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Expr")


def is_const(e: Expr, value: float | None = None) -> bool:
    if not isinstance(e, Num):
        return False
    return value is None or e.value == value


# -- folding constructors ----------------------------------------------------

def _fold(fn: Callable[[], float]) -> Expr | None:
    try:
        v = fn()
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    if not math.isfinite(v):
        return None
    return Num(float(v))


def add(a: Expr, b: Expr) -> Expr:
    if is_const(a, 0.0):
        return b
    if is_const(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if is_const(b, 0.0):
        return a
    if is_const(a, 0.0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if is_const(a, 0.0) or is_const(b, 0.0):
        return ZERO
    if is_const(a, 1.0):
        return b
    if is_const(b, 1.0):
        return a
    if is_const(a, -1.0):
        return neg(b)
    if is_const(b, -1.0):
        return neg(a)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return Bin("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if is_const(b, 1.0):
        return a
    if is_const(a, 0.0) and not is_const(b, 0.0):
        return ZERO
    if isinstance(a, Num) and isinstance(b, Num):
        folded = _fold(lambda: a.value / b.value)
        if folded is not None:
            return folded
    return Bin("/", a, b)


def power(a: Expr, b: Expr) -> Expr:
    if is_const(b, 1.0):
        return a
    if is_const(b, 0.0):
        return ONE
    if isinstance(a, Num) and isinstance(b, Num):
        folded = _fold(lambda: math.pow(a.value, b.value))
        if folded is not None:
            return folded
    return Bin("^", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


_MATH = {
    "sin": math.sin,
    "cos": math.cos,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "exp": math.exp,
    "ln": math.log,
    "sqrt": math.sqrt,
    "asinh": math.asinh,
}


def call(fn: str, a: Expr) -> Expr:
    if fn not in _MATH:
        raise UnknownIdentifier(fn, 0)
    if isinstance(a, Num):
        folded = _fold(lambda: _MATH[fn](a.value))
        if folded is not None:
            return folded
    return Call(fn, a)


def sin(a): return call("sin", as_expr(a))
def cos(a): return call("cos", as_expr(a))
def sinh(a): return call("sinh", as_expr(a))
def cosh(a): return call("cosh", as_expr(a))
def tanh(a): return call("tanh", as_expr(a))
def exp(a): return call("exp", as_expr(a))
def ln(a): return call("ln", as_expr(a))
def sqrt(a): return call("sqrt", as_expr(a))
def asinh(a): return call("asinh", as_expr(a))


# -- tokenizer and Pratt parser --------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

# binding powers: + - < * / < unary minus < ^
_INFIX = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    try:
        source.encode("ascii")
    except UnicodeEncodeError as exc:
        raise ExprSyntaxError("non-ASCII character", exc.start) from None
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), start))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source, variables, constants):
        self.tokens = _tokenize(source)
        self.i = 0
        self.variables = tuple(variables)
        self.constants = dict(constants or {})

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.advance()
        if tok.text != text:
            found = tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", tok.offset)

    def parse(self) -> Expr:
        e = self.expression(0)
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset)
        return e

    def expression(self, min_bp: int) -> Expr:
        left = self.prefix()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in _INFIX:
                bp = _INFIX[tok.text]
                if bp <= min_bp:
                    break
                self.advance()
                right = self.expression(bp)
                left = _BINARY[tok.text](left, right)
            elif tok.kind in ("num", "name") or tok.text == "(":
                raise ExprSyntaxError("missing operator (implicit multiplication)", tok.offset)
            else:
                break
        return left

    def prefix(self) -> Expr:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            name = tok.text
            if self.peek().text == "(":
                if name not in FUNCTIONS:
                    raise UnknownIdentifier(name, tok.offset)
                self.advance()
                arg = self.expression(0)
                self.expect(")")
                return call(name, arg)
            if name in self.variables:
                return Var(name)
            if name in self.constants:
                return as_expr(self.constants[name])
            raise UnknownIdentifier(name, tok.offset)
        if tok.text == "-":
            return neg(self.expression(_UNARY_BP))
        if tok.text == "+":
            return self.expression(_UNARY_BP)
        if tok.text == "(":
            e = self.expression(0)
            self.expect(")")
            return e
        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", tok.offset)


_BINARY = {"+": add, "-": sub, "*": mul, "/": div, "^": power}


def parse(source: str, variables: Sequence[str] = CARTESIAN_VARS,
          constants: Mapping[str, float | Expr] | None = None) -> Expr:
    """Parse expression text.

    Parameters
    ----------
    source : str
        ASCII expression, e.g. ``"exp(r*t)*du1"``.
    variables : sequence of str
        Chart variable names accepted as free variables.
    constants : mapping, optional
        Named constants substituted at parse time.

    Raises
    ------
    ExprSyntaxError
        On malformed input (``offset`` locates the fault).
    UnknownIdentifier
        For names outside ``variables``, ``constants`` and the function list.
    """
    return _Parser(source, variables, constants).parse()


def resolve_constants(definitions: Mapping[str, str | float],
                      base: Mapping[str, float] | None = None) -> dict[str, float]:
    """Evaluate constant definitions in order; each may use earlier ones."""
    out = dict(base or {})
    for name, text in definitions.items():
        if isinstance(text, (int, float)):
            out[name] = float(text)
            continue
        e = parse(str(text), variables=(), constants=out)
        out[name] = evaluate(e, {})
    return out


# -- printing ------------------------------------------------------------------

def to_source(e: Expr) -> str:
    """Fully parenthesised text that parses back to an identical evaluator."""
    if isinstance(e, Num):
        text = repr(e.value)
        return f"({text})" if e.value < 0 or text.startswith("-") else text
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, Bin):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    raise TypeError(type(e))


# -- differentiation -----------------------------------------------------------

def differentiate(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Bin):
        u, v = e.left, e.right
        du = differentiate(u, var)
        dv = differentiate(v, var)
        if e.op == "+":
            return add(du, dv)
        if e.op == "-":
            return sub(du, dv)
        if e.op == "*":
            return add(mul(du, v), mul(u, dv))
        if e.op == "/":
            return div(sub(mul(du, v), mul(u, dv)), mul(v, v))
        if e.op == "^":
            if isinstance(v, Num):
                return mul(mul(v, power(u, Num(v.value - 1.0))), du)
            # u^v = exp(v ln u)
            return mul(e, add(mul(dv, call("ln", u)), div(mul(v, du), u)))
    if isinstance(e, Call):
        u = e.arg
        du = differentiate(u, var)
        if is_const(du, 0.0):
            return ZERO
        fn = e.fn
        if fn == "sin":
            inner = call("cos", u)
        elif fn == "cos":
            inner = neg(call("sin", u))
        elif fn == "sinh":
            inner = call("cosh", u)
        elif fn == "cosh":
            inner = call("sinh", u)
        elif fn == "tanh":
            inner = sub(ONE, mul(e, e))
        elif fn == "exp":
            inner = e
        elif fn == "ln":
            return div(du, u)
        elif fn == "sqrt":
            return div(du, mul(Num(2.0), e))
        elif fn == "asinh":
            return div(du, call("sqrt", add(mul(u, u), ONE)))
        else:
            raise UnknownIdentifier(fn, 0)
        return mul(inner, du)
    raise TypeError(type(e))


def gradient(e: Expr, variables: Sequence[str]) -> list[Expr]:
    return [differentiate(e, v) for v in variables]


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Num):
        return set()
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, Call):
        return free_vars(e.arg)
    return free_vars(e.left) | free_vars(e.right)


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (rebuilding through the folding constructors)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, Call):
        return call(e.fn, substitute(e.arg, mapping))
    return _BINARY[e.op](substitute(e.left, mapping), substitute(e.right, mapping))


def node_count(e: Expr) -> int:
    if isinstance(e, (Num, Var)):
        return 1
    if isinstance(e, (Neg, Call)):
        return 1 + node_count(e.arg)
    return 1 + node_count(e.left) + node_count(e.right)


# -- evaluation ----------------------------------------------------------------

def evaluate(e: Expr, point: Mapping[str, float]) -> float:
    """IEEE double value of ``e`` at ``point``.

    Raises
    ------
    DomainError
        Division by zero, logarithm of a non-positive number, square root of a
        negative number, non-finite results.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return float(point[e.name])
        except KeyError:
            raise UnknownIdentifier(e.name, 0) from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, point)
    try:
        if isinstance(e, Call):
            u = evaluate(e.arg, point)
            if e.fn == "ln" and u <= 0.0:
                raise DomainError(f"ln of non-positive value {u}")
            if e.fn == "sqrt" and u < 0.0:
                raise DomainError(f"sqrt of negative value {u}")
            v = _MATH[e.fn](u)
        else:
            a = evaluate(e.left, point)
            b = evaluate(e.right, point)
            if e.op == "+":
                v = a + b
            elif e.op == "-":
                v = a - b
            elif e.op == "*":
                v = a * b
            elif e.op == "/":
                if b == 0.0:
                    raise DomainError("division by zero")
                v = a / b
            else:
                v = math.pow(a, b)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(str(exc)) from None
    if not math.isfinite(v):
        raise DomainError(f"non-finite value in {to_source(e)[:60]}")
    return v


_NP_FUNCS = {
    "sin": "np.sin", "cos": "np.cos", "sinh": "np.sinh", "cosh": "np.cosh",
    "tanh": "np.tanh", "exp": "np.exp", "ln": "np.log", "sqrt": "np.sqrt",
    "asinh": "np.arcsinh",
}
_NP_OPS = {"+": "+", "-": "-", "*": "*", "/": "/", "^": "**"}


@dataclass
class CompiledExprs:
    """Vectorised evaluator for a tuple of expressions over shared variables.

    Calling with coordinate arrays returns an array of shape
    ``(len(exprs),) + broadcast_shape``.
    """

    variables: tuple[str, ...]
    size: int
    source: str = field(repr=False)
    _fn: Callable = field(repr=False)

    def __call__(self, *coords, check: bool = True) -> np.ndarray:
        coords = [np.asarray(c, dtype=float) for c in coords]
        shape = np.broadcast_shapes(*(c.shape for c in coords)) if coords else ()
        with np.errstate(all="ignore"):
            vals = self._fn(*coords)
        out = np.empty((self.size,) + shape)
        for i, v in enumerate(vals):
            out[i] = v
        if check and not np.all(np.isfinite(out)):
            raise DomainError("non-finite value during vectorised evaluation")
        return out


def compile_exprs(exprs: Iterable[Expr], variables: Sequence[str]) -> CompiledExprs:
    """Compile expressions to a single numpy function (straight-line code)."""
    exprs = list(exprs)
    variables = tuple(variables)
    lines: list[str] = []
    memo: dict[int, str] = {}
    seen: dict[str, str] = {}  # structurally equal subtrees share one temporary
    counter = [0]

    def emit(e: Expr) -> str:
        key = id(e)
        if key in memo:
            return memo[key]
        if isinstance(e, Num):
            name = repr(e.value)
            if e.value < 0:
                name = f"({name})"
        elif isinstance(e, Var):
            if e.name not in variables:
                raise UnknownIdentifier(e.name, 0)
            name = f"v_{e.name}"
        else:
            if isinstance(e, Neg):
                rhs = f"-{emit(e.arg)}"
            elif isinstance(e, Call):
                rhs = f"{_NP_FUNCS[e.fn]}({emit(e.arg)})"
            else:
                rhs = f"{emit(e.left)} {_NP_OPS[e.op]} {emit(e.right)}"
            if rhs in seen:
                name = seen[rhs]
            else:
                name = f"t{counter[0]}"
                counter[0] += 1
                lines.append(f"    {name} = {rhs}")
                seen[rhs] = name
        memo[key] = name
        return name

    results = [emit(e) for e in exprs]
    args = ", ".join(f"v_{v}" for v in variables)
    body = "\n".join(lines)
    src = f"def _compiled({args}):\n{body}\n    return ({', '.join(results)},)\n"
    namespace = {"np": np}
    exec(compile(src, "<exprlang>", "exec"), namespace)
    return CompiledExprs(variables, len(exprs), src, namespace["_compiled"])
