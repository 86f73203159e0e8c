"""Scalar expression parsing, differentiation, and (interval) evaluation.

Node dynamics are given as strings over the variables ``x`` and ``t``::

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' exponent)*          exponent: integer literal, e.g. 3, -2, (-2)
    atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

Precedence (tightest first): ``^``, unary ``-``, ``* /``, ``+ -``; binary
operators are left-associative.  Available functions: ``sin cos tanh exp log``.
Exponents are integer literals only, which keeps interval evaluation of powers
exact (even powers use the [0, max] rule).  There is no abs/min/max: dynamics
stay C^1.

For matrix-factored systems the same grammar is used with indexed state
variables ``x1 .. xn`` (1-based) instead of the scalar ``x``; pass
``state_dim`` to :func:`parse`.

Interval evaluation rounds outward by one ULP at every operation: the result
is a certified enclosure of the true range (soundness over tightness).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Optional, Union

import numpy as np

__all__ = [
    "Interval",
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "ExprDomainError",
    "parse",
    "to_str",
    "diff_x",
    "evaluate",
    "eval_interval",
    "eval_interval_vec",
    "evaluate_vec",
    "compile_scalar",
    "compile_vec",
    "free_variables",
]

_FUNCTIONS = ("sin", "cos", "tanh", "exp", "log")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprDomainError(ExprError):
    """Evaluation hit a singularity; carries the offending subexpression."""

    def __init__(self, message: str, subexpr: str):
        super().__init__(f"{message} in '{subexpr}'")
        self.subexpr = subexpr


# ---------------------------------------------------------------------------
# intervals with outward rounding


def _down(v: float) -> float:
    return math.nextafter(v, -math.inf)


def _up(v: float) -> float:
    return math.nextafter(v, math.inf)


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] on the extended real line."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval bound is NaN")
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @staticmethod
    def point(v: float) -> "Interval":
        return Interval(v, v)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, v: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= v <= self.hi + slack

    def sample(self, u: float) -> float:
        """Point at relative position u in [0, 1]."""
        return self.lo + (self.hi - self.lo) * u

    def __repr__(self):
        return f"[{self.lo:g}, {self.hi:g}]"


def _lo_sum(u: float, v: float) -> float:
    s = u + v
    return -math.inf if math.isnan(s) else _down(s)  # nan only from inf - inf


def _hi_sum(u: float, v: float) -> float:
    s = u + v
    return math.inf if math.isnan(s) else _up(s)


def _iadd(a: Interval, b: Interval) -> Interval:
    return Interval(_lo_sum(a.lo, b.lo), _hi_sum(a.hi, b.hi))


def _isub(a: Interval, b: Interval) -> Interval:
    return Interval(_lo_sum(a.lo, -b.hi), _hi_sum(a.hi, -b.lo))


def _ineg(a: Interval) -> Interval:
    return Interval(-a.hi, -a.lo)  # exact in IEEE


def _prod(u: float, v: float) -> float:
    # 0 * inf -> 0: the zero factor wins for every finite representative
    if u == 0.0 or v == 0.0:
        return 0.0
    return u * v


def _imul(a: Interval, b: Interval) -> Interval:
    c = (_prod(a.lo, b.lo), _prod(a.lo, b.hi), _prod(a.hi, b.lo), _prod(a.hi, b.hi))
    return Interval(_down(min(c)), _up(max(c)))


def _irecip(a: Interval, node_str: str) -> Interval:
    if a.lo <= 0.0 <= a.hi:
        raise ExprDomainError("division by an interval containing zero", node_str)
    return Interval(_down(1.0 / a.hi), _up(1.0 / a.lo))


def _idiv(a: Interval, b: Interval, node_str: str) -> Interval:
    return _imul(a, _irecip(b, node_str))


def _fpow(v: float, k: int) -> float:
    try:
        return v ** k
    except OverflowError:
        return math.inf if (v > 0.0 or k % 2 == 0) else -math.inf


def _ipow(a: Interval, k: int, node_str: str) -> Interval:
    if k == 0:
        return Interval(1.0, 1.0)
    if k < 0:
        return _irecip(_ipow(a, -k, node_str), node_str)
    if k % 2 == 1:
        return Interval(_down(_fpow(a.lo, k)), _up(_fpow(a.hi, k)))
    # even power: range of |x|^k
    hi_abs = max(abs(a.lo), abs(a.hi))
    lo_abs = 0.0 if a.lo <= 0.0 <= a.hi else min(abs(a.lo), abs(a.hi))
    return Interval(max(0.0, _down(_fpow(lo_abs, k))), _up(_fpow(hi_abs, k)))


def _trig_range(a: Interval, phase: float) -> Interval:
    """Sound range of sin(x + phase) over a (cos uses phase = pi/2)."""
    lo, hi = a.lo + phase, a.hi + phase
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi - lo >= 2.0 * math.pi:
        return Interval(-1.0, 1.0)
    vals = [math.sin(lo), math.sin(hi)]
    # critical points pi/2 + k*pi; widen the index range by one to absorb
    # float error in the division (missing one costs O(eps^2), including an
    # extra one only loosens the bound)
    k0 = math.floor((lo - math.pi / 2.0) / math.pi) - 1
    k1 = math.ceil((hi - math.pi / 2.0) / math.pi) + 1
    for k in range(k0, k1 + 1):
        c = math.pi / 2.0 + k * math.pi
        if lo <= c <= hi:
            vals.append(1.0 if k % 2 == 0 else -1.0)
    return Interval(max(-1.0, _down(min(vals))), min(1.0, _up(max(vals))))


def _itanh(a: Interval) -> Interval:
    return Interval(max(-1.0, _down(math.tanh(a.lo))), min(1.0, _up(math.tanh(a.hi))))


def _iexp(a: Interval) -> Interval:
    try:
        hi = _up(math.exp(a.hi))
    except OverflowError:
        hi = math.inf
    try:
        lo = _down(math.exp(a.lo))
    except OverflowError:
        lo = math.inf
    return Interval(max(0.0, lo), hi)


def _ilog(a: Interval, node_str: str) -> Interval:
    if a.lo <= 0.0:
        raise ExprDomainError("log over an interval touching (-inf, 0]", node_str)
    return Interval(_down(math.log(a.lo)), _up(math.log(a.hi)))


# ---------------------------------------------------------------------------
# AST


class Expr:
    """Base class; nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_str(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str
    index: Optional[int] = None  # 0-based state index for x1..xn, else None


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


# ---------------------------------------------------------------------------
# tokenizer / parser

_Token = tuple  # (kind, text, offset)


def _tokenize(source: str) -> Iterator[_Token]:
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            yield ("num", source[i:j], i)
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            yield ("ident", source[i:j], i)
            i = j
            continue
        if c in "+-*/^()":
            yield (c, c, i)
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", i)
    yield ("end", "", n)


class _Parser:
    def __init__(self, source: str, state_dim: Optional[int]):
        self.source = source
        self.state_dim = state_dim
        self.tokens = list(_tokenize(source))
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str) -> _Token:
        tok = self.peek()
        if tok[0] != kind:
            raise ExprSyntaxError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return self.advance()

    def starts_operand(self) -> bool:
        return self.peek()[0] in ("num", "ident", "(", "-")

    def parse(self) -> Expr:
        e = self.sum_()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def sum_(self) -> Expr:
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()
            if not self.starts_operand():
                raise ExprSyntaxError(f"operator {op[1]!r} lacks a right operand", op[2])
            e = BinOp(op[0], e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()
            if not self.starts_operand():
                raise ExprSyntaxError(f"operator {op[1]!r} lacks a right operand", op[2])
            e = BinOp(op[0], e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.peek()[0] == "-":
            op = self.advance()
            if not self.starts_operand():
                raise ExprSyntaxError("unary '-' lacks an operand", op[2])
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while self.peek()[0] == "^":
            self.advance()
            e = Pow(e, self.exponent())
        return e

    def exponent(self) -> int:
        neg = False
        parens = False
        if self.peek()[0] == "(":
            self.advance()
            parens = True
        if self.peek()[0] == "-":
            self.advance()
            neg = True
        tok = self.peek()
        if tok[0] != "num" or any(ch in tok[1] for ch in ".eE"):
            raise ExprSyntaxError("exponent must be an integer literal", tok[2])
        self.advance()
        if parens:
            self.expect(")")
        k = int(tok[1])
        return -k if neg else k

    def atom(self) -> Expr:
        tok = self.advance()
        kind, text, off = tok
        if kind == "num":
            return Const(float(text))
        if kind == "(":
            e = self.sum_()
            self.expect(")")
            return e
        if kind == "ident":
            if text in _FUNCTIONS:
                self.expect("(")
                arg = self.sum_()
                self.expect(")")
                return Call(text, arg)
            return self.variable(text, off)
        raise ExprSyntaxError(f"unexpected {text!r}", off)

    def variable(self, text: str, off: int) -> Expr:
        if text == "t":
            return Var("t")
        if self.state_dim is None:
            if text == "x":
                return Var("x")
            raise ExprSyntaxError(f"unknown identifier {text!r}", off)
        # vector context: x1 .. xn only
        if text.startswith("x") and text[1:].isdigit():
            idx = int(text[1:])
            if 1 <= idx <= self.state_dim:
                return Var(text, idx - 1)
            raise ExprSyntaxError(
                f"state index out of range in {text!r} (state_dim={self.state_dim})", off
            )
        raise ExprSyntaxError(f"unknown identifier {text!r}", off)


def parse(source: str, state_dim: Optional[int] = None) -> Expr:
    """Parse a dynamics expression.

    With ``state_dim=None`` the state variable is the scalar ``x``; with
    ``state_dim=n`` the indexed variables ``x1 .. xn`` are available instead
    (matrix-factored systems).  ``t`` is always available.
    """
    return _Parser(source, state_dim).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 10, "-": 10, "*": 20, "/": 20}


def _print(e: Expr, ctx: int) -> str:
    if isinstance(e, Const):
        s = repr(e.value) if e.value >= 0 else f"({e.value!r})"
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        s = "-" + _print(e.arg, 31)
        return f"({s})" if ctx > 30 else s
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{_print(e.left, p)} {e.op} {_print(e.right, p + 1)}"
        return f"({s})" if ctx > p else s
    if isinstance(e, Pow):
        return f"{_print(e.base, 41)}^{e.exponent}"
    if isinstance(e, Call):
        return f"{e.fn}({_print(e.arg, 0)})"
    raise TypeError(f"not an Expr node: {e!r}")


def to_str(e: Expr) -> str:
    """Render back to the grammar; parse(to_str(e)) evaluates identically."""
    return _print(e, 0)


def free_variables(e: Expr) -> set:
    """Names of variables appearing in e."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Neg):
        return free_variables(e.arg)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Pow):
        return free_variables(e.base)
    if isinstance(e, Call):
        return free_variables(e.arg)
    return set()


# ---------------------------------------------------------------------------
# symbolic derivative


def _add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and a.value == 0.0:
        return b
    if isinstance(b, Const) and b.value == 0.0:
        return a
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const) and b.value == 0.0:
        return a
    if isinstance(a, Const) and a.value == 0.0:
        return _neg(b)
    return BinOp("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    for u, v in ((a, b), (b, a)):
        if isinstance(u, Const):
            if u.value == 0.0:
                return Const(0.0)
            if u.value == 1.0:
                return v
    return BinOp("*", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    return Neg(a)


def diff_x(e: Expr) -> Expr:
    """Symbolic derivative with respect to the scalar state variable x."""
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        if e.index is not None:
            raise ExprError(
                f"d/dx of indexed variable {e.name!r} is undefined; "
                "factored-system entries are bounded by sampling, not differentiated"
            )
        return Const(1.0) if e.name == "x" else Const(0.0)
    if isinstance(e, Neg):
        return _neg(diff_x(e.arg))
    if isinstance(e, BinOp):
        da, db = diff_x(e.left), diff_x(e.right)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.right), _mul(e.left, db))
        # quotient rule; simpler form when the denominator is x-free
        if isinstance(db, Const) and db.value == 0.0:
            return BinOp("/", da, e.right)
        num = _sub(_mul(da, e.right), _mul(e.left, db))
        return BinOp("/", num, Pow(e.right, 2))
    if isinstance(e, Pow):
        k = e.exponent
        if k == 0:
            return Const(0.0)
        du = diff_x(e.base)
        inner = e.base if k == 2 else Pow(e.base, k - 1)
        if k == 1:
            return du
        return _mul(_mul(Const(float(k)), inner), du)
    if isinstance(e, Call):
        du = diff_x(e.arg)
        u = e.arg
        if e.fn == "sin":
            outer: Expr = Call("cos", u)
        elif e.fn == "cos":
            outer = Neg(Call("sin", u))
        elif e.fn == "tanh":
            outer = _sub(Const(1.0), Pow(Call("tanh", u), 2))
        elif e.fn == "exp":
            outer = Call("exp", u)
        else:  # log
            return BinOp("/", du, u)
        return _mul(outer, du)
    raise TypeError(f"not an Expr node: {e!r}")


# ---------------------------------------------------------------------------
# pointwise evaluation (checked reference path)


def _eval(e: Expr, x, t: float) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.name == "t":
            return t
        if e.index is None:
            return float(x)
        return float(x[e.index])
    if isinstance(e, Neg):
        return -_eval(e.arg, x, t)
    if isinstance(e, BinOp):
        a = _eval(e.left, x, t)
        b = _eval(e.right, x, t)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise ExprDomainError("division by zero", to_str(e))
        return a / b
    if isinstance(e, Pow):
        base = _eval(e.base, x, t)
        if e.exponent < 0 and base == 0.0:
            raise ExprDomainError("zero base with negative exponent", to_str(e))
        try:
            return base ** e.exponent
        except OverflowError:
            return math.inf if base > 0 or e.exponent % 2 == 0 else -math.inf
    if isinstance(e, Call):
        v = _eval(e.arg, x, t)
        if e.fn == "log":
            if v <= 0.0:
                raise ExprDomainError("log of a nonpositive value", to_str(e))
            return math.log(v)
        if e.fn == "exp":
            try:
                return math.exp(v)
            except OverflowError:
                return math.inf
        try:
            return getattr(math, e.fn)(v)
        except ValueError:  # sin/cos of an infinite intermediate
            raise ExprDomainError("function argument out of domain", to_str(e)) from None
    raise TypeError(f"not an Expr node: {e!r}")


def evaluate(e: Expr, x: float, t: float) -> float:
    """IEEE-double evaluation with domain checks (scalar state variable)."""
    return _eval(e, x, t)


def evaluate_vec(e: Expr, x, t: float) -> float:
    """Evaluation with an indexed state vector (factored systems)."""
    return _eval(e, np.asarray(x, dtype=float), t)


# ---------------------------------------------------------------------------
# interval evaluation


def _eval_interval(e: Expr, x, t: Interval) -> Interval:
    # x: Interval (scalar mode) or sequence of Intervals (vector mode)
    if isinstance(e, Const):
        return Interval.point(e.value)
    if isinstance(e, Var):
        if e.name == "t":
            return t
        if e.index is None:
            return x
        return x[e.index]
    if isinstance(e, Neg):
        return _ineg(_eval_interval(e.arg, x, t))
    if isinstance(e, BinOp):
        a = _eval_interval(e.left, x, t)
        b = _eval_interval(e.right, x, t)
        if e.op == "+":
            return _iadd(a, b)
        if e.op == "-":
            return _isub(a, b)
        if e.op == "*":
            return _imul(a, b)
        return _idiv(a, b, to_str(e))
    if isinstance(e, Pow):
        return _ipow(_eval_interval(e.base, x, t), e.exponent, to_str(e))
    if isinstance(e, Call):
        a = _eval_interval(e.arg, x, t)
        if e.fn == "sin":
            return _trig_range(a, 0.0)
        if e.fn == "cos":
            return _trig_range(a, math.pi / 2.0)
        if e.fn == "tanh":
            return _itanh(a)
        if e.fn == "exp":
            return _iexp(a)
        return _ilog(a, to_str(e))
    raise TypeError(f"not an Expr node: {e!r}")


def eval_interval(e: Expr, x: Interval, t: Interval) -> Interval:
    """Certified enclosure of e's range over the box x × t."""
    return _eval_interval(e, x, t)


def eval_interval_vec(e: Expr, boxes, t: Interval) -> Interval:
    """Enclosure with per-component state boxes (factored systems)."""
    return _eval_interval(e, list(boxes), t)


# ---------------------------------------------------------------------------
# compiled fast path (no domain checks; simulator watches for non-finite
# states instead)


def _pycode(e: Expr, vec: bool) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        if e.name == "t":
            return "t"
        if e.index is None:
            return "x"
        return f"x[..., {e.index}]"
    if isinstance(e, Neg):
        return f"(-{_pycode(e.arg, vec)})"
    if isinstance(e, BinOp):
        return f"({_pycode(e.left, vec)} {e.op} {_pycode(e.right, vec)})"
    if isinstance(e, Pow):
        return f"({_pycode(e.base, vec)} ** {e.exponent})"
    if isinstance(e, Call):
        return f"np.{e.fn}({_pycode(e.arg, vec)})"
    raise TypeError(f"not an Expr node: {e!r}")


@lru_cache(maxsize=4096)
def compile_scalar(e: Expr) -> Callable:
    """Compile to f(x, t) accepting scalars or ndarrays for x."""
    return eval(f"lambda x, t: ({_pycode(e, False)})", {"np": np})  # noqa: S307


@lru_cache(maxsize=4096)
def compile_vec(e: Expr) -> Callable:
    """Compile to f(x, t) with x of shape (..., n); indexed variables."""
    return eval(f"lambda x, t: ({_pycode(e, True)})", {"np": np})  # noqa: S307
