"""Small arithmetic expression language for time-dependent coefficients.

Kernel components, noise coefficients and forcing functions are written as
expressions over the time variables ``t`` and ``s`` so they can live in
config files.  Grammar (EBNF):

    expr    = term , { ("+" | "-") , term } ;
    term    = factor , { ("*" | "/") , factor } ;
    factor  = "-" , factor | power ;
    power   = atom , [ "^" , factor ] ;
    atom    = NUMBER | VARIABLE | FUNCTION , "(" , expr , { "," , expr } , ")"
            | "(" , expr , ")" ;

    NUMBER   = decimal or scientific literal: 2, 0.5, .25, 1e-3, 2.5E+2 ;
    VARIABLE = "t" | "s" ;
    FUNCTION = exp | log | loglog | sqrt | sin | cos | abs   (unary)
             | pow | min | max                               (binary) ;

``^`` is right-associative and binds tighter than unary minus, so ``-t^2``
parses as ``-(t^2)`` while ``t^-2`` parses as ``t^(-2)``.  ``loglog(x)``
is ``log(log(x))``.

Evaluation is strict IEEE double precision: a domain violation (log of a
non-positive number, sqrt of a negative, division by zero, fractional
power of a negative base, overflow to infinity) raises ``DomainError``
rather than letting NaN/inf propagate into downstream integrals.
Evaluators accept numpy arrays for ``t``/``s`` and broadcast elementwise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "EvalContext",
    "ExprError",
    "ParseError",
    "UnknownFunctionError",
    "UnknownVariableError",
    "ArityError",
    "EvalError",
    "UnboundVariableError",
    "DomainError",
    "parse",
    "evaluate",
    "eval_in_context",
    "pretty",
    "variables",
]

UNARY_FUNCTIONS = ("exp", "log", "loglog", "sqrt", "sin", "cos", "abs")
BINARY_FUNCTIONS = ("pow", "min", "max")
FUNCTIONS = UNARY_FUNCTIONS + BINARY_FUNCTIONS
VARIABLES = ("t", "s")


class ExprError(Exception):
    """Base class for expression language errors."""


class ParseError(ExprError):
    """Syntax error with byte offset and an expected-token hint."""

    def __init__(self, message: str, offset: int, expected: str = ""):
        self.offset = offset
        self.expected = expected
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at offset {offset}{hint}")


class UnknownFunctionError(ParseError):
    pass


class UnknownVariableError(ParseError):
    pass


class ArityError(ParseError):
    pass


class EvalError(ExprError):
    """Base class for evaluation-time errors."""


class UnboundVariableError(EvalError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable '{name}' is not bound in the evaluation context")


class DomainError(EvalError):
    """A function or operator was applied outside its real domain."""

    def __init__(self, function: str, argument: float, detail: str = ""):
        self.function = function
        self.argument = argument
        msg = f"domain error in '{function}' at argument {argument!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Num, Var, Neg, BinOp, Call]


@dataclass(frozen=True)
class EvalContext:
    """Variable bindings for a single-point evaluation; ``s`` is optional."""

    t: float
    s: float | None = None


# --- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
  | (?P<ws>\s+)
  | (?P<bad>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | ident | op | eof
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    for m in _TOKEN_RE.finditer(source):
        kind = m.lastgroup
        if kind == "ws":
            continue
        if kind == "bad":
            raise ParseError(f"unexpected character {m.group()!r}", m.start())
        tokens.append(_Token(kind, m.group(), m.start()))
    tokens.append(_Token("eof", "", len(source)))
    return tokens


# --- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.cur
        self.pos += 1
        return tok

    def expect_op(self, text: str) -> None:
        if self.cur.kind == "op" and self.cur.text == text:
            self.advance()
            return
        raise ParseError(
            f"unexpected token {self.cur.text!r}" if self.cur.kind != "eof" else "unexpected end of input",
            self.cur.offset,
            expected=repr(text),
        )

    def parse(self) -> Expr:
        e = self.expr()
        if self.cur.kind != "eof":
            raise ParseError(f"unexpected token {self.cur.text!r}", self.cur.offset, expected="end of input")
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self.advance().text
            left = BinOp(op, left, self.factor())
        return left

    def factor(self) -> Expr:
        if self.cur.kind == "op" and self.cur.text == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.cur.kind == "op" and self.cur.text == "^":
            self.advance()
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.cur
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if self.cur.kind == "op" and self.cur.text == "(":
                return self.call(tok)
            if tok.text in VARIABLES:
                return Var(tok.text)
            raise UnknownVariableError(
                f"unknown variable {tok.text!r}", tok.offset, expected="'t' or 's'"
            )
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(
            f"unexpected token {tok.text!r}" if tok.kind != "eof" else "unexpected end of input",
            tok.offset,
            expected="number, variable, function call or '('",
        )

    def call(self, name: _Token) -> Expr:
        if name.text not in FUNCTIONS:
            raise UnknownFunctionError(
                f"unknown function {name.text!r}", name.offset, expected=", ".join(FUNCTIONS)
            )
        self.expect_op("(")
        args = [self.expr()]
        while self.cur.kind == "op" and self.cur.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect_op(")")
        want = 2 if name.text in BINARY_FUNCTIONS else 1
        if len(args) != want:
            raise ArityError(
                f"function {name.text!r} takes {want} argument(s), got {len(args)}",
                name.offset,
            )
        return Call(name.text, tuple(args))


def parse(source: str) -> Expr:
    """Parse ``source`` into an immutable AST.

    Raises ParseError (with byte offset), UnknownFunctionError,
    UnknownVariableError or ArityError on malformed input.
    """
    if not source or not source.strip():
        raise ParseError("empty expression", 0, expected="an expression")
    return _Parser(source).parse()


# --- evaluation ------------------------------------------------------------


def _first_bad(arg) -> float:
    """Representative offending argument value for an error message."""
    a = np.ravel(np.asarray(arg, dtype=float))
    return float(a[0]) if a.size else float("nan")


def _require_finite(func: str, arg, result):
    if not np.all(np.isfinite(result)):
        raise DomainError(func, _first_bad(arg), "result is not finite")
    return result


def _checked_log(x):
    if np.any(np.asarray(x) <= 0.0):
        a = np.asarray(x, dtype=float)
        raise DomainError("log", float(a.min()), "log requires a positive argument")
    return np.log(x)


def _checked_sqrt(x):
    if np.any(np.asarray(x) < 0.0):
        a = np.asarray(x, dtype=float)
        raise DomainError("sqrt", float(a.min()), "sqrt requires a non-negative argument")
    return np.sqrt(x)


def _checked_div(x, y):
    if np.any(np.asarray(y) == 0.0):
        raise DomainError("/", 0.0, "division by zero")
    with np.errstate(all="ignore"):
        return _require_finite("/", x, x / y)


def _checked_pow(x, y):
    with np.errstate(all="ignore"):
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            result = np.power(np.asarray(x, dtype=float), y)
        else:
            try:
                result = float(x) ** float(y)
            except (OverflowError, ZeroDivisionError) as exc:
                raise DomainError("pow", float(x), str(exc)) from None
            if isinstance(result, complex):
                raise DomainError("pow", float(x), "fractional power of a negative base")
    if not np.all(np.isfinite(result)):
        raise DomainError("pow", _first_bad(x), "power is undefined or overflows here")
    return result


def _eval(e: Expr, t, s):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        v = t if e.name == "t" else s
        if v is None:
            raise UnboundVariableError(e.name)
        return v
    if isinstance(e, Neg):
        return -_eval(e.operand, t, s)
    if isinstance(e, BinOp):
        a = _eval(e.left, t, s)
        if e.op == "+":
            return _require_finite("+", a, a + _eval(e.right, t, s))
        if e.op == "-":
            return _require_finite("-", a, a - _eval(e.right, t, s))
        if e.op == "*":
            return _require_finite("*", a, a * _eval(e.right, t, s))
        if e.op == "/":
            return _checked_div(a, _eval(e.right, t, s))
        if e.op == "^":
            return _checked_pow(a, _eval(e.right, t, s))
        raise AssertionError(f"unreachable operator {e.op!r}")
    if isinstance(e, Call):
        args = [_eval(a, t, s) for a in e.args]
        f = e.func
        if f == "exp":
            with np.errstate(over="ignore"):
                return _require_finite("exp", args[0], np.exp(args[0]))
        if f == "log":
            return _checked_log(args[0])
        if f == "loglog":
            return _checked_log(_checked_log(args[0]))
        if f == "sqrt":
            return _checked_sqrt(args[0])
        if f == "sin":
            return np.sin(args[0])
        if f == "cos":
            return np.cos(args[0])
        if f == "abs":
            return np.abs(args[0])
        if f == "pow":
            return _checked_pow(args[0], args[1])
        if f == "min":
            return np.minimum(args[0], args[1])
        if f == "max":
            return np.maximum(args[0], args[1])
        raise AssertionError(f"unreachable function {f!r}")
    raise TypeError(f"not an Expr node: {e!r}")


def evaluate(e: Expr, t=None, s=None):
    """Evaluate ``e`` with the given bindings; scalar in, scalar out.

    ``t``/``s`` may be floats or numpy arrays (broadcast elementwise).
    Deterministic: identical inputs produce bit-identical outputs.
    """
    result = _eval(e, t, s)
    if isinstance(result, np.ndarray):
        return result if result.ndim else float(result)
    return float(result)


def eval_in_context(e: Expr, ctx: EvalContext) -> float:
    """Single-point evaluation against an EvalContext."""
    return evaluate(e, t=ctx.t, s=ctx.s)


def variables(e: Expr) -> frozenset[str]:
    """Set of variable names referenced anywhere in ``e``."""
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Neg):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Call):
        out: frozenset[str] = frozenset()
        for a in e.args:
            out |= variables(a)
        return out
    return frozenset()


def pretty(e: Expr) -> str:
    """Fully parenthesized rendering; re-parses to a structurally equal AST."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{pretty(e.operand)})"
    if isinstance(e, BinOp):
        return f"({pretty(e.left)} {e.op} {pretty(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(pretty(a) for a in e.args)})"
    raise TypeError(f"not an Expr node: {e!r}")
