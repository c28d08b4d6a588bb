"""Scalar expressions: parsing, evaluation, symbolic differentiation.

Grammar (lowest to highest binding)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | name | func '(' expr ')' | '(' expr ')'

``**`` is accepted as a synonym for ``^``.  A minus sign directly in front of
a numeric literal that is not itself raised to a power is folded into a
negative constant, so ``-2`` is a constant while ``-2^2`` is ``-(2^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownVariable

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt")
UNARY_OPS = FUNCTIONS + ("neg",)
BINARY_OPS = ("add", "sub", "mul", "div", "pow")

_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_ATOM_PREC = 5


class Expr:
    """Base class of the immutable expression tree."""

    __slots__ = ()

    def __str__(self):
        return to_string(self)

    def variables(self) -> set[str]:
        out: set[str] = set()
        _collect_vars(self, out)
        return out


@dataclass(frozen=True, eq=True, slots=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True, slots=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True, eq=True, slots=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def _collect_vars(e, out):
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Unary):
        _collect_vars(e.arg, out)
    elif isinstance(e, Binary):
        _collect_vars(e.left, out)
        _collect_vars(e.right, out)


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r")"
)


@dataclass(frozen=True, slots=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    pos: int


def _tokenize(text):
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.lastgroup is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos,
                                  ("number", "name", "operator"))
        kind = m.lastgroup
        start = m.start(kind)
        tok = m.group(kind)
        if tok == "**":
            tok = "^"
        toks.append(_Tok(kind, tok, start))
        pos = m.end()
    toks.append(_Tok("end", "", n))
    return toks


class _Parser:
    def __init__(self, text, names):
        self.toks = _tokenize(text)
        self.i = 0
        self.names = names

    @property
    def tok(self):
        return self.toks[self.i]

    def _peek(self, k=1):
        j = min(self.i + k, len(self.toks) - 1)
        return self.toks[j]

    def _advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def _expect(self, text):
        t = self.tok
        if t.kind != "op" or t.text != text:
            raise ExprSyntaxError(f"unexpected {_describe(t)}", t.pos, (repr(text),))
        self._advance()

    def parse(self):
        e = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {_describe(self.tok)}", self.tok.pos,
                                  ("operator", "end of input"))
        return e

    def expr(self):
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = "add" if self._advance().text == "+" else "sub"
            left = Binary(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = "mul" if self._advance().text == "*" else "div"
            left = Binary(op, left, self.unary())
        return left

    def unary(self):
        t = self.tok
        if t.kind == "op" and t.text == "-":
            nxt = self._peek()
            after = self._peek(2)
            if nxt.kind == "num" and not (after.kind == "op" and after.text == "^"):
                self._advance()
                self._advance()
                return Const(-float(nxt.text))
            self._advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self._advance()
            return Binary("pow", base, self.unary())
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self._advance()
            return Const(float(t.text))
        if t.kind == "name":
            self._advance()
            if t.text in FUNCTIONS:
                self._expect("(")
                arg = self.expr()
                self._expect(")")
                return Unary(t.text, arg)
            if self.names is not None and t.text not in self.names:
                raise UnknownVariable(t.text, t.pos)
            return Var(t.text)
        if t.kind == "op" and t.text == "(":
            self._advance()
            e = self.expr()
            self._expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {_describe(t)}", t.pos,
                              ("number", "name", "function", "'('", "'-'"))


def _describe(tok):
    return "end of input" if tok.kind == "end" else f"token {tok.text!r}"


def parse(text: str, names: Iterable[str] | None = None) -> Expr:
    """Parse ``text`` into an expression tree.

    Parameters
    ----------
    text : str
        Expression source.
    names : iterable of str, optional
        Legal variable names.  ``None`` accepts any identifier.

    Raises
    ------
    ExprSyntaxError
        On malformed input; carries the 0-based offset.
    UnknownVariable
        If a name outside ``names`` is referenced.
    """
    if not isinstance(text, str) or not text.strip():
        raise ExprSyntaxError("empty expression", 0, ("expression",))
    legal = None if names is None else frozenset(names)
    if legal is not None:
        clash = legal.intersection(FUNCTIONS)
        if clash:
            raise ValueError(f"variable names shadow functions: {sorted(clash)}")
    return _Parser(text, legal).parse()


# ---------------------------------------------------------------------------
# printing

def _fmt_const(v):
    s = repr(float(v))
    if s in ("inf", "-inf", "nan"):
        raise ValueError(f"non-finite constant {s}")
    return f"({s})" if v < 0 or s.startswith("-") else s


def _prec(e):
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    return _ATOM_PREC


def to_string(e: Expr) -> str:
    """Render ``e`` with the minimum parentheses needed to re-parse it."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op != "neg":
            return f"{e.op}({to_string(e.arg)})"
        inner = to_string(e.arg)
        if isinstance(e.arg, Const) and e.arg.value >= 0 and not inner.startswith("("):
            return f"-({inner})"
        if _prec(e.arg) < _PREC["neg"]:
            return f"-({inner})"
        return f"-{inner}"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        ls, rs = to_string(e.left), to_string(e.right)
        if e.op == "pow":
            if _prec(e.left) <= p:
                ls = f"({ls})"
            if _prec(e.right) < _PREC["neg"]:
                rs = f"({rs})"
            return f"{ls}^{rs}"
        if _prec(e.left) < p:
            ls = f"({ls})"
        if _prec(e.right) <= p:
            rs = f"({rs})"
        return f"{ls} {_SYMBOL[e.op]} {rs}"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# evaluation

def _pow(a, b):
    if a == 0.0 and b < 0:
        raise DomainError("zero raised to a negative power")
    if a < 0 and not float(b).is_integer():
        raise DomainError("negative base with non-integer exponent")
    return math.pow(a, b)


def _log(a):
    if a <= 0:
        raise DomainError(f"log of non-positive value {a!r}")
    return math.log(a)


def _sqrt(a):
    if a < 0:
        raise DomainError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


def _div(a, b):
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


_UNARY_FN = {
    "neg": lambda a: -a,
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": _log,
    "sqrt": _sqrt,
}
_BINARY_FN = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": _div,
    "pow": _pow,
}


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """IEEE double evaluation of ``e``; raises :class:`DomainError` off-domain."""
    try:
        return _eval(e, env)
    except OverflowError as exc:
        raise DomainError(f"overflow: {exc}") from exc


def _eval(e, env):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise UnknownVariable(e.name) from None
    if isinstance(e, Unary):
        return _UNARY_FN[e.op](_eval(e.arg, env))
    return _BINARY_FN[e.op](_eval(e.left, env), _eval(e.right, env))


# ---------------------------------------------------------------------------
# simplifying constructors (fold 0/1 factors and constant subtrees)

def _is(e, v):
    return isinstance(e, Const) and e.value == v


def add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("add", a, b)


def sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Binary("sub", a, b)


def mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Binary("mul", a, b)


def div(a, b):
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    return Binary("div", a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def power(a, b):
    if _is(b, 1.0):
        return a
    if _is(b, 0.0):
        return ONE
    return Binary("pow", a, b)


def diff(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Unary):
        u = e.arg
        du = diff(u, var)
        if _is(du, 0.0):
            return ZERO
        op = e.op
        if op == "neg":
            return neg(du)
        if op == "sin":
            return mul(Unary("cos", u), du)
        if op == "cos":
            return mul(neg(Unary("sin", u)), du)
        if op == "tan":
            return div(du, power(Unary("cos", u), Const(2.0)))
        if op == "exp":
            return mul(e, du)
        if op == "log":
            return div(du, u)
        if op == "sqrt":
            return div(du, mul(Const(2.0), e))
        raise ValueError(f"unknown unary op {op!r}")
    a, b = e.left, e.right
    da, db = diff(a, var), diff(b, var)
    op = e.op
    if op == "add":
        return add(da, db)
    if op == "sub":
        return sub(da, db)
    if op == "mul":
        return add(mul(da, b), mul(a, db))
    if op == "div":
        if _is(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, Const(2.0)))
    if op == "pow":
        if _is(db, 0.0):
            if isinstance(b, Const):
                return mul(mul(b, power(a, Const(b.value - 1.0))), da)
            return mul(mul(b, power(a, sub(b, ONE))), da)
        if _is(da, 0.0):
            return mul(mul(e, Unary("log", a)), db)
        return mul(e, add(mul(db, Unary("log", a)), div(mul(b, da), a)))
    raise ValueError(f"unknown binary op {op!r}")


# ---------------------------------------------------------------------------
# vectorised code generation

_NP_FN = {"sin": "np.sin", "cos": "np.cos", "tan": "np.tan", "exp": "np.exp",
          "log": "np.log", "sqrt": "np.sqrt"}


def to_numpy_source(e: Expr, rename: Mapping[str, str]) -> str:
    """Python source evaluating ``e`` elementwise on numpy arrays.

    ``rename`` maps variable names to the local identifiers used in the
    generated function body.
    """
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return rename[e.name]
    if isinstance(e, Unary):
        inner = to_numpy_source(e.arg, rename)
        if e.op == "neg":
            return f"(-{inner})"
        return f"{_NP_FN[e.op]}({inner})"
    ls = to_numpy_source(e.left, rename)
    rs = to_numpy_source(e.right, rename)
    if e.op == "pow":
        return f"np.power({ls}, {rs})"
    return f"({ls} {_SYMBOL[e.op]} {rs})"


def compile_vectorized(outputs, in_groups):
    """Build a function evaluating many expressions over batches.

    Parameters
    ----------
    outputs : list of list of Expr
        One group per returned array; group ``g`` becomes an array of shape
        ``(B, len(outputs[g]))``.
    in_groups : list of list of str
        Variable names bound to the columns of each positional argument.

    Returns
    -------
    callable
        ``fn(*arrays) -> tuple of arrays``, each input of shape ``(B, k)``.
    """
    rename = {}
    lines = [f"def _generated({', '.join(f'_a{g}' for g in range(len(in_groups)))}):",
             "    _B = _a0.shape[0]"]
    for g, names in enumerate(in_groups):
        for j, name in enumerate(names):
            local = f"v_{name}"
            rename[name] = local
            lines.append(f"    {local} = _a{g}[:, {j}]")
    ret = []
    for g, group in enumerate(outputs):
        lines.append(f"    _o{g} = np.empty((_B, {len(group)}))")
        for j, ex in enumerate(group):
            lines.append(f"    _o{g}[:, {j}] = {to_numpy_source(ex, rename)}")
        ret.append(f"_o{g}")
    lines.append(f"    return ({', '.join(ret)},)")
    src = "\n".join(lines)
    scope = {"np": np}
    exec(compile(src, "<safemargin-generated>", "exec"), scope)
    fn = scope["_generated"]
    fn.source = src
    return fn
