"""A tiny arithmetic expression language for user-supplied models.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are ``x1..xd``, ``theta1..thetaq`` and the constant ``pi``; functions
are ``sin cos exp log sqrt abs``. Expressions evaluate element-wise over
numpy arrays and can be differentiated symbolically.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


class ExprSyntaxError(ValueError):
    def __init__(self, msg, pos=None):
        self.pos = pos
        super().__init__(msg if pos is None else f"{msg} at position {pos}")


class ExprEvalError(ArithmeticError):
    """Evaluation left the domain of a sub-expression."""


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


Node = Union[Num, Sym, Neg, Bin, Call]

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(src):
    pos = 0
    out = []
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", pos))
    return out


class _Parser:
    def __init__(self, src, d, q):
        self.toks = _tokenize(src)
        self.i = 0
        self.d, self.q = d, q

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ExprSyntaxError(f"expected {value!r}, found {what}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {text!r}", pos)
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != 1:
                    raise ExprSyntaxError(f"{text}() takes 1 argument, got {len(args)}", pos)
                return Call(text, args[0])
            return Sym(self._resolve(text, pos))
        if text == "(":
            node = self.expr()
            self.take(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(f"unexpected {what}", pos)

    def _resolve(self, name, pos):
        if name == "pi":
            return name
        if name == "x" and self.d == 1:
            return "x1"
        if name == "theta" and self.q == 1:
            return "theta1"
        m = re.fullmatch(r"(x|theta)([1-9][0-9]*)", name)
        if m:
            k = int(m.group(2))
            limit = self.d if m.group(1) == "x" else self.q
            if k <= limit:
                return name
        raise ExprSyntaxError(f"unknown identifier {name!r}", pos)


def parse(src: str, d: int, q: int) -> Node:
    if not src or not src.strip():
        raise ExprSyntaxError("empty expression")
    return _Parser(src, d, q).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _prec(node):
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return 5


def to_string(node: Node) -> str:
    """Print with the minimal parentheses that re-parse to the same tree."""
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Sym):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({to_string(node.arg)})"
    if isinstance(node, Neg):
        s = to_string(node.arg)
        return f"-({s})" if _prec(node.arg) < 3 else f"-{s}"
    p = _PREC[node.op]
    ls, rs = to_string(node.left), to_string(node.right)
    if node.op == "^":
        if _prec(node.left) <= 4:
            ls = f"({ls})"
        if _prec(node.right) < 3:
            rs = f"({rs})"
        return f"{ls}^{rs}"
    if _prec(node.left) < p:
        ls = f"({ls})"
    if _prec(node.right) <= p:
        rs = f"({rs})"
    return f"{ls} {node.op} {rs}"


def symbols(node: Node) -> set[str]:
    if isinstance(node, Sym):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg, Call)):
        return symbols(node.arg)
    return symbols(node.left) | symbols(node.right)


def evaluate(node: Node, env: dict):
    """Evaluate element-wise; ``env`` maps symbol names to scalars or arrays."""
    with np.errstate(all="ignore"):
        out = _eval(node, env)
    if not np.all(np.isfinite(out)):
        raise ExprEvalError(f"non-finite value from {to_string(node)!r}")
    return out


def _fail(node, what):
    raise ExprEvalError(f"{what} in {to_string(node)!r}")


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Sym):
        if node.name == "pi":
            return math.pi
        try:
            return env[node.name]
        except KeyError:
            raise ExprEvalError(f"unbound symbol {node.name!r}") from None
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        v = _eval(node.arg, env)
        fn = node.fn
        if fn == "log":
            if np.any(np.asarray(v) <= 0):
                _fail(node, "log of a non-positive value")
            return np.log(v)
        if fn == "sqrt":
            if np.any(np.asarray(v) < 0):
                _fail(node, "sqrt of a negative value")
            return np.sqrt(v)
        out = getattr(np, fn)(v)
        if fn == "exp" and not np.all(np.isfinite(out)):
            _fail(node, "overflow")
        return out
    lv, rv = _eval(node.left, env), _eval(node.right, env)
    op = node.op
    if op == "+":
        return lv + rv
    if op == "-":
        return lv - rv
    if op == "*":
        return lv * rv
    if op == "/":
        if np.any(np.asarray(rv) == 0):
            _fail(node, "division by zero")
        return lv / rv
    # power
    la, ra = np.asarray(lv), np.asarray(rv)
    if np.any((la < 0) & (ra != np.round(ra))):
        _fail(node, "negative base with non-integer exponent")
    if np.any((la == 0) & (ra < 0)):
        _fail(node, "zero raised to a negative power")
    return np.power(lv, rv)


# ---------------------------------------------------------------- calculus

ZERO, ONE, TWO = Num(0.0), Num(1.0), Num(2.0)


def _num(v):
    if v == 0:
        return ZERO
    return Num(float(v)) if v > 0 else Neg(Num(float(-v)))


def _const(node):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg) and isinstance(node.arg, Num):
        return -node.arg.value
    return None


def _add(a, b):
    ca, cb = _const(a), _const(b)
    if ca == 0:
        return b
    if cb == 0:
        return a
    if ca is not None and cb is not None:
        return _num(ca + cb)
    if isinstance(b, Neg):
        return _sub(a, b.arg)
    return Bin("+", a, b)


def _sub(a, b):
    ca, cb = _const(a), _const(b)
    if cb == 0:
        return a
    if ca == 0:
        return _neg(b)
    if ca is not None and cb is not None:
        return _num(ca - cb)
    if isinstance(b, Neg):
        return _add(a, b.arg)
    return Bin("-", a, b)


def _neg(a):
    c = _const(a)
    if c is not None:
        return _num(-c)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a, b):
    ca, cb = _const(a), _const(b)
    if ca == 0 or cb == 0:
        return ZERO
    if ca == 1:
        return b
    if cb == 1:
        return a
    if ca == -1:
        return _neg(b)
    if cb == -1:
        return _neg(a)
    if ca is not None and cb is not None:
        return _num(ca * cb)
    if isinstance(a, Neg):
        return _neg(_mul(a.arg, b))
    if isinstance(b, Neg):
        return _neg(_mul(a, b.arg))
    return Bin("*", a, b)


def _div(a, b):
    ca, cb = _const(a), _const(b)
    if ca == 0:
        return ZERO
    if cb == 1:
        return a
    if ca is not None and cb is not None and cb != 0:
        return _num(ca / cb)
    if isinstance(a, Neg):
        return _neg(_div(a.arg, b))
    return Bin("/", a, b)


def _pow(a, b):
    cb = _const(b)
    if cb == 0:
        return ONE
    if cb == 1:
        return a
    return Bin("^", a, b)


def derivative(node: Node, var: str) -> Node:
    """Symbolic partial derivative with light algebraic simplification."""
    if var not in symbols(node):
        return ZERO
    if isinstance(node, Sym):
        return ONE
    if isinstance(node, Neg):
        return _neg(derivative(node.arg, var))
    if isinstance(node, Call):
        u = node.arg
        du = derivative(u, var)
        fn = node.fn
        if fn == "sin":
            outer = Call("cos", u)
        elif fn == "cos":
            outer = _neg(Call("sin", u))
        elif fn == "exp":
            outer = node
        elif fn == "log":
            return _div(du, u)
        elif fn == "sqrt":
            return _div(du, _mul(TWO, node))
        else:  # abs
            outer = _div(u, node)
        return _mul(outer, du)
    a, b = node.left, node.right
    da, db = derivative(a, var), derivative(b, var)
    op = node.op
    if op == "+":
        return _add(da, db)
    if op == "-":
        return _sub(da, db)
    if op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if op == "/":
        return _sub(_div(da, b), _div(_mul(a, db), _pow(b, TWO)))
    # a ^ b
    if var not in symbols(b):
        cb = _const(b)
        lower = _num(cb - 1) if cb is not None else _sub(b, ONE)
        return _mul(_mul(b, _pow(a, lower)), da)
    if var not in symbols(a):
        return _mul(_mul(node, Call("log", a)), db)
    return _mul(node, _add(_mul(db, Call("log", a)), _div(_mul(b, da), a)))
