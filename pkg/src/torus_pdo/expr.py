"""Mini expression language for symbols, multipliers and phases.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor | factor)*      # juxtaposition multiplies
    factor := ('+' | '-') factor | power
    power  := atom ('^' ['+' | '-'] INT | '^' '(' ['+' | '-'] INT ')')?
    atom   := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')' | '|' expr '|'

Names are ``x1..xn``, ``xi1..xin``, ``xi`` (the frequency vector, only
inside ``|..|`` and ``ang(..)`` unless n = 1, where ``x`` and ``xi`` are
plain scalars), ``t``, ``i`` and ``pi``. Functions are
``exp``, ``cos``, ``sin``, ``sqrt`` and ``ang`` (``ang(xi) = <xi>``). A
name glued to a leading ``i`` such as ``ix1`` reads as ``i*x1``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ExpressionError
from .harmonic import GridFunction
from .lattice import FrequencyBox, LatticeFunction

__all__ = ["Expression", "parse_expression"]

FUNCS = {"exp": np.exp, "cos": np.cos, "sin": np.sin, "sqrt": np.sqrt}
TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
                   r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()|,]))")


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(src: str) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = TOKEN.match(src, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character {src[pos:].lstrip()[0]!r}", len(src) - len(src[pos:].lstrip()))
        kind = m.lastgroup
        start = m.start(kind)
        out.append(_Tok(kind, m.group(kind), start))
        pos = m.end()
    out.append(_Tok("end", "", len(src)))
    return out


class _Parser:
    def __init__(self, src: str, n: int):
        self.src = src
        self.n = n
        self.toks = _tokenize(src)
        self.k = 0
        self.used = set()

    @property
    def tok(self) -> _Tok:
        return self.toks[self.k]

    def take(self, text=None, kind=None) -> _Tok:
        t = self.tok
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = text or kind
            got = t.text or "end of input"
            raise ExpressionError(f"expected {want!r}, found {got!r}", t.pos)
        self.k += 1
        return t

    def parse(self):
        node = self.expr()
        if self.tok.kind != "end":
            raise ExpressionError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self):
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.take().text
            rhs = self.term()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def _starts_factor(self) -> bool:
        t = self.tok
        return t.kind in ("num", "name") or t.text == "("

    def term(self):
        node = self.factor()
        while True:
            if self.tok.text in ("*", "/"):
                op = self.take().text
                rhs = self.factor()
                node = ("mul" if op == "*" else "div", node, rhs)
            elif self._starts_factor():
                node = ("mul", node, self.power())
            else:
                return node

    def factor(self):
        if self.tok.text in ("+", "-"):
            op = self.take().text
            inner = self.factor()
            return inner if op == "+" else ("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text == "^":
            self.take("^")
            paren = self.tok.text == "("
            if paren:
                self.take("(")
            sign = 1
            if self.tok.text in ("+", "-"):
                sign = -1 if self.take().text == "-" else 1
            t = self.tok
            if t.kind != "num" or not t.text.isdigit():
                raise ExpressionError("exponent must be an integer", t.pos)
            self.take()
            if paren:
                self.take(")")
            return ("pow", base, sign * int(t.text))
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.take()
            return ("const", float(t.text))
        if t.text == "(":
            self.take("(")
            node = self.expr()
            self.take(")")
            return node
        if t.text == "|":
            self.take("|")
            node = self._vector_or_expr()
            self.take("|")
            return ("abs", node)
        if t.kind == "name":
            return self.name()
        raise ExpressionError(f"unexpected {t.text or 'end of input'!r}", t.pos)

    def _vector_or_expr(self):
        if self.tok.kind == "name" and self.tok.text == "xi" and self.toks[self.k + 1].text in ("|", ")"):
            self.take()
            self.used.add("xi")
            return ("xivec",)
        return self.expr()

    def name(self):
        t = self.take(kind="name")
        text = t.text
        if text in FUNCS or text == "ang":
            self.take("(")
            arg = self._vector_or_expr()
            self.take(")")
            return ("ang", arg) if text == "ang" else ("call", text, arg)
        node = self._variable(text, t.pos)
        if node is not None:
            return node
        # "ix1" style: a leading i glued to a variable name
        if text.startswith("i") and len(text) > 1:
            rest = self._variable(text[1:], t.pos + 1)
            if rest is not None:
                return ("mul", ("const", 1j), rest)
        raise ExpressionError(f"unknown name {text!r}", t.pos)

    def _variable(self, text, pos):
        if text == "i":
            return ("const", 1j)
        if text == "pi":
            return ("const", np.pi)
        if text == "t":
            self.used.add("t")
            return ("t",)
        if text == "xi" and self.n == 1:
            self.used.add("xi")
            return ("xi", 0)
        if text == "xi":
            raise ExpressionError("the vector xi is only allowed inside |..| or ang(..)", pos)
        if text == "x" and self.n == 1:
            self.used.add("x")
            return ("x", 0)
        m = re.fullmatch(r"(xi|x)([1-9])", text)
        if m:
            j = int(m.group(2))
            if j > self.n:
                raise ExpressionError(f"variable {text} exceeds dimension {self.n}", pos)
            self.used.add(m.group(1))
            return (m.group(1), j - 1)
        return None


def _eval(node, x, xi, t):
    kind = node[0]
    if kind == "const":
        return node[1]
    if kind == "x":
        return x[node[1]]
    if kind == "xi":
        return xi[node[1]]
    if kind == "t":
        return t
    if kind == "xivec":
        return tuple(xi)
    if kind == "neg":
        return -_eval(node[1], x, xi, t)
    if kind in ("add", "sub", "mul", "div"):
        a = _eval(node[1], x, xi, t)
        b = _eval(node[2], x, xi, t)
        if kind == "add":
            return a + b
        if kind == "sub":
            return a - b
        if kind == "mul":
            return a * b
        return a / b
    if kind == "pow":
        base = _eval(node[1], x, xi, t)
        e = node[2]
        if e < 0:
            return 1.0 / np.asarray(base, dtype=complex if np.iscomplexobj(base) else float) ** (-e)
        return base**e
    if kind == "abs":
        v = _eval(node[1], x, xi, t)
        if isinstance(v, tuple):
            return np.sqrt(sum(np.asarray(c, dtype=float) ** 2 for c in v))
        return np.abs(v)
    if kind == "ang":
        v = _eval(node[1], x, xi, t)
        if isinstance(v, tuple):
            return np.sqrt(1.0 + sum(np.asarray(c, dtype=float) ** 2 for c in v))
        return np.sqrt(1.0 + np.abs(v) ** 2)
    if kind == "call":
        return FUNCS[node[1]](_eval(node[2], x, xi, t))
    raise AssertionError(kind)


class Expression:
    """Parsed expression with builders for the package's table types."""

    def __init__(self, source: str, n: int):
        p = _Parser(source, n)
        self.tree = p.parse()
        self.source = source
        self.n = n
        self.uses = frozenset(p.used)

    def __call__(self, x, xi, t: float = 0.0):
        x = tuple(x) if x is not None else (0.0,) * self.n
        xi = tuple(xi) if xi is not None else (0.0,) * self.n
        return _eval(self.tree, x, xi, t)

    def symbol(self, box: FrequencyBox, N: int | None = None, t: float = 0.0, **kw):
        from .symbols import SymbolTable

        return SymbolTable.from_function(lambda x, xi: self(x, xi, t) + 0 * x[0] + 0 * xi[0], box, N, **kw)

    def multiplier(self, box: FrequencyBox | None = None, t: float = 0.0) -> LatticeFunction:
        """Lattice function of xi; the expression must not involve x."""
        if "x" in self.uses:
            raise ExpressionError("a multiplier cannot depend on x", 0)

        def func(k):
            k = np.asarray(k)
            xi = tuple(k[..., j].astype(float) for j in range(self.n))
            return np.asarray(self(None, xi, t) + 0 * xi[0])

        return LatticeFunction(func, box, n=self.n)

    def phase(self, box: FrequencyBox, N: int | None = None, t: float = 0.0):
        from .fso import PhaseTable

        def phi(x, xi):
            v = np.asarray(self(x, xi, t) + 0 * x[0] + 0 * xi[0])
            if np.iscomplexobj(v):
                if np.max(np.abs(v.imag)) > 1e-12:
                    raise ExpressionError("a phase must be real", 0)
                v = v.real
            return v

        return PhaseTable.from_function(phi, box, N)

    def grid_function(self, box: FrequencyBox, N: int | None = None, t: float = 0.0) -> GridFunction:
        if "xi" in self.uses:
            raise ExpressionError("a function of x cannot depend on xi", 0)
        return GridFunction.from_function(lambda x: self(x, None, t) + 0 * x[0], box, N)


def parse_expression(tag: str, n: int = 1) -> Expression:
    return Expression(tag, n)
