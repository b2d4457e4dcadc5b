"""Scalar expression language with exact first/second directional derivatives.

Expressions are parsed once into immutable ASTs and evaluated with either
plain floats or `HyperDual` numbers.  A hyper-dual number carries a value,
two first-order directional derivatives and the mixed second derivative, so
one evaluation of an expression with seeded bindings yields d/ds1, d/ds2 and
d2/ds1 ds2 exactly (to rounding).  HyperDual arithmetic is generic over its
scalar parts, so hyper-duals nest: seeding on top of already-dual values
gives third/fourth order information when callers need derivatives of
derived quantities (e.g. brackets of fields whose coefficients are
themselves AD results).

Grammar: numbers, identifiers, + - * / ^, unary minus, function calls
sin cos tan exp log sqrt.  Precedence ^ > unary- > * / > + -, with ^
right-associative and everything else left-associative.  Angles in radians,
no implicit multiplication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    DomainError,
    ExpressionSyntaxError,
    UndefinedVariable,
    UnknownFunction,
)

__all__ = [
    "Expr",
    "Var",
    "Num",
    "Neg",
    "Bin",
    "Call",
    "HyperDual",
    "parse",
    "eval_expr",
    "eval_hd",
    "seed",
    "real_part",
    "hd_sin",
    "hd_cos",
    "hd_tan",
    "hd_exp",
    "hd_log",
    "hd_sqrt",
    "expr_num",
    "expr_add",
    "expr_sub",
    "expr_mul",
    "expr_neg",
    "compile_expr",
    "expr_subst",
]


# ---------------------------------------------------------------------------
# Hyper-dual numbers
# ---------------------------------------------------------------------------


class HyperDual:
    """Second-order forward-mode number: value + d1*e1 + d2*e2 + d12*e1*e2.

    e1^2 = e2^2 = 0.  Parts may themselves be HyperDuals (nesting); all
    arithmetic only assumes the parts form a commutative ring.
    """

    __slots__ = ("value", "d1", "d2", "d12")

    def __init__(self, value, d1=0.0, d2=0.0, d12=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2
        self.d12 = d12

    def __repr__(self):
        return f"HyperDual({self.value!r}, {self.d1!r}, {self.d2!r}, {self.d12!r})"

    def __add__(self, o):
        if isinstance(o, HyperDual):
            return HyperDual(self.value + o.value, self.d1 + o.d1,
                             self.d2 + o.d2, self.d12 + o.d12)
        return HyperDual(self.value + o, self.d1, self.d2, self.d12)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, HyperDual):
            return HyperDual(self.value - o.value, self.d1 - o.d1,
                             self.d2 - o.d2, self.d12 - o.d12)
        return HyperDual(self.value - o, self.d1, self.d2, self.d12)

    def __rsub__(self, o):
        return HyperDual(o - self.value, -self.d1, -self.d2, -self.d12)

    def __mul__(self, o):
        if isinstance(o, HyperDual):
            return HyperDual(
                self.value * o.value,
                self.d1 * o.value + self.value * o.d1,
                self.d2 * o.value + self.value * o.d2,
                self.d12 * o.value + self.d1 * o.d2 + self.d2 * o.d1
                + self.value * o.d12,
            )
        return HyperDual(self.value * o, self.d1 * o, self.d2 * o, self.d12 * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if not isinstance(o, HyperDual):
            return HyperDual(self.value / o, self.d1 / o, self.d2 / o,
                             self.d12 / o)
        v = self.value / o.value
        d1 = (self.d1 - v * o.d1) / o.value
        d2 = (self.d2 - v * o.d2) / o.value
        d12 = (self.d12 - d1 * o.d2 - d2 * o.d1 - v * o.d12) / o.value
        return HyperDual(v, d1, d2, d12)

    def __rtruediv__(self, o):
        return HyperDual(o) / self

    def __neg__(self):
        return HyperDual(-self.value, -self.d1, -self.d2, -self.d12)

    def __pos__(self):
        return self

    def __pow__(self, p):
        if isinstance(p, HyperDual):
            return hd_exp(p * hd_log(self))
        if float(p) == int(p) and abs(p) <= 128:
            n = int(p)
            if n == 0:
                return HyperDual(1.0)
            out = self
            for _ in range(abs(n) - 1):
                out = out * self
            return out if n > 0 else 1.0 / out
        return hd_exp(hd_log(self) * p)

    def __rpow__(self, base):
        return hd_exp(self * hd_log(base))


def real_part(x):
    """Innermost float of a possibly nested HyperDual."""
    while isinstance(x, HyperDual):
        x = x.value
    return x


def _chain(x, f, f1, f2):
    # f, f1, f2: the function and its first two derivatives, applied to the
    # value part (recursively hyper-dual aware).
    v, fv1 = f(x.value), f1(x.value)
    return HyperDual(
        v,
        fv1 * x.d1,
        fv1 * x.d2,
        f2(x.value) * (x.d1 * x.d2) + fv1 * x.d12,
    )


def hd_sin(x):
    if isinstance(x, HyperDual):
        return _chain(x, hd_sin, hd_cos, lambda v: -hd_sin(v))
    return math.sin(x)


def hd_cos(x):
    if isinstance(x, HyperDual):
        return _chain(x, hd_cos, lambda v: -hd_sin(v), lambda v: -hd_cos(v))
    return math.cos(x)


def hd_tan(x):
    if isinstance(x, HyperDual):
        t = hd_tan(x.value)
        return _chain(x, hd_tan,
                      lambda v: 1.0 + hd_tan(v) * hd_tan(v),
                      lambda v: 2.0 * t * (1.0 + t * t))
    return math.tan(x)


def hd_exp(x):
    if isinstance(x, HyperDual):
        return _chain(x, hd_exp, hd_exp, hd_exp)
    return math.exp(x)


def hd_log(x):
    if isinstance(x, HyperDual):
        return _chain(x, hd_log, lambda v: 1.0 / v, lambda v: -1.0 / (v * v))
    return math.log(x)


def hd_sqrt(x):
    if isinstance(x, HyperDual):
        s = hd_sqrt(x.value)
        return _chain(x, hd_sqrt, lambda v: 0.5 / s,
                      lambda v: -0.25 / (s * v))
    return math.sqrt(x)


def seed(values, dir1=None, dir2=None):
    """Wrap a vector of scalars into HyperDuals with the given seed directions."""
    n = len(values)
    d1 = dir1 if dir1 is not None else [0.0] * n
    d2 = dir2 if dir2 is not None else [0.0] * n
    return [HyperDual(values[i], d1[i], d2[i], 0.0) for i in range(n)]


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class Expr:
    """Immutable expression node."""

    __slots__ = ()

    def __str__(self):
        return _render(self, 0)

    def free_vars(self):
        out = set()
        _collect_vars(self, out)
        return out


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Bin(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    fn: str
    arg: Expr


_FUNCTIONS = {
    "sin": hd_sin,
    "cos": hd_cos,
    "tan": hd_tan,
    "exp": hd_exp,
    "log": hd_log,
    "sqrt": hd_sqrt,
}


def _collect_vars(e, out):
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Neg):
        _collect_vars(e.arg, out)
    elif isinstance(e, Bin):
        _collect_vars(e.left, out)
        _collect_vars(e.right, out)
    elif isinstance(e, Call):
        _collect_vars(e.arg, out)


# precedence levels for printing/parsing: + - (10), * / (20), unary - (25), ^ (30)
_BIN_PREC = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_PREC = 25


def _render(e, parent_prec, right_of=None):
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Num):
        v = e.value
        if v == int(v) and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    if isinstance(e, Neg):
        s = "-" + _render(e.arg, _UNARY_PREC)
        return f"({s})" if parent_prec > _UNARY_PREC else s
    if isinstance(e, Call):
        return f"{e.fn}({_render(e.arg, 0)})"
    prec = _BIN_PREC[e.op]
    if e.op == "^":
        # right-associative: parenthesize a left child of equal precedence
        ls = _render(e.left, prec + 1)
        rs = _render(e.right, prec)
    else:
        ls = _render(e.left, prec)
        rs = _render(e.right, prec + 1)
    s = f"{ls} {e.op} {rs}" if e.op in "+-" else f"{ls}{e.op}{rs}"
    return f"({s})" if parent_prec > prec else s


# ---------------------------------------------------------------------------
# Construction helpers (used when fields are assembled programmatically).
# Only literal 0/1 algebra is folded so the trees stay small.
# ---------------------------------------------------------------------------


def expr_num(v):
    return Num(float(v))


def _is_num(e, v):
    return isinstance(e, Num) and e.value == v


def expr_add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Bin("+", a, b)


def expr_sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return expr_neg(b)
    return Bin("-", a, b)


def expr_mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return Bin("*", a, b)


def expr_neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# ---------------------------------------------------------------------------
# Tokenizer / Pratt parser
# ---------------------------------------------------------------------------

_OPS = set("+-*/^()")


def _tokenize(src):
    """Yield (kind, text, offset) triples; kind in {num, ident, op, end}."""
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and src[i + 1].isdigit()):
            j = i
            while j < n and src[j].isdigit():
                j += 1
            if j < n and src[j] == ".":
                j += 1
                while j < n and src[j].isdigit():
                    j += 1
            if j < n and src[j] in "eE":
                m = j + 1
                if m < n and src[m] in "+-":
                    m += 1
                if m < n and src[m].isdigit():
                    j = m
                    while j < n and src[j].isdigit():
                        j += 1
            yield ("num", src[i:j], i)
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            yield ("ident", src[i:j], i)
            i = j
        elif c in _OPS:
            yield ("op", c, i)
            i += 1
        else:
            raise ExpressionSyntaxError(f"unexpected character '{c}'", i)
    yield ("end", "", n)


class _Parser:
    def __init__(self, src):
        self.src = src
        self.tokens = list(_tokenize(src))
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExpressionSyntaxError(f"expected '{op}'", off)
        return self.advance()

    def parse_expr(self, min_prec=0):
        left = self.parse_prefix()
        while True:
            kind, text, _ = self.peek()
            if kind != "op" or text not in _BIN_PREC:
                break
            prec = _BIN_PREC[text]
            if prec < min_prec:
                break
            self.advance()
            # right-assoc for ^, left-assoc otherwise
            right = self.parse_expr(prec if text == "^" else prec + 1)
            left = Bin(text, left, right)
        return left

    def parse_prefix(self):
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "ident":
            nkind, ntext, _ = self.peek()
            if nkind == "op" and ntext == "(":
                if text not in _FUNCTIONS:
                    raise UnknownFunction(text, off)
                self.advance()
                arg = self.parse_expr(0)
                self.expect_op(")")
                return Call(text, arg)
            return Var(text)
        if kind == "op" and text == "-":
            return Neg(self.parse_expr(_UNARY_PREC))
        if kind == "op" and text == "(":
            inner = self.parse_expr(0)
            self.expect_op(")")
            return inner
        raise ExpressionSyntaxError(
            f"unexpected {'end of input' if kind == 'end' else text!r}", off)


def parse(source):
    """Parse expression text into an Expr tree."""
    if not source or not source.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    p = _Parser(source)
    tree = p.parse_expr(0)
    kind, text, off = p.peek()
    if kind != "end":
        raise ExpressionSyntaxError(f"trailing input {text!r}", off)
    return tree


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def eval_expr(expr, bindings):
    """Evaluate over floats or HyperDuals, whatever the bindings hold."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return bindings[expr.name]
        except KeyError:
            raise UndefinedVariable(expr.name) from None
    if isinstance(expr, Neg):
        return -eval_expr(expr.arg, bindings)
    if isinstance(expr, Bin):
        a = eval_expr(expr.left, bindings)
        b = eval_expr(expr.right, bindings)
        op = expr.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if real_part(b) == 0.0:
                raise DomainError("division by zero", expr)
            return a / b
        # power
        if not isinstance(b, HyperDual):
            if float(b) != int(b) and real_part(a) <= 0.0:
                raise DomainError("fractional power of non-positive base", expr)
            if real_part(a) == 0.0 and b < 0:
                raise DomainError("division by zero", expr)
            return a ** b
        # genuinely varying exponent: a^b = exp(b log a)
        if real_part(a) <= 0.0:
            raise DomainError("power of non-positive base", expr)
        return a ** b
    if isinstance(expr, Call):
        x = eval_expr(expr.arg, bindings)
        v = real_part(x)
        if expr.fn == "log" and v <= 0.0:
            raise DomainError("log of non-positive argument", expr)
        if expr.fn == "sqrt" and v < 0.0:
            raise DomainError("sqrt of negative argument", expr)
        if expr.fn == "tan" and math.cos(v) == 0.0:
            raise DomainError("tan at odd multiple of pi/2", expr)
        return _FUNCTIONS[expr.fn](x)
    raise TypeError(f"not an Expr: {expr!r}")


def eval_hd(expr, bindings):
    """Evaluate with HyperDual bindings; returns a HyperDual.

    Plain-float bindings are promoted, so the result always carries the
    (possibly zero) derivative slots.
    """
    out = eval_expr(expr, bindings)
    if not isinstance(out, HyperDual):
        out = HyperDual(out)
    return out


# ---------------------------------------------------------------------------
# Compilation to closures (same semantics as eval_expr, less dispatch) and
# constant substitution.  Compiled evaluators are what the integration hot
# loops call; the tree form stays the canonical representation.
# ---------------------------------------------------------------------------


def compile_expr(expr):
    """Build a bindings -> value closure equivalent to eval_expr."""
    if isinstance(expr, Num):
        v = expr.value
        return lambda b: v
    if isinstance(expr, Var):
        name = expr.name

        def var_fn(b, name=name):
            try:
                return b[name]
            except KeyError:
                raise UndefinedVariable(name) from None

        return var_fn
    if isinstance(expr, Neg):
        f = compile_expr(expr.arg)
        return lambda b: -f(b)
    if isinstance(expr, Bin):
        fa = compile_expr(expr.left)
        fb = compile_expr(expr.right)
        op = expr.op
        if op == "+":
            return lambda b: fa(b) + fb(b)
        if op == "-":
            return lambda b: fa(b) - fb(b)
        if op == "*":
            return lambda b: fa(b) * fb(b)
        if op == "/":
            node = expr

            def div_fn(b):
                den = fb(b)
                if real_part(den) == 0.0:
                    raise DomainError("division by zero", node)
                return fa(b) / den

            return div_fn
        node = expr

        def pow_fn(b):
            base = fa(b)
            p = fb(b)
            if not isinstance(p, HyperDual):
                if float(p) != int(p) and real_part(base) <= 0.0:
                    raise DomainError("fractional power of non-positive "
                                      "base", node)
                if real_part(base) == 0.0 and p < 0:
                    raise DomainError("division by zero", node)
                return base ** p
            if real_part(base) <= 0.0:
                raise DomainError("power of non-positive base", node)
            return base ** p

        return pow_fn
    if isinstance(expr, Call):
        f = compile_expr(expr.arg)
        fn = _FUNCTIONS[expr.fn]
        name = expr.fn
        node = expr

        def call_fn(b):
            x = f(b)
            v = real_part(x)
            if name == "log" and v <= 0.0:
                raise DomainError("log of non-positive argument", node)
            if name == "sqrt" and v < 0.0:
                raise DomainError("sqrt of negative argument", node)
            if name == "tan" and math.cos(v) == 0.0:
                raise DomainError("tan at odd multiple of pi/2", node)
            return fn(x)

        return call_fn
    raise TypeError(f"not an Expr: {expr!r}")


def expr_subst(expr, assignments):
    """Replace variables by numeric constants and fold what becomes constant."""
    if isinstance(expr, Var):
        if expr.name in assignments:
            return Num(float(assignments[expr.name]))
        return expr
    if isinstance(expr, Num):
        return expr
    if isinstance(expr, Neg):
        return expr_neg(expr_subst(expr.arg, assignments))
    if isinstance(expr, Bin):
        left = expr_subst(expr.left, assignments)
        right = expr_subst(expr.right, assignments)
        if isinstance(left, Num) and isinstance(right, Num):
            return Num(eval_expr(Bin(expr.op, left, right), {}))
        if expr.op == "+":
            return expr_add(left, right)
        if expr.op == "-":
            return expr_sub(left, right)
        if expr.op == "*":
            return expr_mul(left, right)
        return Bin(expr.op, left, right)
    if isinstance(expr, Call):
        arg = expr_subst(expr.arg, assignments)
        if isinstance(arg, Num):
            return Num(eval_expr(Call(expr.fn, arg), {}))
        return Call(expr.fn, arg)
    raise TypeError(f"not an Expr: {expr!r}")
