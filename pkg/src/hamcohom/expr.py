"""Closed-form scalar expressions in the plane variables ``x`` and ``y``.

The grammar is deliberately small::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-'? atom
    atom   := number | 'pi' | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | ln

Note that unary minus binds tighter than ``^``, so ``-x^2`` is ``(-x)^2``.

Expressions are immutable trees.  They evaluate pointwise (``evaluate``) or on
numpy arrays (``Expr.veval``) and differentiate exactly (``differentiate``).
Non-finite results are reported as :class:`EvalError`, never returned.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "Expr", "Num", "Pi", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "ParseError", "UnknownIdentifierError", "EvalError",
    "parse", "evaluate", "taylor_coefficients", "differentiate", "to_string", "as_expr",
    "X", "Y", "ZERO", "ONE",
]

FUNCTIONS = ("sin", "cos", "exp", "ln")


class ParseError(ValueError):
    """Syntax error; ``offset`` is a UTF-8 byte offset into the source."""

    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class UnknownIdentifierError(ParseError):
    pass


class EvalError(ArithmeticError):
    """Evaluation produced a pole, a domain error or a non-finite value."""


# ---------------------------------------------------------------------------
# AST


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    # arithmetic sugar, folded through the smart constructors below
    def __add__(self, other): return add(self, as_expr(other))
    def __radd__(self, other): return add(as_expr(other), self)
    def __sub__(self, other): return sub(self, as_expr(other))
    def __rsub__(self, other): return sub(as_expr(other), self)
    def __mul__(self, other): return mul(self, as_expr(other))
    def __rmul__(self, other): return mul(as_expr(other), self)
    def __truediv__(self, other): return div(self, as_expr(other))
    def __rtruediv__(self, other): return div(as_expr(other), self)
    def __pow__(self, other): return power(self, as_expr(other))
    def __neg__(self): return neg(self)

    def __str__(self) -> str:
        return to_string(self)

    def diff(self, var: str) -> "Expr":
        return differentiate(self, var)

    def eval(self, x: float, y: float) -> float:
        return evaluate(self, (x, y))

    def veval(self, x, y) -> np.ndarray:
        """Vectorised evaluation; raises EvalError at the first bad sample."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(all="ignore"):
            out = self._vector_fn(x, y)
        out = np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape)
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(out))[0]
            xb = float(np.broadcast_to(x, out.shape)[tuple(bad)])
            yb = float(np.broadcast_to(y, out.shape)[tuple(bad)])
            evaluate(self, (xb, yb))  # raises with the precise reason
            raise EvalError(f"non-finite value at ({xb!r}, {yb!r})")
        return np.array(out)

    def subs(self, **repl: "Expr") -> "Expr":
        """Substitute expressions for the variables ``x``/``y``."""
        return _subs(self, {k: as_expr(v) for k, v in repl.items()})

    @cached_property
    def _scalar_fn(self) -> Callable[[float, float], float]:
        return _compile(self, vector=False)

    @cached_property
    def _vector_fn(self) -> Callable:
        return _compile(self, vector=True)


@dataclass(frozen=True, eq=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Pi(Expr):
    pass


@dataclass(frozen=True, eq=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True, eq=True)
class Call(Expr):
    func: str
    arg: Expr


X = Var("x")
Y = Var("y")
ZERO = Num(0.0)
ONE = Num(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    return Num(float(value))


# ---------------------------------------------------------------------------
# smart constructors (constant folding only)


def _const(e: Expr) -> float | None:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Pi):
        return math.pi
    return None


def _num(v: float, fallback: Expr) -> Expr:
    return Num(v) if math.isfinite(v) else fallback


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return _num(ca + cb, Add(a, b))
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return _num(ca - cb, Sub(a, b))
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        return _num(ca * cb, Mul(a, b))
    if ca == 0.0 or cb == 0.0:
        return ZERO
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    if ca == -1.0:
        return neg(b)
    if cb == -1.0:
        return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None and cb != 0.0:
        return _num(ca / cb, Div(a, b))
    if ca == 0.0 and cb is None:
        # 0/b is kept only when b could vanish; folding would hide the pole
        return Div(a, b)
    if cb == 1.0:
        return a
    return Div(a, b)


def power(a: Expr, b: Expr) -> Expr:
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        try:
            v = math.pow(ca, cb)
        except (ValueError, OverflowError, ZeroDivisionError):
            return Pow(a, b)
        return _num(v, Pow(a, b))
    if cb == 1.0:
        return a
    if cb == 0.0:
        return ONE
    return Pow(a, b)


def neg(a: Expr) -> Expr:
    ca = _const(a)
    if ca is not None:
        return Num(-ca)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(func: str, a: Expr) -> Expr:
    ca = _const(a)
    if ca is not None:
        try:
            v = _MATH[func](ca)
        except (ValueError, OverflowError):
            return Call(func, a)
        return _num(v, Call(func, a))
    return Call(func, a)


_MATH = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "ln": math.log}


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # 'num' | 'name' | 'op' | 'eof'
    text: str
    offset: int  # byte offset


def _tokenize(src: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0

    def boff(i: int) -> int:
        return len(src[:i].encode("utf-8"))

    while True:
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            rest = src[pos:]
            stripped = rest.lstrip()
            if not stripped:
                toks.append(_Tok("eof", "", boff(len(src))))
                return toks
            at = pos + (len(rest) - len(stripped))
            raise ParseError(f"unexpected character {stripped[0]!r}", boff(at))
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), boff(m.start(kind))))
        pos = m.end()


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: set[str]):
        t = self.tok
        what = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(f"unexpected {what}", t.offset, frozenset(expected))

    def accept(self, *ops: str) -> str | None:
        t = self.tok
        if t.kind == "op" and t.text in ops:
            self.i += 1
            return t.text
        return None

    def expect(self, op: str) -> None:
        if not self.accept(op):
            self.fail({op})

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "eof":
            self.fail({"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self) -> Expr:
        e = self.term()
        while (op := self.accept("+", "-")) is not None:
            r = self.term()
            e = Add(e, r) if op == "+" else Sub(e, r)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while (op := self.accept("*", "/")) is not None:
            r = self.factor()
            e = Mul(e, r) if op == "*" else Div(e, r)
        return e

    def factor(self) -> Expr:
        base = self.unary()
        if self.accept("^"):
            return Pow(base, self.factor())
        return base

    def unary(self) -> Expr:
        if self.accept("-"):
            return Neg(self.atom())
        return self.atom()

    _ATOM_START = {"number", "pi", "x", "y", "(", *FUNCTIONS}

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "name":
            self.i += 1
            if t.text == "pi":
                return Pi()
            if t.text in ("x", "y"):
                return Var(t.text)
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            raise UnknownIdentifierError(f"unknown identifier {t.text!r}", t.offset,
                                         frozenset(self._ATOM_START))
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        self.fail(self._ATOM_START)


def parse(src: str) -> Expr:
    """Parse expression text; raises ParseError with a byte offset."""
    if isinstance(src, bytes):
        src = src.decode("utf-8")
    return _Parser(src).parse()


# ---------------------------------------------------------------------------
# printing

def _fmt_num(v: float) -> str:
    s = "%.17g" % abs(v)
    return s


def _show(e: Expr) -> tuple[str, int]:
    # levels: 0 sum, 1 product, 2 power, 3 unary, 4 atom
    if isinstance(e, Num):
        s = _fmt_num(e.value)
        return ("-" + s, 3) if math.copysign(1.0, e.value) < 0 else (s, 4)
    if isinstance(e, Pi):
        return "pi", 4
    if isinstance(e, Var):
        return e.name, 4
    if isinstance(e, Call):
        return f"{e.func}({_show(e.arg)[0]})", 4
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, 4), 3
    if isinstance(e, (Add, Sub)):
        op = "+" if isinstance(e, Add) else "-"
        return f"{_wrap(e.left, 0)} {op} {_wrap(e.right, 1)}", 0
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        return f"{_wrap(e.left, 1)}{op}{_wrap(e.right, 2)}", 1
    if isinstance(e, Pow):
        return f"{_wrap(e.base, 3)}^{_wrap(e.exponent, 2)}", 2
    raise TypeError(e)


def _wrap(e: Expr, need: int) -> str:
    s, lvl = _show(e)
    return s if lvl >= need else f"({s})"


def to_string(e: Expr) -> str:
    """Render in the input grammar; ``parse(to_string(e))`` evaluates like ``e``."""
    return _show(e)[0]


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Expr, var: str) -> Expr:
    """Exact partial derivative with respect to ``'x'`` or ``'y'``."""
    if var not in ("x", "y"):
        raise ValueError(f"can only differentiate by x or y, not {var!r}")
    return _d(e, var)


def _d(e: Expr, v: str) -> Expr:
    if isinstance(e, (Num, Pi)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(_d(e.arg, v))
    if isinstance(e, Add):
        return add(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Sub):
        return sub(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Mul):
        return add(mul(_d(e.left, v), e.right), mul(e.left, _d(e.right, v)))
    if isinstance(e, Div):
        da, db = _d(e.left, v), _d(e.right, v)
        if _const(db) == 0.0:
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, Num(2.0)))
    if isinstance(e, Pow):
        a, b = e.base, e.exponent
        da, db = _d(a, v), _d(b, v)
        cb = _const(db)
        if cb == 0.0:
            # constant exponent: b * a^(b-1) * a'
            return mul(mul(b, power(a, sub(b, ONE))), da)
        # a^b * (b' ln a + b a'/a)
        return mul(e, add(mul(db, call("ln", a)), div(mul(b, da), a)))
    if isinstance(e, Call):
        da = _d(e.arg, v)
        if _const(da) == 0.0:
            return ZERO
        a = e.arg
        if e.func == "sin":
            outer = call("cos", a)
        elif e.func == "cos":
            outer = neg(call("sin", a))
        elif e.func == "exp":
            outer = e
        elif e.func == "ln":
            return div(da, a)
        else:
            raise TypeError(e.func)
        return mul(outer, da)
    raise TypeError(e)


def _subs(e: Expr, repl: dict[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return repl.get(e.name, e)
    if isinstance(e, (Num, Pi)):
        return e
    if isinstance(e, Neg):
        return neg(_subs(e.arg, repl))
    if isinstance(e, Call):
        return call(e.func, _subs(e.arg, repl))
    if isinstance(e, Pow):
        return power(_subs(e.base, repl), _subs(e.exponent, repl))
    ctor = {Add: add, Sub: sub, Mul: mul, Div: div}[type(e)]
    return ctor(_subs(e.left, repl), _subs(e.right, repl))


# ---------------------------------------------------------------------------
# evaluation


def _ln(v: float) -> float:
    if v <= 0.0:
        raise EvalError(f"ln of non-positive argument {v!r}")
    return math.log(v)


def _pow(a: float, b: float) -> float:
    try:
        return math.pow(a, b)
    except ZeroDivisionError:
        raise EvalError("division by zero (0 raised to a negative power)") from None
    except ValueError:
        raise EvalError(f"negative base {a!r} raised to non-integer power {b!r}") from None


def _exp(v: float) -> float:
    return math.exp(v)


_SCALAR_NS = {"sin": math.sin, "cos": math.cos, "exp": _exp, "ln": _ln, "_pow": _pow,
              "pi": math.pi}
_VECTOR_NS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "ln": np.log, "_pow": np.power,
              "pi": math.pi}


def _src(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Pi):
        return "pi"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_src(e.arg)})"
    if isinstance(e, Call):
        return f"{e.func}({_src(e.arg)})"
    if isinstance(e, Pow):
        cb = _const(e.exponent)
        if cb == 2.0:
            b = _src(e.base)
            return f"(({b})*({b}))"
        return f"_pow({_src(e.base)}, {_src(e.exponent)})"
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    return f"({_src(e.left)} {op} {_src(e.right)})"


def _compile(e: Expr, vector: bool) -> Callable:
    code = compile(f"lambda x, y: {_src(e)}", "<expr>", "eval")
    return eval(code, dict(_VECTOR_NS if vector else _SCALAR_NS))


def evaluate(e: Expr, p) -> float:
    """Evaluate at the point ``p = (x, y)`` in IEEE double precision."""
    x, y = float(p[0]), float(p[1])
    try:
        v = e._scalar_fn(x, y)
    except ZeroDivisionError:
        raise EvalError(f"division by zero at ({x!r}, {y!r})") from None
    except OverflowError:
        raise EvalError(f"overflow at ({x!r}, {y!r})") from None
    v = float(v)
    if not math.isfinite(v):
        raise EvalError(f"non-finite value at ({x!r}, {y!r})")
    return v


# ---------------------------------------------------------------------------
# truncated Taylor arithmetic


def _tmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    out = np.zeros_like(a)
    for i in range(n):
        for j in range(n):
            if a[i, j] != 0.0:
                out[i:, j:] += a[i, j] * b[: n - i, : n - j]
    return out


def _compose(series: np.ndarray, derivs) -> np.ndarray:
    """``g(T)`` from the Taylor coefficients ``derivs[k] = g^(k)(T0)/k!``."""
    h = series.copy()
    h[0, 0] = 0.0
    out = np.zeros_like(series)
    out[0, 0] = derivs[0]
    hk = np.zeros_like(series)
    hk[0, 0] = 1.0
    for k in range(1, len(derivs)):
        hk = _tmul(hk, h)
        if not hk.any():
            break
        out += derivs[k] * hk
    return out


def _tpow_int(a: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(a)
    out[0, 0] = 1.0
    base = a
    while k:
        if k & 1:
            out = _tmul(out, base)
        k >>= 1
        if k:
            base = _tmul(base, base)
    return out


def taylor_coefficients(e: Expr, p, order: int) -> np.ndarray:
    """Coefficients ``c[i, j]`` of ``(x-x0)^i (y-y0)^j`` for ``i, j <= order``.

    Exact differentiation rules applied to truncated bivariate power series;
    unlike repeated symbolic differentiation the cost does not grow with the
    derivative order beyond the series size.
    """
    x0, y0 = float(p[0]), float(p[1])
    n = order + 1
    K = 2 * order + 1
    memo: dict[int, np.ndarray] = {}

    def const(v):
        out = np.zeros((n, n))
        out[0, 0] = v
        return out

    def go(e: Expr) -> np.ndarray:
        key = id(e)
        if key in memo:
            return memo[key]
        if isinstance(e, Num):
            r = const(e.value)
        elif isinstance(e, Pi):
            r = const(math.pi)
        elif isinstance(e, Var):
            r = const(x0 if e.name == "x" else y0)
            if n > 1:
                r[(1, 0) if e.name == "x" else (0, 1)] = 1.0
        elif isinstance(e, Neg):
            r = -go(e.arg)
        elif isinstance(e, Add):
            r = go(e.left) + go(e.right)
        elif isinstance(e, Sub):
            r = go(e.left) - go(e.right)
        elif isinstance(e, Mul):
            r = _tmul(go(e.left), go(e.right))
        elif isinstance(e, Div):
            b = go(e.right)
            b0 = b[0, 0]
            if b0 == 0.0:
                raise EvalError(f"division by zero at ({x0!r}, {y0!r})")
            inv = _compose(b, [(-1.0) ** k / b0 ** (k + 1) for k in range(K)])
            r = _tmul(go(e.left), inv)
        elif isinstance(e, Pow):
            a = go(e.base)
            cb = _const(e.exponent)
            a0 = a[0, 0]
            if cb is not None and cb == int(cb) and cb >= 0:
                r = _tpow_int(a, int(cb))
            elif cb is not None and (a0 > 0 or (a0 != 0 and cb == int(cb))):
                coef, d = [], 1.0
                for k in range(K):
                    coef.append(d * _pow(a0, cb - k))
                    d *= (cb - k) / (k + 1)
                r = _compose(a, coef)
            elif cb is not None:
                raise EvalError(f"power {cb!r} of {a0!r} is not smooth at ({x0!r}, {y0!r})")
            else:
                lg = go(call("ln", e.base))
                r = _exp_series(_tmul(go(e.exponent), lg), K)
        elif isinstance(e, Call):
            a = go(e.arg)
            a0 = a[0, 0]
            if e.func == "exp":
                r = _exp_series(a, K)
            elif e.func == "ln":
                coef = [_ln(a0)] + [(-1.0) ** (k - 1) / (k * a0 ** k) for k in range(1, K)]
                r = _compose(a, coef)
            else:
                s, c = math.sin(a0), math.cos(a0)
                cyc = [s, c, -s, -c] if e.func == "sin" else [c, -s, -c, s]
                r = _compose(a, [cyc[k % 4] / math.factorial(k) for k in range(K)])
        else:
            raise TypeError(e)
        memo[key] = r
        return r

    return go(e)


def _exp_series(a: np.ndarray, K: int) -> np.ndarray:
    e0 = _exp(a[0, 0])
    return _compose(a, [e0 / math.factorial(k) for k in range(K)])
