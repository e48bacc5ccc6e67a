"""Scalar expression trees over chart coordinates.

Nodes are hash-consed: structurally equal trees are the same Python object,
so equality is identity and large derived expressions (Christoffel symbols,
curvature components) share subtrees as a DAG.  Differentiation and
evaluation both memoize on node identity.

Two construction paths exist.  The parser builds the raw tree exactly as
written so that ``emit`` round-trips.  The lower-case helpers ``add``,
``mul``, ``div``, ``power``, ``neg`` and ``func`` fold constants, apply 0/1
identities, collect like terms and order operands canonically; everything
outside the parser uses them.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ['^' exponent]
    exponent:= ['-'] NUMBER ['^' exponent]        (right-associative, folded)
    primary := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Functions: sin, cos, exp, log, sqrt.  ``a - b`` parses as ``a + (-b)``; a
minus sign directly in front of a number literal is folded into the literal.
"""

from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass
from itertools import count
from typing import Mapping

import numpy as np

__all__ = [
    "Chart",
    "Expr",
    "Const",
    "Sym",
    "Add",
    "Mul",
    "Div",
    "Neg",
    "Pow",
    "Func",
    "ExprSyntaxError",
    "UnknownSymbolError",
    "EvalDomainError",
    "FUNCTIONS",
    "const",
    "sym",
    "add",
    "mul",
    "div",
    "neg",
    "power",
    "func",
    "parse",
    "emit",
    "diff",
    "evaluate",
    "evaluate_many",
    "simplify",
    "symbols",
    "is_zero",
    "ZERO",
    "ONE",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the bad token."""

    def __init__(self, message: str, text: str, offset: int):
        self.text = text
        self.offset = offset
        super().__init__(f"{message} at offset {offset}: {text!r}")


class UnknownSymbolError(ValueError):
    def __init__(self, name: str, allowed):
        self.name = name
        super().__init__(f"unknown symbol {name!r} (chart coordinates: {', '.join(allowed)})")


class EvalDomainError(ArithmeticError):
    """Raised when a node is evaluated outside its domain (pole, log/sqrt of a negative)."""

    def __init__(self, reason: str, node: "Expr", point=None):
        self.reason = reason
        self.node = node
        self.point = point
        text = emit(node)
        if len(text) > 80:
            text = text[:77] + "..."
        where = "" if point is None else f" at {point}"
        super().__init__(f"{reason} in '{text}'{where}")


@dataclass(frozen=True)
class Chart:
    """Named coordinates plus the closed box used for sampling and quadrature."""

    coords: tuple[str, ...]
    domain: tuple[tuple[float, float], ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "domain", tuple((float(a), float(b)) for a, b in self.domain))
        if not self.coords:
            raise ValueError("chart needs at least one coordinate")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError(f"duplicate coordinate names in {self.coords}")
        if len(self.domain) != len(self.coords):
            raise ValueError("one domain interval per coordinate is required")
        for c, (a, b) in zip(self.coords, self.domain):
            if not _NAME_RE.fullmatch(c) or c in FUNCTIONS:
                raise ValueError(f"invalid coordinate name {c!r}")
            if not b > a:
                raise ValueError(f"domain of {c!r} must have positive length, got [{a}, {b}]")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def symbols(self) -> list["Sym"]:
        return [sym(c) for c in self.coords]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform points in the domain box, shape ``(count, dim)``."""
        lo = np.array([a for a, _ in self.domain])
        hi = np.array([b for _, b in self.domain])
        return lo + (hi - lo) * rng.random((count, self.dim))

    def bindings(self, points: np.ndarray) -> dict[str, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return {c: points[:, i] for i, c in enumerate(self.coords)}


# ---------------------------------------------------------------------------
# node classes

_serial = count()
_table: dict = {}
_table_lock = threading.Lock()


def _intern(cls, key, build):
    node = _table.get(key)
    if node is None:
        with _table_lock:
            node = _table.get(key)
            if node is None:
                node = object.__new__(cls)
                build(node)
                object.__setattr__(node, "_serial", next(_serial))
                _table[key] = node
    return node


class Expr:
    """Base class; instances are immutable and interned."""

    __slots__ = ("_serial", "__weakref__")
    precedence = 100

    def __setattr__(self, name, value):
        raise AttributeError("Expr nodes are immutable")

    def __reduce__(self):
        return (parse, (emit(self),))

    @property
    def children(self) -> tuple["Expr", ...]:
        return ()

    def __repr__(self):
        return f"{type(self).__name__}({emit(self)!r})"

    def __str__(self):
        return emit(self)

    # arithmetic sugar routes through the simplifying constructors
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, float(exponent))


def _set(node, **fields):
    for k, v in fields.items():
        object.__setattr__(node, k, v)


class Const(Expr):
    __slots__ = ("value",)

    def __new__(cls, value: float):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"non-finite constant {value}")
        if value == 0.0:
            value = 0.0  # fold -0.0
        return _intern(cls, (cls, value), lambda n: _set(n, value=value))


class Sym(Expr):
    __slots__ = ("name",)

    def __new__(cls, name: str):
        return _intern(cls, (cls, name), lambda n: _set(n, name=name))


class Add(Expr):
    __slots__ = ("terms",)
    precedence = 10

    def __new__(cls, *terms: Expr):
        if len(terms) < 2:
            raise ValueError("Add needs at least two terms")
        return _intern(cls, (cls,) + terms, lambda n: _set(n, terms=tuple(terms)))

    @property
    def children(self):
        return self.terms


class Mul(Expr):
    __slots__ = ("factors",)
    precedence = 20

    def __new__(cls, *factors: Expr):
        if len(factors) < 2:
            raise ValueError("Mul needs at least two factors")
        return _intern(cls, (cls,) + factors, lambda n: _set(n, factors=tuple(factors)))

    @property
    def children(self):
        return self.factors


class Div(Expr):
    __slots__ = ("num", "den")
    precedence = 20

    def __new__(cls, num: Expr, den: Expr):
        return _intern(cls, (cls, num, den), lambda n: _set(n, num=num, den=den))

    @property
    def children(self):
        return (self.num, self.den)


class Neg(Expr):
    __slots__ = ("arg",)
    precedence = 30

    def __new__(cls, arg: Expr):
        return _intern(cls, (cls, arg), lambda n: _set(n, arg=arg))

    @property
    def children(self):
        return (self.arg,)


class Pow(Expr):
    __slots__ = ("base", "exponent")
    precedence = 40

    def __new__(cls, base: Expr, exponent: float):
        exponent = float(exponent)
        if not math.isfinite(exponent):
            raise ValueError("non-finite exponent")
        return _intern(cls, (cls, base, exponent), lambda n: _set(n, base=base, exponent=exponent))

    @property
    def children(self):
        return (self.base,)


class Func(Expr):
    __slots__ = ("name", "arg")

    def __new__(cls, name: str, arg: Expr):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")
        return _intern(cls, (cls, name, arg), lambda n: _set(n, name=name, arg=arg))

    @property
    def children(self):
        return (self.arg,)


ZERO = Const(0.0)
ONE = Const(1.0)


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.integer, np.floating)):
        return Const(float(value))
    raise TypeError(f"cannot use {type(value).__name__} in an expression")


def const(value: float) -> Const:
    return Const(value)


def sym(name: str) -> Sym:
    return Sym(name)


def symbols(names) -> list[Sym]:
    if isinstance(names, str):
        names = names.replace(",", " ").split()
    return [Sym(n) for n in names]


def is_zero(e: Expr) -> bool:
    return e is ZERO


def _is_int(p: float) -> bool:
    return float(p).is_integer()


# ---------------------------------------------------------------------------
# simplifying constructors


def _split_coeff(e: Expr) -> tuple[float, Expr]:
    if isinstance(e, Const):
        return e.value, ONE
    if isinstance(e, Mul) and isinstance(e.factors[0], Const):
        rest = e.factors[1:]
        return e.factors[0].value, rest[0] if len(rest) == 1 else Mul(*rest)
    return 1.0, e


def _scaled(c: float, rest: Expr) -> Expr:
    if c == 0.0:
        return ZERO
    if rest is ONE:
        return Const(c)
    if c == 1.0:
        return rest
    if isinstance(rest, Mul):
        return Mul(Const(c), *rest.factors)
    return Mul(Const(c), rest)


def add(*terms: Expr) -> Expr:
    """Sum with constant folding and collection of like terms."""
    coeffs: dict[Expr, float] = {}
    stack = list(terms)
    stack.reverse()
    while stack:
        t = stack.pop()
        if not isinstance(t, Expr):
            t = _coerce(t)
        if isinstance(t, Add):
            stack.extend(reversed(t.terms))
            continue
        c, rest = _split_coeff(t)
        coeffs[rest] = coeffs.get(rest, 0.0) + c
    parts = [
        _scaled(c, rest)
        for rest, c in sorted(coeffs.items(), key=lambda kv: kv[0]._serial)
        if c != 0.0
    ]
    if not parts:
        return ZERO
    # constant term last keeps emitted text readable
    parts.sort(key=lambda p: isinstance(p, Const))
    if len(parts) == 1:
        return parts[0]
    return Add(*parts)


def _base_exp(e: Expr) -> tuple[Expr, float]:
    if isinstance(e, Pow):
        return e.base, e.exponent
    return e, 1.0


def mul(*factors: Expr) -> Expr:
    """Product with constant folding, zero/one identities and power merging."""
    c = 1.0
    powers: dict[Expr, list[float]] = {}
    stack = list(factors)
    stack.reverse()
    while stack:
        f = stack.pop()
        if not isinstance(f, Expr):
            f = _coerce(f)
        if isinstance(f, Mul):
            stack.extend(reversed(f.factors))
            continue
        if isinstance(f, Const):
            if f.value == 0.0:
                return ZERO
            c *= f.value
            continue
        base, p = _base_exp(f)
        powers.setdefault(base, []).append(p)
    if c == 0.0:
        return ZERO
    out = []
    for base in sorted(powers, key=lambda b: b._serial):
        exps = powers[base]
        ints = [p for p in exps if _is_int(p)]
        others = [p for p in exps if not _is_int(p)]
        if ints:
            total = sum(ints)
            if total != 0.0:
                out.append(base if total == 1.0 else Pow(base, total))
        for p in others:
            out.append(Pow(base, p))
    if not out:
        return Const(c)
    if c != 1.0:
        out.insert(0, Const(c))
    if len(out) == 1:
        return out[0]
    return Mul(*out)


def neg(e: Expr) -> Expr:
    return mul(Const(-1.0), _coerce(e))


def power(base: Expr, exponent: float) -> Expr:
    exponent = float(exponent)
    if exponent == 0.0:
        return ONE
    if exponent == 1.0:
        return base
    if isinstance(base, Const):
        v = base.value
        if v == 0.0 and exponent < 0:
            return Pow(base, exponent)  # left for eval to report
        if v < 0 and not _is_int(exponent):
            return Pow(base, exponent)
        try:
            r = v**exponent
        except (OverflowError, ZeroDivisionError):
            return Pow(base, exponent)
        if isinstance(r, complex) or not math.isfinite(r):
            return Pow(base, exponent)
        return Const(r)
    if _is_int(exponent):
        if isinstance(base, Pow) and _is_int(base.exponent):
            return power(base.base, base.exponent * exponent)
        if isinstance(base, Pow):
            return Pow(base.base, base.exponent * exponent)
        if isinstance(base, Mul):
            return mul(*(power(f, exponent) for f in base.factors))
    return Pow(base, exponent)


def div(num: Expr, den: Expr) -> Expr:
    if den is ONE:
        return num
    if num is ZERO:
        return ZERO
    if isinstance(den, Const) and den.value != 0.0:
        return mul(Const(1.0 / den.value), num)
    return mul(num, power(den, -1.0))


_FOLD = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": lambda v: math.log(v) if v > 0 else None,
    "sqrt": lambda v: math.sqrt(v) if v >= 0 else None,
}


def func(name: str, arg: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if isinstance(arg, Const):
        try:
            v = _FOLD[name](arg.value)
        except OverflowError:
            v = None
        if v is not None and math.isfinite(v):
            return Const(v)
    if name == "log" and isinstance(arg, Func) and arg.name == "exp":
        return arg.arg
    return Func(name, arg)


def simplify(e: Expr) -> Expr:
    """Rebuild ``e`` bottom-up through the simplifying constructors."""
    memo: dict[Expr, Expr] = {}

    def go(n: Expr) -> Expr:
        hit = memo.get(n)
        if hit is not None:
            return hit
        if isinstance(n, (Const, Sym)):
            r = n
        elif isinstance(n, Add):
            r = add(*(go(t) for t in n.terms))
        elif isinstance(n, Mul):
            r = mul(*(go(f) for f in n.factors))
        elif isinstance(n, Div):
            r = div(go(n.num), go(n.den))
        elif isinstance(n, Neg):
            r = neg(go(n.arg))
        elif isinstance(n, Pow):
            r = power(go(n.base), n.exponent)
        elif isinstance(n, Func):
            r = func(n.name, go(n.arg))
        else:  # pragma: no cover
            raise TypeError(type(n))
        memo[n] = r
        return r

    return go(e)


# ---------------------------------------------------------------------------
# differentiation

_diff_cache: dict[tuple[Expr, Expr], Expr] = {}


def diff(e: Expr, x) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to coordinate ``x``."""
    if isinstance(x, str):
        x = Sym(x)
    if not isinstance(x, Sym):
        raise TypeError("differentiate with respect to a coordinate symbol")
    return _diff(e, x)


def _diff(e: Expr, x: Sym) -> Expr:
    key = (e, x)
    hit = _diff_cache.get(key)
    if hit is not None:
        return hit
    if isinstance(e, Const):
        r = ZERO
    elif isinstance(e, Sym):
        r = ONE if e is x else ZERO
    elif isinstance(e, Add):
        r = add(*(_diff(t, x) for t in e.terms))
    elif isinstance(e, Mul):
        terms = []
        fs = e.factors
        for i, f in enumerate(fs):
            d = _diff(f, x)
            if d is not ZERO:
                terms.append(mul(*fs[:i], d, *fs[i + 1 :]))
        r = add(*terms)
    elif isinstance(e, Div):
        dn, dd = _diff(e.num, x), _diff(e.den, x)
        if dd is ZERO:
            r = div(dn, e.den)
        else:
            r = div(add(mul(dn, e.den), neg(mul(e.num, dd))), power(e.den, 2.0))
    elif isinstance(e, Neg):
        r = neg(_diff(e.arg, x))
    elif isinstance(e, Pow):
        db = _diff(e.base, x)
        r = ZERO if db is ZERO else mul(Const(e.exponent), power(e.base, e.exponent - 1.0), db)
    elif isinstance(e, Func):
        du = _diff(e.arg, x)
        u = e.arg
        if du is ZERO:
            r = ZERO
        elif e.name == "sin":
            r = mul(func("cos", u), du)
        elif e.name == "cos":
            r = mul(Const(-1.0), func("sin", u), du)
        elif e.name == "exp":
            r = mul(e, du)
        elif e.name == "log":
            r = div(du, u)
        else:  # sqrt
            r = mul(Const(0.5), du, power(e, -1.0))
    else:  # pragma: no cover
        raise TypeError(type(e))
    _diff_cache[key] = r
    return r


# ---------------------------------------------------------------------------
# evaluation


def _topo(roots) -> list[Expr]:
    """Post-order over the DAG below ``roots`` (each node once)."""
    order: list[Expr] = []
    seen: set[int] = set()
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for ch in node.children:
                if id(ch) not in seen:
                    stack.append((ch, False))
    return order


def _point_of(bindings, mask):
    mask = np.asarray(mask)
    idx = int(np.flatnonzero(mask)[0]) if mask.ndim else None
    pt = {}
    for k, v in bindings.items():
        v = np.asarray(v)
        pt[k] = float(v if v.ndim == 0 or idx is None or idx >= v.size else v.ravel()[idx])
    return pt


def evaluate_many(roots, bindings: Mapping[str, object]) -> list:
    """Evaluate several expressions sharing one memo.

    Binding values may be floats or equally-shaped numpy arrays; results have
    the broadcast shape.  Raises :class:`EvalDomainError` naming the first
    offending node.
    """
    roots = list(roots)
    vals: dict[int, object] = {}
    with np.errstate(all="ignore"):
        for n in _topo(roots):
            if isinstance(n, Const):
                v = n.value
            elif isinstance(n, Sym):
                try:
                    v = bindings[n.name]
                except KeyError:
                    raise KeyError(f"no binding for symbol {n.name!r}") from None
                v = np.asarray(v, dtype=float) if not isinstance(v, float) else v
            elif isinstance(n, Add):
                it = iter(n.terms)
                v = vals[id(next(it))]
                for t in it:
                    v = v + vals[id(t)]
            elif isinstance(n, Mul):
                it = iter(n.factors)
                v = vals[id(next(it))]
                for f in it:
                    v = v * vals[id(f)]
            elif isinstance(n, Div):
                d = vals[id(n.den)]
                bad = np.asarray(d) == 0
                if np.any(bad):
                    raise EvalDomainError("division by zero", n, _point_of(bindings, bad))
                v = vals[id(n.num)] / d
            elif isinstance(n, Neg):
                v = -vals[id(n.arg)]
            elif isinstance(n, Pow):
                b = vals[id(n.base)]
                p = n.exponent
                ba = np.asarray(b)
                if p < 0:
                    bad = ba == 0
                    if np.any(bad):
                        raise EvalDomainError("division by zero", n, _point_of(bindings, bad))
                if not _is_int(p):
                    bad = ba < 0
                    if np.any(bad):
                        raise EvalDomainError("fractional power of a negative number", n, _point_of(bindings, bad))
                if p == 2.0:
                    v = b * b
                elif p == -1.0:
                    v = 1.0 / b
                else:
                    v = np.power(b, p) if isinstance(b, np.ndarray) else float(b) ** p
            elif isinstance(n, Func):
                a = vals[id(n.arg)]
                aa = np.asarray(a)
                if n.name == "log" and np.any(aa <= 0):
                    raise EvalDomainError("log of a non-positive number", n, _point_of(bindings, aa <= 0))
                if n.name == "sqrt" and np.any(aa < 0):
                    raise EvalDomainError("sqrt of a negative number", n, _point_of(bindings, aa < 0))
                v = getattr(np, n.name)(a)
            else:  # pragma: no cover
                raise TypeError(type(n))
            if isinstance(v, np.ndarray):
                if not np.all(np.isfinite(v)):
                    raise EvalDomainError("non-finite value", n, _point_of(bindings, ~np.isfinite(v)))
            else:
                v = float(v)
                if not math.isfinite(v):
                    raise EvalDomainError("non-finite value", n, _point_of(bindings, True))
            vals[id(n)] = v
    return [vals[id(r)] for r in roots]


def evaluate(e: Expr, bindings: Mapping[str, object] | None = None, **kw):
    """Evaluate one expression; ``evaluate(e, x=1.0, y=2.0)`` also works."""
    b = dict(bindings or {})
    b.update(kw)
    return evaluate_many([e], b)[0]


# ---------------------------------------------------------------------------
# emitter


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def emit(e: Expr) -> str:
    """Render ``e`` so that ``parse(emit(e))`` rebuilds the same tree."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, Add):
        out = [_emit_term(e.terms[0], first=True)]
        for t in e.terms[1:]:
            if isinstance(t, Neg):
                out.append(" - " + _emit_term(t.arg, first=False))
            else:
                out.append(" + " + _emit_term(t, first=False))
        return "".join(out)
    if isinstance(e, Mul):
        parts = []
        for i, f in enumerate(e.factors):
            wrap = isinstance(f, (Add, Mul)) or (i > 0 and isinstance(f, Div))
            parts.append(f"({emit(f)})" if wrap else emit(f))
        return "*".join(parts)
    if isinstance(e, Div):
        num = emit(e.num)
        if isinstance(e.num, Add):
            num = f"({num})"
        den = emit(e.den)
        if isinstance(e.den, (Add, Mul, Div)):
            den = f"({den})"
        return f"{num}/{den}"
    if isinstance(e, Neg):
        inner = emit(e.arg)
        if isinstance(e.arg, (Add, Mul, Div, Const)):
            inner = f"({inner})"
        return "-" + inner
    if isinstance(e, Pow):
        base = emit(e.base)
        if not isinstance(e.base, (Sym, Func)) and not (isinstance(e.base, Const) and e.base.value >= 0):
            base = f"({base})"
        return f"{base}^{_fmt_number(e.exponent)}"
    if isinstance(e, Func):
        return f"{e.name}({emit(e.arg)})"
    raise TypeError(type(e))  # pragma: no cover


def _emit_term(t: Expr, first: bool) -> str:
    s = emit(t)
    if isinstance(t, Add):
        return f"({s})"
    return s


# ---------------------------------------------------------------------------
# parser

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str):
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if not m:
            off = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[off]!r}", text, len(text[:off].encode()))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    toks.append(("end", "", len(text.encode())))
    return toks


class _Parser:
    def __init__(self, text: str, allowed):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.allowed = allowed

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, tok, what=None):
        kind, val, off = tok
        if kind == "end":
            raise ExprSyntaxError(what or "unexpected end of input", self.text, off)
        raise ExprSyntaxError(what or f"unexpected token {val!r}", self.text, off)

    def expect_op(self, op):
        t = self.take()
        if t[0] != "op" or t[1] != op:
            self.fail(t, f"expected {op!r}")

    def parse(self) -> Expr:
        e = self.expr()
        t = self.peek()
        if t[0] != "end":
            self.fail(t)
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            t = self.term()
            terms.append(t if op == "+" else Neg(t))
        return terms[0] if len(terms) == 1 else Add(*terms)

    def term(self) -> Expr:
        result = self.unary()
        chain: list[Expr] | None = None
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            rhs = self.unary()
            if op == "*":
                if chain is None:
                    chain = [result]
                chain.append(rhs)
            else:
                if chain is not None:
                    result, chain = Mul(*chain), None
                result = Div(result, rhs)
        if chain is not None:
            result = Mul(*chain)
        return result

    def unary(self) -> Expr:
        t = self.peek()
        if t[0] == "op" and t[1] == "-":
            self.take()
            nxt, after = self.peek(), self.peek(1)
            if nxt[0] == "num" and not (after[0] == "op" and after[1] == "^"):
                self.take()
                return Const(-float(nxt[1]))
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> float:
        sign = 1.0
        t = self.peek()
        if t[0] == "op" and t[1] == "-":
            self.take()
            sign = -1.0
        t = self.take()
        if t[0] != "num":
            self.fail(t, "exponent must be a number literal")
        p = sign * float(t[1])
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            q = self.exponent()
            try:
                p = p**q
            except (OverflowError, ZeroDivisionError):
                self.fail(t, "exponent out of range")
            if isinstance(p, complex) or not math.isfinite(p):
                self.fail(t, "exponent out of range")
        return p

    def primary(self) -> Expr:
        t = self.take()
        kind, val, off = t
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {val!r}", self.text, off)
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return Func(val, arg)
            if val in FUNCTIONS:
                raise ExprSyntaxError(f"function {val!r} needs an argument", self.text, off)
            if self.allowed is not None and val not in self.allowed:
                raise UnknownSymbolError(val, self.allowed)
            return Sym(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        self.fail(t)


def parse(text: str, chart: Chart | None = None) -> Expr:
    """Parse ``text`` into a raw expression tree.

    With a chart, every symbol must be one of its coordinates.
    """
    allowed = None if chart is None else tuple(chart.coords)
    return _Parser(text, allowed).parse()
