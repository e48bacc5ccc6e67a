"""Modified Riemann extensions on the cotangent bundle.

Given a torsion-free connection Γ and a symmetric (0,2) field c on an
n-dimensional base, the extended chart has coordinates (x^1..x^n, ω_1..ω_n)
and metric

    ḡ_ij = −2 ω_l Γ^l_ij + c_ij,   ḡ_ij* = ḡ_i*j = δ_ij,   ḡ_i*j* = 0.

Index classes: slot values ``0..n-1`` are base ("unstarred") indices and
``n..2n-1`` are fiber ("starred") indices, so one 2n-range serves both and
the generic curvature pipeline runs unchanged on the extended chart.

The closed-form tables here are written in the pipeline convention of
:mod:`rextflow.curvature`.  Base curvature enters through the bracket form
``P^a_{bcd}`` = ∂a-component of R(∂b, ∂c)∂d (= ``R_up[a, d, b, c]``), which
is the slot order the classical component tables use.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .expr import ONE, ZERO, Chart, Expr, add, const, mul, sym
from .curvature import curvature_bundle, lower_middle, riemann, ricci
from .tensor import (
    DOWN,
    UP,
    TensorField,
    VarianceError,
    covariant_derivative,
    evaluate_on,
    partial_derivative,
    permute,
)

__all__ = [
    "ExtensionSpec",
    "ComponentTable",
    "extended_chart",
    "random_spec",
    "build_metric",
    "build_inverse_closed_form",
    "closed_form_connection",
    "closed_form_curvature",
    "extension_ricci_scalar",
    "direct_bundle",
    "bracket_curvature",
    "compare_with_direct",
    "omega_degree",
]

FIBER_PREFIX = "w_"


@dataclass(frozen=True)
class ExtensionSpec:
    """Base chart, torsion-free connection Γ[k, i, j] and symmetric c[i, j]."""

    chart: Chart
    gamma: TensorField
    c: TensorField
    fiber_extent: float = 1.0

    def __post_init__(self):
        if self.gamma.variance != (UP, DOWN, DOWN):
            raise VarianceError("connection must be a (1,2) field")
        if self.c.variance != (DOWN, DOWN):
            raise VarianceError("c must be a (0,2) field")
        if self.gamma.chart != self.chart or self.c.chart != self.chart:
            raise VarianceError("connection and c must live on the base chart")
        n = self.chart.dim
        for k, i, j in itertools.product(range(n), repeat=3):
            if self.gamma[k, i, j] is not self.gamma[k, j, i]:
                self._sampled_symmetry_check()
                break
        else:
            for i, j in itertools.product(range(n), repeat=2):
                if self.c[i, j] is not self.c[j, i]:
                    self._sampled_symmetry_check()
                    break

    def _sampled_symmetry_check(self, tol=1e-10):
        pts = self.chart.sample(20, np.random.default_rng(0))
        G = evaluate_on(self.gamma, pts)
        if np.max(np.abs(G - np.swapaxes(G, 2, 3))) > tol:
            raise ValueError("connection is not torsion-free (Γ^k_ij != Γ^k_ji)")
        C = evaluate_on(self.c, pts)
        if np.max(np.abs(C - np.swapaxes(C, 1, 2))) > tol:
            raise ValueError("c is not symmetric")

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def extended(self) -> Chart:
        return extended_chart(self.chart, self.fiber_extent)

    @property
    def omegas(self) -> list:
        return [sym(name) for name in self.extended.coords[self.dim :]]


@dataclass(frozen=True)
class ComponentTable:
    """A 2n-dimensional component array with base/fiber block access."""

    name: str
    field: TensorField
    n: int

    def block(self, classes: str) -> np.ndarray:
        """Sub-array for an index-class pattern, '.' = base, '*' = fiber; e.g. ``'*..'``."""
        if len(classes) != self.field.rank:
            raise ValueError(f"pattern {classes!r} does not match rank {self.field.rank}")
        sl = tuple(slice(self.n, None) if ch == "*" else slice(0, self.n) for ch in classes)
        return self.field.components[sl]

    def zero_blocks(self) -> list[str]:
        out = []
        for pat in itertools.product(".*", repeat=self.field.rank):
            pat = "".join(pat)
            if all(e is ZERO for e in self.block(pat).flat):
                out.append(pat)
        return out


def extended_chart(base: Chart, fiber_extent: float = 1.0) -> Chart:
    names = []
    for c in base.coords:
        name = FIBER_PREFIX + c
        while name in base.coords or name in names:
            name += "_"
        names.append(name)
    domain = base.domain + tuple((-fiber_extent, fiber_extent) for _ in names)
    return Chart(base.coords + tuple(names), domain, name=(base.name + "*").lstrip("*") or "extended")


def _on(chart: Chart, T: TensorField) -> TensorField:
    """Same component expressions viewed on another chart."""
    return TensorField(chart, T.variance, T.components, T.symmetries, T.name)


def _random_poly(xs, rng, degree: int, scale: float) -> Expr:
    terms = [const(round(float(rng.uniform(-scale, scale)), 3))]
    for d in range(1, degree + 1):
        for mono in itertools.combinations_with_replacement(range(len(xs)), d):
            coef = round(float(rng.uniform(-scale, scale)), 3)
            terms.append(mul(coef, *(xs[m] for m in mono)))
    return add(*terms)


def random_spec(chart: Chart, seed: int, degree: int = 2, scale: float = 1.0) -> ExtensionSpec:
    """Seeded random polynomial Γ (symmetric in lower slots) and symmetric c."""
    rng = np.random.default_rng(seed)
    xs = chart.symbols()
    n = chart.dim
    G = {}
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                G[k, i, j] = _random_poly(xs, rng, degree, scale)
    C = {}
    for i in range(n):
        for j in range(i, n):
            C[i, j] = _random_poly(xs, rng, degree, scale)
    gamma = TensorField.build(chart, "udd", lambda k, i, j: G[k, min(i, j), max(i, j)], [(1, 2, "sym")], "Gamma")
    c = TensorField.build(chart, "dd", lambda i, j: C[min(i, j), max(i, j)], [(0, 1, "sym")], "c")
    return ExtensionSpec(chart, gamma, c)


def build_metric(spec: ExtensionSpec) -> TensorField:
    n = spec.dim
    w = spec.omegas
    G, c = spec.gamma.components, spec.c.components

    def comp(a, b):
        if a < n and b < n:
            return add(mul(-2.0, add(*(mul(w[l], G[l, a, b]) for l in range(n)))), c[a, b])
        if (a < n) != (b < n):
            return ONE if abs(a - b) == n else ZERO
        return ZERO

    return TensorField.build(spec.extended, "dd", comp, [(0, 1, "sym")], "g_ext")


def build_inverse_closed_form(spec: ExtensionSpec) -> TensorField:
    """ḡ^ij = 0, ḡ^ij* = δ, ḡ^i*j* = 2 ω_l Γ^l_ij − c_ij."""
    n = spec.dim
    w = spec.omegas
    G, c = spec.gamma.components, spec.c.components

    def comp(a, b):
        if a >= n and b >= n:
            i, j = a - n, b - n
            return add(mul(2.0, add(*(mul(w[l], G[l, i, j]) for l in range(n)))), mul(-1.0, c[i, j]))
        if (a < n) != (b < n):
            return ONE if abs(a - b) == n else ZERO
        return ZERO

    return TensorField.build(spec.extended, "uu", comp, [(0, 1, "sym")], "g_ext_inv")


def bracket_curvature(gamma: TensorField) -> TensorField:
    """P^a_{bcd} = ∂a-component of R(∂b, ∂c)∂d, i.e. ``R_up[a, d, b, c]``."""
    return permute(riemann(gamma), (0, 2, 3, 1)).with_name("P")


def _fiber_connection_parts(spec: ExtensionSpec, classical: bool):
    """A[k, i, j] = Γ̄^{k*}_{ij} as a (0,3) field on the base chart (ω kept as parameters).

    ω-part: ω_r (∂_k Γ^r_ij − ∂_i Γ^r_jk − ∂_j Γ^r_ik + 2 Γ^r_km Γ^m_ij).
    With ``classical`` the ω-part is ω_l P^l_{kji} from the
    classical table instead.
    """
    n = spec.dim
    base = spec.chart
    w = spec.omegas
    G = spec.gamma.components
    dc = covariant_derivative(spec.c, spec.gamma).components  # dc[a, i, j] = ∇_a c_ij
    if classical:
        P = bracket_curvature(spec.gamma).components

        def omega_part(k, i, j):
            return add(*(mul(w[l], P[l, k, j, i]) for l in range(n)))

    else:
        dG = partial_derivative(spec.gamma).components  # dG[a, r, i, j] = ∂_a Γ^r_ij

        def omega_part(k, i, j):
            terms = []
            for r in range(n):
                b = add(
                    dG[k, r, i, j],
                    mul(-1.0, dG[i, r, j, k]),
                    mul(-1.0, dG[j, r, i, k]),
                    mul(2.0, add(*(mul(G[r, k, m], G[m, i, j]) for m in range(n)))),
                )
                terms.append(mul(w[r], b))
            return add(*terms)

    def comp(k, i, j):
        cpart = mul(0.5, add(dc[i, j, k], dc[j, i, k], mul(-1.0, dc[k, i, j])))
        return add(omega_part(k, i, j), cpart)

    return TensorField.build(base, "ddd", comp, name="A")


def closed_form_connection(spec: ExtensionSpec, classical: bool = False) -> ComponentTable:
    """Γ̄ on the extended chart from base data.

    Γ̄^k_ij = Γ^k_ij;  Γ̄^{k*}_ij = A[k, i, j];  Γ̄^{k*}_{i*j} = Γ̄^{k*}_{j i*} = −Γ^i_jk;
    every other class is zero.
    """
    n = spec.dim
    G = spec.gamma.components
    A = _fiber_connection_parts(spec, classical).components

    def comp(K, I, J):
        fk, fi, fj = K >= n, I >= n, J >= n
        if not fk:
            return G[K, I, J] if not (fi or fj) else ZERO
        k = K - n
        if not (fi or fj):
            return A[k, I, J]
        if fi and fj:
            return ZERO
        s, b = (I - n, J) if fi else (J - n, I)
        return mul(-1.0, G[s, b, k])

    f = TensorField.build(spec.extended, "udd", comp, [(1, 2, "sym")], "Gamma_ext")
    return ComponentTable("connection", f, n)


def closed_form_curvature(spec: ExtensionSpec, classical: bool = False) -> ComponentTable:
    """R̄^I_{JKL} of the extension, returned in pipeline convention.

    In bracket form (P̄^I_{JKL} = R̄_up[I, L, J, K]) the nonzero classes are
    P̄^i_jkl = P^i_jkl, P̄^{i*}_{j*kl} = P^j_ilk, P̄^{i*}_{jk*l} = −P^k_ilj,
    P̄^{i*}_{jkl*} = P^l_kji and

        P̄^{i*}_jkl = ½[∇_j(∇_l c_ki − ∇_i c_kl) − ∇_k(∇_l c_ji − ∇_i c_jl)
                     − P^m_jkl c_mi − P^m_jki c_lm] + (ω-part),

    where the ω-part is the formal ∇_j A_ikl − ∇_k A_ijl of the ω-linear
    piece of A = Γ̄^{*}_{..}.  ``classical`` swaps it for
    ω_a(∇_j P^a_ilk − ∇_k P^a_ilj).
    """
    n = spec.dim
    P = bracket_curvature(spec.gamma)
    Pc = P.components
    cc = spec.c.components
    ddc = covariant_derivative(covariant_derivative(spec.c, spec.gamma), spec.gamma).components
    w = spec.omegas

    if classical:
        dP = covariant_derivative(P, spec.gamma).components  # dP[e, a, b, c, d]

        def omega_part(i, j, k, l):
            return add(*(mul(w[a], add(dP[j, a, i, l, k], mul(-1.0, dP[k, a, i, l, j]))) for a in range(n)))

    else:
        zero_c = ExtensionSpec(spec.chart, spec.gamma, TensorField.zeros(spec.chart, "dd"), spec.fiber_extent)
        Aw = _fiber_connection_parts(zero_c, False)
        dA = covariant_derivative(Aw, spec.gamma).components  # dA[e, i, k, l] = ∇_e Aω_ikl

        def omega_part(i, j, k, l):
            return add(dA[j, i, k, l], mul(-1.0, dA[k, i, j, l]))

    def fiber_lower(i, j, k, l):
        cpart = mul(
            0.5,
            add(
                ddc[j, l, k, i],
                mul(-1.0, ddc[j, i, k, l]),
                mul(-1.0, ddc[k, l, j, i]),
                ddc[k, i, j, l],
                mul(-1.0, add(*(mul(Pc[m, j, k, l], cc[m, i]) for m in range(n)))),
                mul(-1.0, add(*(mul(Pc[m, j, k, i], cc[l, m]) for m in range(n)))),
            ),
        )
        return add(cpart, omega_part(i, j, k, l))

    def bracket(I, J, K, L):
        f = (I >= n, J >= n, K >= n, L >= n)
        i, j, k, l = (x - n if x >= n else x for x in (I, J, K, L))
        if f == (False, False, False, False):
            return Pc[i, j, k, l]
        if not f[0]:
            return ZERO
        if f == (True, False, False, False):
            return fiber_lower(i, j, k, l)
        if f == (True, True, False, False):
            return Pc[j, i, l, k]
        if f == (True, False, True, False):
            return mul(-1.0, Pc[k, i, l, j])
        if f == (True, False, False, True):
            return Pc[l, k, j, i]
        return ZERO

    memo = {}

    def comp(I, L, J, K):
        # R_up[I, L, J, K] = P̄^I_{JKL}
        key = (I, J, K, L)
        if key not in memo:
            memo[key] = bracket(I, J, K, L)
        return memo[key]

    f = TensorField.build(spec.extended, "uddd", comp, [(2, 3, "anti")], "R_ext")
    return ComponentTable("curvature", f, n)


def extension_ricci_scalar(spec: ExtensionSpec) -> tuple[ComponentTable, Expr]:
    """R̄_ij = R_ij + R_ji, all other classes zero; scalar from ḡ^{IJ} R̄_{IJ}."""
    n = spec.dim
    Ric = ricci(riemann(spec.gamma)).components
    inv = build_inverse_closed_form(spec)

    def comp(I, J):
        if I < n and J < n:
            return add(Ric[I, J], Ric[J, I])
        return ZERO

    f = TensorField.build(spec.extended, "dd", comp, [(0, 1, "sym")], "Ric_ext")
    m = 2 * n
    R = add(*(mul(inv[a, b], f[a, b]) for a in range(m) for b in range(m)))
    return ComponentTable("ricci", f, n), R


def direct_bundle(spec: ExtensionSpec):
    """Generic curvature pipeline on ḡ with its own (adjugate) inverse."""
    return curvature_bundle(build_metric(spec))


def omega_degree(e: Expr, omegas) -> int:
    """Highest total degree of ``e`` in the fiber symbols (structural scan).

    Returns a large number when a fiber symbol appears inside a function,
    a quotient or a non-integer power.
    """
    from .expr import Add, Const, Div, Func, Mul, Neg, Pow, Sym

    ws = set(omegas)
    memo: dict = {}

    def deg(n) -> int:
        if n in memo:
            return memo[n]
        if isinstance(n, Const):
            d = 0
        elif isinstance(n, Sym):
            d = 1 if n in ws else 0
        elif isinstance(n, Add):
            d = max(deg(t) for t in n.terms)
        elif isinstance(n, Mul):
            d = sum(deg(f) for f in n.factors)
        elif isinstance(n, Neg):
            d = deg(n.arg)
        elif isinstance(n, Pow):
            b = deg(n.base)
            d = 0 if b == 0 else (int(b * n.exponent) if n.exponent.is_integer() and n.exponent > 0 else 10**6)
        elif isinstance(n, (Div, Func)):
            d = 0 if all(deg(ch) == 0 for ch in n.children) else 10**6
        else:  # pragma: no cover
            raise TypeError(type(n))
        memo[n] = d
        return d

    return deg(e)


def _rel_residual(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))


def compare_with_direct(spec: ExtensionSpec, points: np.ndarray, classical: bool = False) -> dict:
    """Max relative residual |closed − direct| / (1 + |direct|) per table.

    Keys: ``inverse`` (ḡ·ḡ⁻¹ − I, absolute), ``connection``, ``curvature``,
    ``ricci``, ``scalar_closed`` and ``scalar_direct`` (max |R̄|), and
    ``middle_lowered_fiber`` (max |R̄_{i*jk*l}|).
    """
    n = spec.dim
    pts = np.atleast_2d(points)
    g = build_metric(spec)
    inv = build_inverse_closed_form(spec)
    gv, iv = evaluate_on(g, pts), evaluate_on(inv, pts)
    eye = np.eye(2 * n)
    out = {"inverse": float(np.max(np.abs(np.einsum("pab,pbc->pac", gv, iv) - eye)))}
    direct = direct_bundle(spec)
    conn = closed_form_connection(spec, classical)
    curv = closed_form_curvature(spec, classical)
    out["connection"] = _rel_residual(evaluate_on(conn.field, pts), evaluate_on(direct.gamma, pts))
    out["curvature"] = _rel_residual(evaluate_on(curv.field, pts), evaluate_on(direct.R_up, pts))
    ric_table, R_closed = extension_ricci_scalar(spec)
    out["ricci"] = _rel_residual(evaluate_on(ric_table.field, pts), evaluate_on(direct.Ric, pts))
    sc = TensorField.scalar(spec.extended, R_closed)
    sd = TensorField.scalar(spec.extended, direct.R_scalar)
    out["scalar_closed"] = float(np.max(np.abs(evaluate_on(sc, pts))))
    out["scalar_direct"] = float(np.max(np.abs(evaluate_on(sd, pts))))
    # lowering R_ijkl = g_mk P^m_ijl applied to the bracket-form table
    mid = lower_middle(permute(curv.field, (0, 2, 3, 1)), g)
    vals = evaluate_on(mid, pts)[:, n:, :n, n:, :n]
    out["middle_lowered_fiber"] = float(np.max(np.abs(vals)))
    return out
