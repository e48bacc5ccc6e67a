"""Christoffel symbols, Riemann/Ricci/scalar curvature and the derived
concircular, conharmonic and Weyl tensors.

Conventions (see docs/conventions.md):

* ``Γ[k, i, j]`` = Γ^k_{ij}, with ∇_{∂i} ∂j = Γ^k_{ij} ∂k.
* ``R_up[i, j, k, l]`` = R^i_{jkl} = ∂_k Γ^i_{lj} − ∂_l Γ^i_{kj}
  + Γ^i_{km} Γ^m_{lj} − Γ^i_{lm} Γ^m_{kj}; this is the ∂i-component of
  R(∂k, ∂l)∂j.
* ``Ric[j, l]`` = R^k_{jkl}.  The unit sphere has positive scalar curvature.
* ``R_down[i, j, k, l]`` = g_{jm} R^m_{ikl} = g(R(∂k, ∂l)∂i, ∂j).  For a
  metric connection this equals g(R(e_i, e_j)e_k, e_l), the form the
  concircular/conharmonic/Weyl formulas are written in.  A space form of
  sectional curvature λ has R_down = λ (g_il g_jk − g_ik g_jl) and
  Ric_jk = g^{il} R_ijkl.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import ZERO, Expr, add, mul, power
from .tensor import (
    DOWN,
    UP,
    TensorField,
    VarianceError,
    contract,
    lower,
    partial_derivative,
)

__all__ = [
    "CurvatureBundle",
    "determinant",
    "metric_inverse",
    "christoffel",
    "riemann",
    "ricci",
    "scalar",
    "lower_riemann",
    "lower_middle",
    "space_form_pattern",
    "concircular",
    "conharmonic",
    "weyl",
    "weyl_identity_residual",
    "curvature_bundle",
]


def _check_metric(g: TensorField):
    if g.variance != (DOWN, DOWN):
        raise VarianceError(f"metric must be a (0,2) field, got {g.variance}")


def _minor_det(M, rows: tuple[int, ...], cols: tuple[int, ...], memo) -> Expr:
    key = (rows, cols)
    hit = memo.get(key)
    if hit is not None:
        return hit
    if len(rows) == 1:
        r = M[rows[0], cols[0]]
    else:
        head, rest = rows[0], rows[1:]
        terms = []
        for pos, c in enumerate(cols):
            a = M[head, c]
            if a is ZERO:
                continue
            sub = _minor_det(M, rest, cols[:pos] + cols[pos + 1 :], memo)
            if sub is ZERO:
                continue
            terms.append(mul(-1.0 if pos % 2 else 1.0, a, sub))
        r = add(*terms)
    memo[key] = r
    return r


def determinant(g: TensorField) -> Expr:
    n = g.dim
    idx = tuple(range(n))
    return _minor_det(g.components, idx, idx, {})


def metric_inverse(g: TensorField) -> TensorField:
    """Symbolic inverse via the adjugate (memoized Laplace expansion)."""
    _check_metric(g)
    n = g.dim
    M = g.components
    memo: dict = {}
    idx = tuple(range(n))
    det = _minor_det(M, idx, idx, memo)
    if det is ZERO:
        raise ArithmeticError("metric determinant is identically zero")
    inv_det = power(det, -1.0)
    if n == 1:
        return TensorField.build(g.chart, "uu", lambda i, j: inv_det, name="g_inv")

    def comp(i, j):
        # (g^-1)_{ij} = (-1)^{i+j} minor(j, i) / det
        rows = tuple(r for r in idx if r != j)
        cols = tuple(c for c in idx if c != i)
        m = _minor_det(M, rows, cols, memo)
        return mul(-1.0 if (i + j) % 2 else 1.0, m, inv_det)

    half = {}
    for i in range(n):
        for j in range(i, n):
            half[i, j] = comp(i, j)
    return TensorField.build(
        g.chart, "uu", lambda i, j: half[min(i, j), max(i, j)], symmetries=[(0, 1, "sym")], name="g_inv"
    )


def christoffel(g: TensorField, g_inv: TensorField | None = None) -> TensorField:
    """Levi-Civita connection Γ^k_{ij} = ½ g^{kl}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)."""
    _check_metric(g)
    if g_inv is None:
        g_inv = metric_inverse(g)
    if g_inv.variance != (UP, UP):
        raise VarianceError("inverse metric must be a (2,0) field")
    n = g.dim
    dg = partial_derivative(g).components  # dg[c, a, b] = ∂_c g_ab
    Gi = g_inv.components
    first = {}
    for i in range(n):
        for j in range(i, n):
            for l in range(n):
                first[i, j, l] = mul(0.5, add(dg[i, j, l], dg[j, i, l], mul(-1.0, dg[l, i, j])))
    half = {}
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                half[k, i, j] = add(*(mul(Gi[k, l], first[i, j, l]) for l in range(n)))
    return TensorField.build(
        g.chart,
        "udd",
        lambda k, i, j: half[k, min(i, j), max(i, j)],
        symmetries=[(1, 2, "sym")],
        name="Gamma",
    )


def riemann(gamma: TensorField) -> TensorField:
    """R^i_{jkl} of a torsion-free connection (metric or not)."""
    if gamma.variance != (UP, DOWN, DOWN):
        raise VarianceError(f"connection must have variance (u, d, d), got {gamma.variance}")
    n = gamma.dim
    G = gamma.components
    dG = partial_derivative(gamma).components  # dG[c, i, a, b] = ∂_c Γ^i_ab
    comps = np.empty((n,) * 4, dtype=object)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                comps[i, j, k, k] = ZERO
                for l in range(k + 1, n):
                    terms = [dG[k, i, l, j], mul(-1.0, dG[l, i, k, j])]
                    for m in range(n):
                        terms.append(mul(G[i, k, m], G[m, l, j]))
                        terms.append(mul(-1.0, G[i, l, m], G[m, k, j]))
                    r = add(*terms)
                    comps[i, j, k, l] = r
                    comps[i, j, l, k] = mul(-1.0, r)
    return TensorField(gamma.chart, "uddd", comps, ((2, 3, "anti"),), "R_up")


def ricci(R_up: TensorField) -> TensorField:
    """Ric_{jl} = R^k_{jkl}."""
    if R_up.variance != (UP, DOWN, DOWN, DOWN):
        raise VarianceError("ricci expects a (1,3) curvature field")
    return contract(R_up, 0, 2).with_name("Ric")


def scalar(g_inv: TensorField, Ric: TensorField) -> Expr:
    """R = g^{jk} R_{jk}."""
    if g_inv.variance != (UP, UP) or Ric.variance != (DOWN, DOWN):
        raise VarianceError("scalar expects g_inv (2,0) and Ric (0,2)")
    n = g_inv.dim
    return add(*(mul(g_inv[j, k], Ric[j, k]) for j in range(n) for k in range(n)))


def lower_riemann(R_up: TensorField, g: TensorField) -> TensorField:
    """R_{ijkl} = g_{jm} R^m_{ikl} (pair-symmetric for Levi-Civita input)."""
    out = lower(R_up, 0, g, position=1)
    return out.with_symmetries((2, 3, "anti")).with_name("R_down")


def lower_middle(R_up: TensorField, g: TensorField) -> TensorField:
    """R_{ijkl} = g_{mk} R^m_{ijl}: the up index lowered into the third slot."""
    return lower(R_up, 0, g, position=2).with_name("R_mid")


def space_form_pattern(g: TensorField) -> TensorField:
    """G_{ijkl} = g_il g_jk − g_ik g_jl, so a space form has R_down = λ G."""
    _check_metric(g)
    G = g.components
    return TensorField.build(
        g.chart,
        "dddd",
        lambda i, j, k, l: add(mul(G[i, l], G[j, k]), mul(-1.0, G[i, k], G[j, l])),
        name="G",
    )


def concircular(g: TensorField, R_down: TensorField, R_scalar: Expr) -> TensorField:
    """C = R_down − R/(n(n−1)) (g_il g_jk − g_jl g_ik)."""
    n = g.dim
    if n < 2:
        raise ValueError("concircular tensor needs n >= 2")
    f = mul(R_scalar, 1.0 / (n * (n - 1)))
    G = space_form_pattern(g).components
    return TensorField.build(
        g.chart,
        "dddd",
        lambda i, j, k, l: add(R_down[i, j, k, l], mul(-1.0, f, G[i, j, k, l])),
        symmetries=[(2, 3, "anti")],
        name="C",
    )


def _ricci_correction(g: TensorField, Ric: TensorField):
    gg, Rc = g.components, Ric.components

    def corr(i, j, k, l):
        return add(
            mul(gg[j, k], Rc[i, l]),
            mul(gg[i, l], Rc[j, k]),
            mul(-1.0, gg[i, k], Rc[j, l]),
            mul(-1.0, gg[j, l], Rc[i, k]),
        )

    return corr


def conharmonic(g: TensorField, R_down: TensorField, Ric: TensorField) -> TensorField:
    """L = R_down − 1/(n−2) (g_jk R_il + g_il R_jk − g_ik R_jl − g_jl R_ik)."""
    n = g.dim
    if n <= 2:
        raise ValueError("conharmonic tensor needs n >= 3 (division by n-2)")
    corr = _ricci_correction(g, Ric)
    a = -1.0 / (n - 2)
    return TensorField.build(
        g.chart,
        "dddd",
        lambda i, j, k, l: add(R_down[i, j, k, l], mul(a, corr(i, j, k, l))),
        symmetries=[(2, 3, "anti")],
        name="L",
    )


def weyl(g: TensorField, R_down: TensorField, Ric: TensorField, R_scalar: Expr) -> TensorField:
    """W = R_down − 1/(n−2)(g_jk R_il − g_ik R_jl + g_il R_jk − g_jl R_ik)
    + R/((n−1)(n−2)) (g_il g_jk − g_jl g_ik)."""
    n = g.dim
    if n <= 2:
        raise ValueError("Weyl tensor needs n >= 3 (division by n-2)")
    corr = _ricci_correction(g, Ric)
    G = space_form_pattern(g).components
    a = -1.0 / (n - 2)
    b = mul(R_scalar, 1.0 / ((n - 1) * (n - 2)))
    return TensorField.build(
        g.chart,
        "dddd",
        lambda i, j, k, l: add(R_down[i, j, k, l], mul(a, corr(i, j, k, l)), mul(b, G[i, j, k, l])),
        symmetries=[(2, 3, "anti"), (0, 1, "anti")],
        name="W",
    )


def weyl_identity_residual(W, L, C, R_down, n: int) -> TensorField:
    """W − L + n/(n−2) (C − R_down); identically zero."""
    if n < 3:
        raise ValueError("Weyl relation needs n >= 3")
    a = n / (n - 2)
    return TensorField.build(
        W.chart,
        "dddd",
        lambda i, j, k, l: add(
            W[i, j, k, l],
            mul(-1.0, L[i, j, k, l]),
            mul(a, C[i, j, k, l]),
            mul(-a, R_down[i, j, k, l]),
        ),
        name="weyl_relation",
    )


@dataclass(frozen=True)
class CurvatureBundle:
    g: TensorField
    g_inv: TensorField
    gamma: TensorField
    R_up: TensorField
    R_down: TensorField
    Ric: TensorField
    R_scalar: Expr

    @property
    def chart(self):
        return self.g.chart

    @property
    def dim(self) -> int:
        return self.g.dim

    def scalar_field(self) -> TensorField:
        return TensorField.scalar(self.chart, self.R_scalar, name="R")

    def concircular(self) -> TensorField:
        return concircular(self.g, self.R_down, self.R_scalar)

    def conharmonic(self) -> TensorField:
        return conharmonic(self.g, self.R_down, self.Ric)

    def weyl(self) -> TensorField:
        return weyl(self.g, self.R_down, self.Ric, self.R_scalar)


def curvature_bundle(g: TensorField, g_inv: TensorField | None = None) -> CurvatureBundle:
    """Run the full pipeline g → Γ → R^i_{jkl} → R_{ijkl}, Ric, R."""
    _check_metric(g)
    if g_inv is None:
        g_inv = metric_inverse(g)
    gamma = christoffel(g, g_inv)
    R_up = riemann(gamma)
    Ric = ricci(R_up).with_symmetries((0, 1, "sym"))
    R_down = lower_riemann(R_up, g).with_symmetries((2, 3, "anti"), (0, 1, "anti"))
    return CurvatureBundle(g, g_inv, gamma, R_up, R_down, Ric, scalar(g_inv, Ric))
