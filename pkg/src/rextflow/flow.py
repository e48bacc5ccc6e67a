"""Yamabe flow ∂g/∂t = (S − R) g on conformal classes.

Only metrics with spatially constant scalar curvature are evolved: there
g(t) = c(t) g0 and the flow reduces to the scalar ODE

    c' = (S(c) − R0 / c) c,      c(0) = 1,

integrated with classical RK4 on a fixed grid.  The evolution identities
for g^{-1}, Riemann, Ricci, R, concircular, conharmonic and Weyl are checked
by central differences of the full curvature pipeline at g(±h).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .expr import Chart, Const, Expr, Sym, evaluate_many, is_zero, mul, simplify
from .curvature import CurvatureBundle, curvature_bundle, determinant, space_form_pattern
from .tensor import TensorField, evaluate_on

__all__ = [
    "S_MODES",
    "KINDS",
    "QuadratureError",
    "PreconditionError",
    "FlowSingularityError",
    "FlowScenario",
    "ConformalTrace",
    "EvolutionReport",
    "LambdaTrace",
    "StationarityReport",
    "integrate",
    "volume",
    "s_functional",
    "yamabe_velocity",
    "rk4",
    "integrate_conformal",
    "self_convergence",
    "scalar_variation",
    "evolution_identity_check",
    "evolution_report",
    "einstein_lambda_check",
    "constant_curvature_check",
    "stationarity_check",
]

S_MODES = ("constant", "average", "paper_volume")
KINDS = ("metric_inverse", "riemann", "ricci", "scalar", "concircular", "conharmonic", "weyl")

SCALE = Sym("_scale")  # conformal factor parameter; never a chart coordinate


class QuadratureError(ArithmeticError):
    def __init__(self, history):
        self.history = history
        super().__init__(f"quadrature did not converge; Richardson estimates: {history}")


class PreconditionError(ValueError):
    """Input outside the regime where the flow reduction is valid."""


class FlowSingularityError(ArithmeticError):
    def __init__(self, step: int, t: float, c: float):
        self.step, self.t, self.c = step, t, c
        super().__init__(f"conformal factor reached c={c:.6g} <= 0 at step {step} (t={t:.6g})")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("REXTFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    k = _threads()
    if k == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, items))  # order preserved


# ---------------------------------------------------------------------------
# quadrature


def _density(g: TensorField, pts: np.ndarray) -> np.ndarray:
    G = evaluate_on(g, pts)
    return np.sqrt(np.abs(np.linalg.det(G)))


def integrate(
    g: TensorField,
    f: Expr | None = None,
    domain=None,
    tol: float = 1e-6,
    start: int = 2,
    max_points: int = 2_000_000,
    chunk: int = 200_000,
) -> tuple[float, list[float]]:
    """∫ f dμ_g over a coordinate box by the midpoint rule with Richardson refinement.

    The grid is doubled per axis until two successive extrapolants
    (4 M_2N − M_N)/3 differ by less than ``tol * max(1, |value|)``.
    Returns ``(value, history)``; raises :class:`QuadratureError` otherwise.
    """
    chart = g.chart
    dom = chart.domain if domain is None else tuple(tuple(map(float, d)) for d in domain)
    d = chart.dim
    lo = np.array([a for a, _ in dom])
    hi = np.array([b for _, b in dom])
    cell = np.prod(hi - lo)

    # exact shortcuts: vanishing integrand, or constant integrand and density
    if f is not None and is_zero(simplify(f)):
        return 0.0, [0.0]
    det = simplify(determinant(g))
    if isinstance(det, Const) and (f is None or isinstance(simplify(f), Const)):
        val = math.sqrt(abs(det.value)) * float(cell) * (1.0 if f is None else simplify(f).value)
        return val, [val]

    def midpoint(N: int) -> float:
        axes = [lo[k] + (np.arange(N) + 0.5) * (hi[k] - lo[k]) / N for k in range(d)]
        total = 0.0
        count = N**d
        for start_i in range(0, count, chunk):
            flat = np.arange(start_i, min(count, start_i + chunk))
            idx = np.unravel_index(flat, (N,) * d)
            pts = np.stack([axes[k][idx[k]] for k in range(d)], axis=1)
            w = _density(g, pts)
            if f is not None:
                b = chart.bindings(pts)
                w = w * np.broadcast_to(evaluate_many([f], b)[0], w.shape)
            total += float(np.sum(w))
        return total * cell / count

    history: list[float] = []
    N = start
    prev_m = midpoint(N)
    while (2 * N) ** d <= max_points:
        m = midpoint(2 * N)
        est = (4.0 * m - prev_m) / 3.0
        history.append(est)
        if len(history) >= 2 and abs(history[-1] - history[-2]) < tol * max(1.0, abs(est)):
            return est, history
        prev_m, N = m, 2 * N
    raise QuadratureError(history)


def volume(g: TensorField, domain=None, tol: float = 1e-6) -> float:
    return integrate(g, None, domain, tol)[0]


def s_functional(
    g: TensorField,
    mode: str = "average",
    value: float = 0.0,
    R_scalar: Expr | None = None,
    domain=None,
    tol: float = 1e-6,
) -> float:
    """Normalising scalar S.

    ``constant``: the given value.  ``average``: ∫R dμ / ∫dμ.
    ``paper_volume``: V(g)^{-(n-2)/n}.
    """
    if mode == "constant":
        return float(value)
    if mode == "paper_volume":
        n = g.dim
        return volume(g, domain, tol) ** (-(n - 2) / n)
    if mode == "average":
        if R_scalar is None:
            R_scalar = curvature_bundle(g).R_scalar
        num = integrate(g, R_scalar, domain, tol)[0]
        return num / volume(g, domain, tol)
    raise ValueError(f"unknown S mode {mode!r}; expected one of {S_MODES}")


def yamabe_velocity(g: TensorField, S: float, R_scalar: Expr) -> TensorField:
    """(S − R) g, pointwise."""
    factor = R_scalar * -1.0 + float(S)
    return g.map(lambda e: mul(factor, e), name="velocity")


# ---------------------------------------------------------------------------
# conformal-factor ODE


def rk4(f, y0, t_end: float, steps: int):
    """Classical fixed-step RK4; returns (t grid, states) with states[0] = y0.

    ``f(t, y)`` may raise to abort; stages are evaluated in order.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    h = t_end / steps
    y = np.asarray(y0, dtype=float)
    ts = np.linspace(0.0, t_end, steps + 1)
    ys = [y.copy()]
    for k in range(steps):
        t = ts[k]
        k1 = f(t, y, k)
        k2 = f(t + h / 2, y + h / 2 * k1, k)
        k3 = f(t + h / 2, y + h / 2 * k2, k)
        k4 = f(t + h, y + h * k3, k)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys.append(y.copy())
    return ts, np.array(ys)


@dataclass
class ConformalTrace:
    """c(t) along g(t) = c(t) g0 with R(t) = R0/c and I(t) = ∫(S − R) dt."""

    t: np.ndarray
    c: np.ndarray
    R: np.ndarray
    S: np.ndarray
    integral: np.ndarray
    R0: float
    n: int


def _s_of_c(mode: str, value: float, R0: float, n: int, V0: float | None):
    if mode == "constant":
        return lambda c: float(value)
    if mode == "average":
        return lambda c: R0 / c
    if mode == "paper_volume":
        if V0 is None:
            raise ValueError("paper_volume mode needs the initial volume")
        # V(c g0) = c^{n/2} V0
        return lambda c: (c ** (n / 2) * V0) ** (-(n - 2) / n)
    raise ValueError(f"unknown S mode {mode!r}")


def integrate_conformal(
    R0: float,
    n: int,
    t_end: float,
    steps: int,
    s_mode: str = "constant",
    s_value: float = 0.0,
    V0: float | None = None,
) -> ConformalTrace:
    """RK4 for c' = (S(c) − R0/c) c together with I' = S(c) − R0/c."""
    S = _s_of_c(s_mode, s_value, R0, n, V0)

    def rhs(t, y, k):
        c = y[0]
        if not c > 0:
            raise FlowSingularityError(k, t, c)
        a = S(c) - R0 / c
        return np.array([a * c, a])

    ts, ys = rk4(rhs, [1.0, 0.0], t_end, steps)
    c = ys[:, 0]
    bad = np.flatnonzero(~(c > 0))
    if bad.size:
        k = int(bad[0])
        raise FlowSingularityError(k, float(ts[k]), float(c[k]))
    return ConformalTrace(ts, c, R0 / c, np.array([S(x) for x in c]), ys[:, 1], float(R0), n)


def self_convergence(R0: float, n: int, t_end: float, steps: int, s_mode="constant", s_value=0.0, V0=None):
    """Errors of RK4 at ``steps`` and ``2*steps`` against a run 10× finer than the latter.

    Returns ``(err_coarse, err_fine, ratio)``; the ratio is ≈16 for a
    fourth-order method.
    """
    ref = integrate_conformal(R0, n, t_end, 20 * steps, s_mode, s_value, V0)
    out = []
    for m in (steps, 2 * steps):
        tr = integrate_conformal(R0, n, t_end, m, s_mode, s_value, V0)
        stride = (20 * steps) // m
        out.append(float(np.max(np.abs(tr.c - ref.c[::stride]))))
    ratio = out[0] / out[1] if out[1] > 0 else math.inf
    return out[0], out[1], ratio


def scalar_variation(R_scalar: Expr, chart: Chart, points: np.ndarray) -> tuple[float, float]:
    """(mean, max − min) of R over the sample points."""
    vals = np.broadcast_to(evaluate_many([R_scalar], chart.bindings(points))[0], (len(points),))
    return float(np.mean(vals)), float(np.max(vals) - np.min(vals))


def _require_constant_R(bundle: CurvatureBundle, points, tol=1e-6) -> float:
    R0, spread = scalar_variation(bundle.R_scalar, bundle.chart, points)
    if spread > tol:
        raise PreconditionError(
            f"scalar curvature is not spatially constant (max - min = {spread:.3g} > {tol:g})"
        )
    return R0


# ---------------------------------------------------------------------------
# evolution identities


def _kind_tensor(kind: str, b: CurvatureBundle) -> TensorField:
    if kind == "metric_inverse":
        return b.g_inv
    if kind == "riemann":
        return b.R_down
    if kind == "ricci":
        return b.Ric
    if kind == "scalar":
        return b.scalar_field()
    if kind == "concircular":
        return b.concircular()
    if kind == "conharmonic":
        return b.conharmonic()
    if kind == "weyl":
        return b.weyl()
    raise ValueError(f"unknown identity kind {kind!r}; expected one of {KINDS}")


def _rhs_sign(kind: str) -> float:
    if kind in ("metric_inverse", "scalar"):
        return -1.0
    if kind == "ricci":
        return 0.0
    return 1.0


def applicable_kinds(n: int) -> tuple[str, ...]:
    return KINDS if n >= 3 else tuple(k for k in KINDS if k not in ("conharmonic", "weyl"))


def _scaled(g0: TensorField, factor) -> TensorField:
    return g0.map(lambda e: mul(factor, e), name="g")


def evolution_identity_check(kind: str, g0: TensorField, S: float, h: float, points, bundle=None) -> float:
    """Max relative deviation of the central difference of ``kind`` from the flow law.

    g(±h) = (1 ± (S − R0) h) g0; each side runs the full curvature pipeline.
    The deviation is normalised by the larger of max|T| and max|RHS|, or by
    the curvature scale max(|R_down|, |g|) when the tensor itself vanishes.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown identity kind {kind!r}; expected one of {KINDS}")
    if not h > 0:
        raise ValueError("h must be positive")
    pts = np.atleast_2d(points)
    b0 = bundle or curvature_bundle(g0)
    R0 = _require_constant_R(b0, pts)
    a = float(S) - R0
    bp = curvature_bundle(_scaled(g0, 1.0 + a * h))
    bm = curvature_bundle(_scaled(g0, 1.0 - a * h))
    T0 = evaluate_on(_kind_tensor(kind, b0), pts)
    Tp = evaluate_on(_kind_tensor(kind, bp), pts)
    Tm = evaluate_on(_kind_tensor(kind, bm), pts)
    fd = (Tp - Tm) / (2.0 * h)
    rhs = _rhs_sign(kind) * a * T0
    num = float(np.max(np.abs(fd - rhs))) if fd.size else 0.0
    if num == 0.0:
        return 0.0
    scale = max(float(np.max(np.abs(T0))), float(np.max(np.abs(rhs))))
    curv_scale = max(float(np.max(np.abs(evaluate_on(b0.R_down, pts)))), float(np.max(np.abs(evaluate_on(g0, pts)))))
    if scale < 1e-9 * curv_scale:
        scale = curv_scale
    return num / scale


@dataclass
class EvolutionReport:
    """Per-kind relative residuals of the seven flow identities."""

    residuals: dict
    tolerance: float
    h: float
    S: float
    R0: float
    skipped: tuple = ()

    @property
    def passed(self) -> dict:
        return {k: bool(math.isfinite(v) and v >= 0 and v <= self.tolerance) for k, v in self.residuals.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def evolution_report(g0: TensorField, S: float, h: float, points, tolerance: float = 1e-5, kinds=None) -> EvolutionReport:
    pts = np.atleast_2d(points)
    b0 = curvature_bundle(g0)
    R0 = _require_constant_R(b0, pts)
    avail = applicable_kinds(g0.dim)
    kinds = avail if kinds is None else tuple(kinds)
    run = [k for k in kinds if k in avail]
    skipped = tuple(k for k in kinds if k not in avail)
    res = _pmap(lambda k: evolution_identity_check(k, g0, S, h, pts, b0), run)
    return EvolutionReport(dict(zip(run, res)), tolerance, h, float(S), R0, skipped)


# ---------------------------------------------------------------------------
# λ-laws


@dataclass
class LambdaTrace:
    """λ(t) measured from curvature along the flow vs λ0·exp(−∫(S − R) dt)."""

    t: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    predicted: np.ndarray
    lam0: float
    R: np.ndarray
    fit_residual: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.lam - self.predicted)))

    @property
    def product_deviation(self) -> float:
        """max |λ(t) c(t) − λ0|."""
        return float(np.max(np.abs(self.lam * self.c - self.lam0)))


def _fit(target: np.ndarray, basis: np.ndarray) -> tuple[float, float]:
    """Least-squares λ with target ≈ λ·basis; returns (λ, max residual)."""
    den = float(np.sum(basis * basis))
    if den == 0.0:
        raise PreconditionError("degenerate basis tensor")
    lam = float(np.sum(target * basis)) / den
    return lam, float(np.max(np.abs(target - lam * basis)))


def _flow_trace(g0, bundle, points, s_mode, s_value, t_end, steps, domain):
    R0 = _require_constant_R(bundle, points)
    V0 = volume(g0, domain) if s_mode == "paper_volume" else None
    return integrate_conformal(R0, g0.dim, t_end, steps, s_mode, s_value, V0)


def _lambda_along(trace, points, chart, target_field, basis_field):
    """λ(t_k) by least squares over sample points, evaluating the parametric fields at σ = c(t_k)."""
    pts = np.atleast_2d(points)
    lam, worst = [], 0.0
    for c in trace.c:
        extra = {SCALE.name: float(c)}
        T = evaluate_on(target_field, pts, extra)
        B = evaluate_on(basis_field, pts, extra)
        l, r = _fit(T, B)
        lam.append(l)
        worst = max(worst, r)
    return np.array(lam), worst


def einstein_lambda_check(
    g0: TensorField,
    points,
    t_end: float,
    steps: int,
    s_mode: str = "constant",
    s_value: float = 0.0,
    domain=None,
    tol: float = 1e-8,
) -> LambdaTrace:
    """Ric(g(t)) = λ(t) g(t) along the integrated flow vs λ0 e^{−∫(S−R)dt}."""
    pts = np.atleast_2d(points)
    b0 = curvature_bundle(g0)
    lam0, res0 = _fit(evaluate_on(b0.Ric, pts), evaluate_on(g0, pts))
    if res0 > tol:
        raise PreconditionError(f"metric is not Einstein (max |Ric - λg| = {res0:.3g})")
    trace = _flow_trace(g0, b0, pts, s_mode, s_value, t_end, steps, domain)
    gs = _scaled(g0, SCALE)
    bs = curvature_bundle(gs)
    lam, worst = _lambda_along(trace, pts, g0.chart, bs.Ric, gs)
    return LambdaTrace(trace.t, trace.c, lam, lam0 * np.exp(-trace.integral), lam0, trace.R, worst)


def constant_curvature_check(
    g0: TensorField,
    points,
    t_end: float,
    steps: int,
    s_mode: str = "constant",
    s_value: float = 0.0,
    domain=None,
    tol: float = 1e-8,
) -> LambdaTrace:
    """R_down(g(t)) = λ(t)(g_il g_jk − g_ik g_jl) along the flow vs the exponential law."""
    pts = np.atleast_2d(points)
    b0 = curvature_bundle(g0)
    lam0, res0 = _fit(evaluate_on(b0.R_down, pts), evaluate_on(space_form_pattern(g0), pts))
    if res0 > tol:
        raise PreconditionError(f"metric is not a space form (max deviation {res0:.3g})")
    trace = _flow_trace(g0, b0, pts, s_mode, s_value, t_end, steps, domain)
    gs = _scaled(g0, SCALE)
    bs = curvature_bundle(gs)
    lam, worst = _lambda_along(trace, pts, g0.chart, bs.R_down, space_form_pattern(gs))
    return LambdaTrace(trace.t, trace.c, lam, lam0 * np.exp(-trace.integral), lam0, trace.R, worst)


# ---------------------------------------------------------------------------
# stationarity on modified Riemann extensions


@dataclass
class StationarityReport:
    S: float
    max_velocity: float
    max_step_change: float
    max_scalar: float
    dt: float

    @property
    def stationary(self) -> bool:
        return self.max_velocity <= 1e-8 and self.max_step_change <= 1e-10


def stationarity_check(spec, points, s_mode: str = "average", s_value: float = 0.0, dt: float = 1e-3) -> StationarityReport:
    """Yamabe velocity of ḡ and the change after one RK4 step of dg/dt = (S − R) g."""
    from .extension import build_metric, direct_bundle

    pts = np.atleast_2d(points)
    g = build_metric(spec)
    b = direct_bundle(spec)
    S = s_functional(g, s_mode, s_value, b.R_scalar)
    v = evaluate_on(yamabe_velocity(g, S, b.R_scalar), pts)
    gv = evaluate_on(g, pts)
    Rv = np.broadcast_to(evaluate_many([b.R_scalar], g.chart.bindings(pts))[0], (len(pts),))
    a = (S - Rv)[:, None, None] * dt
    growth = a + a**2 / 2 + a**3 / 6 + a**4 / 24  # one RK4 step of y' = (S - R) y, minus identity
    return StationarityReport(
        float(S),
        float(np.max(np.abs(v))),
        float(np.max(np.abs(growth * gv))),
        float(np.max(np.abs(Rv))),
        dt,
    )


@dataclass(frozen=True)
class FlowScenario:
    """Geometry plus S mode, time grid and finite-difference step."""

    g: TensorField
    s_mode: str = "average"
    s_value: float = 0.0
    t_end: float = 0.1
    steps: int = 100
    h: float = 1e-4
    domain: tuple | None = None

    def __post_init__(self):
        if self.s_mode not in S_MODES:
            raise ValueError(f"unknown S mode {self.s_mode!r}; expected one of {S_MODES}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if not self.h > 0:
            raise ValueError("h must be positive")
