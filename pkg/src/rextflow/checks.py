"""Named verification checks runnable from scenarios.

Each check takes a :class:`~rextflow.scenario.Scenario` and returns a list
of :class:`CheckResult`.  Residual checks pass when ``max_residual <=
tolerance``; band checks (convergence ratios) pass when the measured value
lies inside ``[lo, hi]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import corpus_check
from .curvature import curvature_bundle, space_form_pattern, weyl_identity_residual
from .expr import Chart, evaluate_many
from .extension import compare_with_direct, random_spec
from .flow import (
    KINDS as FLOW_KINDS,
    applicable_kinds,
    constant_curvature_check,
    einstein_lambda_check,
    evolution_identity_check,
    integrate_conformal,
    s_functional,
    scalar_variation,
    self_convergence,
    stationarity_check,
    _pmap,
)
from .tensor import check_nonsingular, evaluate_on

__all__ = ["CheckResult", "CHECKS", "CRITERIA", "run_checks", "default_checks", "exact_conformal"]


@dataclass
class CheckResult:
    name: str
    max_residual: float | None
    tolerance: float | tuple
    applicable: bool = True
    note: str = ""

    @property
    def passed(self) -> bool:
        if not self.applicable:
            return True
        v = self.max_residual
        if v is None or not math.isfinite(v):
            return False
        if isinstance(self.tolerance, tuple):
            lo, hi = self.tolerance
            return lo <= v <= hi
        return v <= self.tolerance

    def as_dict(self) -> dict:
        tol = list(self.tolerance) if isinstance(self.tolerance, tuple) else self.tolerance
        d = {"name": self.name, "max_residual": self.max_residual, "tolerance": tol, "pass": self.passed}
        if not self.applicable:
            d["applicable"] = False
        if self.note:
            d["note"] = self.note
        return d


def _pts(scen, label):
    return scen.chart.sample(scen.samples, scen.rng(label))


def _tol(default, override):
    return default if override is None else override


def _maxabs(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


def _bundle(scen):
    cache = scen.__dict__.setdefault("_cache", {})
    if "bundle" not in cache:
        g = scen.geometry
        check_nonsingular(g, g.chart.sample(scen.samples, scen.rng("nonsingular")))
        cache["bundle"] = curvature_bundle(g)
    return cache["bundle"]


def _need_geometry(scen, name):
    if scen.geometry is None:
        raise ValueError(f"check {name!r} needs a metric or extension block")


# ---------------------------------------------------------------------------
# curvature


def check_flat_zero(scen, tol=None):
    _need_geometry(scen, "flat_zero")
    b = _bundle(scen)
    pts = _pts(scen, "flat_zero")
    n = b.dim
    out = [
        ("flat_gamma", b.gamma),
        ("flat_riemann", b.R_down),
        ("flat_ricci", b.Ric),
        ("flat_concircular", b.concircular() if n >= 2 else None),
        ("flat_conharmonic", b.conharmonic() if n >= 3 else None),
        ("flat_weyl", b.weyl() if n >= 3 else None),
    ]
    res = []
    for name, T in out:
        if T is None:
            res.append(CheckResult(name, None, _tol(1e-12, tol), False, f"undefined for n={n}"))
        else:
            res.append(CheckResult(name, _maxabs(evaluate_on(T, pts)), _tol(1e-12, tol)))
    return res


def check_scalar_value(scen, tol=None):
    _need_geometry(scen, "scalar_value")
    if "scalar" not in scen.expect:
        raise ValueError("check 'scalar_value' needs expect.scalar")
    b = _bundle(scen)
    pts = _pts(scen, "scalar_value")
    v = np.broadcast_to(evaluate_many([b.R_scalar], scen.chart.bindings(pts))[0], (len(pts),))
    return [CheckResult("scalar_value", _maxabs(v - scen.expect["scalar"]), _tol(1e-8, tol))]


def check_bianchi(scen, tol=None):
    _need_geometry(scen, "bianchi")
    b = _bundle(scen)
    R = evaluate_on(b.R_up, _pts(scen, "bianchi"))
    cyc = R + np.transpose(R, (0, 1, 3, 4, 2)) + np.transpose(R, (0, 1, 4, 2, 3))
    return [CheckResult("bianchi", _maxabs(cyc), _tol(1e-9, tol))]


def _fit(target, basis):
    den = float(np.sum(basis * basis))
    lam = float(np.sum(target * basis)) / den if den else 0.0
    return lam, _maxabs(target - lam * basis)


def check_space_form(scen, tol=None):
    _need_geometry(scen, "space_form")
    b = _bundle(scen)
    pts = _pts(scen, "space_form")
    lam, r = _fit(evaluate_on(b.R_down, pts), evaluate_on(space_form_pattern(b.g), pts))
    out = [CheckResult("space_form", r, _tol(1e-9, tol), note=f"lambda={lam:.12g}")]
    if "lambda" in scen.expect:
        out.append(CheckResult("space_form_lambda", abs(lam - scen.expect["lambda"]), _tol(1e-9, tol)))
    return out


def check_einstein(scen, tol=None):
    _need_geometry(scen, "einstein")
    b = _bundle(scen)
    pts = _pts(scen, "einstein")
    lam, r = _fit(evaluate_on(b.Ric, pts), evaluate_on(b.g, pts))
    return [CheckResult("einstein", r, _tol(1e-9, tol), note=f"lambda={lam:.12g}")]


def check_weyl_relation(scen, tol=None):
    _need_geometry(scen, "weyl_relation")
    b = _bundle(scen)
    n = b.dim
    if n < 3:
        return [CheckResult("weyl_relation", None, _tol(1e-9, tol), False, f"undefined for n={n}")]
    pts = _pts(scen, "weyl_relation")
    W, L, C = b.weyl(), b.conharmonic(), b.concircular()
    out = [CheckResult("weyl_relation", _maxabs(evaluate_on(weyl_identity_residual(W, L, C, b.R_down, n), pts)), _tol(1e-9, tol))]
    if n == 3:
        out.append(CheckResult("weyl_vanishes_3d", _maxabs(evaluate_on(W, pts)), _tol(1e-9, tol)))
    return out


# ---------------------------------------------------------------------------
# extension


def _extension_results(spec, pts, label, tol):
    r = compare_with_direct(spec, pts)
    return [
        CheckResult(f"{label}inverse", r["inverse"], _tol(1e-7, tol)),
        CheckResult(f"{label}connection", r["connection"], _tol(1e-7, tol)),
        CheckResult(f"{label}curvature", r["curvature"], _tol(1e-7, tol)),
        CheckResult(f"{label}ricci", r["ricci"], _tol(1e-7, tol)),
        CheckResult(f"{label}scalar", max(r["scalar_closed"], r["scalar_direct"]), _tol(1e-8, tol)),
    ]


def check_extension_oracle(scen, tol=None):
    if scen.extension is None:
        raise ValueError("check 'extension_oracle' needs an extension block")
    pts = scen.extension.extended.sample(scen.samples, scen.rng("extension_oracle"))
    return _extension_results(scen.extension, pts, "extension_", tol)


def _stationarity_results(spec, pts, mode, value, label, tol):
    rep = stationarity_check(spec, pts, mode, value)
    return [
        CheckResult(f"{label}velocity", rep.max_velocity, _tol(1e-8, tol), note=f"S={rep.S:.12g}"),
        CheckResult(f"{label}step", rep.max_step_change, _tol(1e-10, tol)),
    ]


def check_stationarity(scen, tol=None):
    if scen.extension is None:
        raise ValueError("check 'stationarity' needs an extension block")
    pts = scen.extension.extended.sample(scen.samples, scen.rng("stationarity"))
    mode = scen.flow.get("s_mode", "average")
    return _stationarity_results(scen.extension, pts, mode, scen.flow.get("s_value", 0.0), "stationarity_", tol)


# ---------------------------------------------------------------------------
# flow


def _flow_params(scen):
    f = scen.flow
    return (
        f.get("s_mode", "average"),
        f.get("s_value", 0.0),
        f.get("t_end", 0.1),
        int(f.get("steps", 100)),
        f.get("h", 1e-4),
    )


def _flow_S(scen):
    """Spatially constant S for the identity checks (mode evaluated on g0)."""
    mode, value, *_ = _flow_params(scen)
    if mode == "constant":
        return value
    b = _bundle(scen)
    R0, _ = scalar_variation(b.R_scalar, scen.chart, _pts(scen, "flow_S"))
    if mode == "average":
        return R0
    return s_functional(scen.geometry, mode, value, b.R_scalar)


def check_s_average(scen, tol=None):
    _need_geometry(scen, "s_average")
    if "scalar" not in scen.expect:
        raise ValueError("check 's_average' needs expect.scalar")
    b = _bundle(scen)
    S = s_functional(scen.geometry, "average", R_scalar=b.R_scalar)
    return [CheckResult("s_average", abs(S - scen.expect["scalar"]), _tol(1e-6, tol))]


def check_evolution(scen, tol=None):
    _need_geometry(scen, "evolution")
    g = scen.geometry
    b = _bundle(scen)
    pts = _pts(scen, "evolution")
    S = _flow_S(scen)
    h = _flow_params(scen)[4]
    avail = applicable_kinds(g.dim)
    res = dict(zip(avail, _pmap(lambda k: evolution_identity_check(k, g, S, h, pts, b), avail)))
    out = []
    for k in FLOW_KINDS:
        if k in res:
            out.append(CheckResult(f"evolution_{k}", res[k], _tol(1e-5, tol)))
        else:
            out.append(CheckResult(f"evolution_{k}", None, _tol(1e-5, tol), False, f"undefined for n={g.dim}"))
    return out


def check_evolution_order(scen, tol=None):
    """Residual ratio r(h) / r(h/4) per kind, expected in [3, 5]."""
    _need_geometry(scen, "evolution_order")
    g = scen.geometry
    b = _bundle(scen)
    pts = _pts(scen, "evolution")
    S = _flow_S(scen)
    h = _flow_params(scen)[4]
    out = []
    for k in FLOW_KINDS:
        if k not in applicable_kinds(g.dim):
            out.append(CheckResult(f"evolution_order_{k}", None, (3.0, 5.0), False, f"undefined for n={g.dim}"))
            continue
        r1 = evolution_identity_check(k, g, S, h, pts, b)
        r2 = evolution_identity_check(k, g, S, h / 2, pts, b)
        r4 = evolution_identity_check(k, g, S, h / 4, pts, b)
        ratio = r1 / r4 if r4 > 0 else (math.inf if r1 > 0 else math.nan)
        note = f"r(h)={r1:.3e} r(h/2)={r2:.3e} r(h/4)={r4:.3e}"
        out.append(CheckResult(f"evolution_order_{k}", ratio, (3.0, 5.0), note=note))
    return out


def exact_conformal(R0: float, s: float, t):
    """Closed-form c(t) for constant S = s."""
    t = np.asarray(t, dtype=float)
    if s == 0.0:
        return 1.0 - R0 * t
    return R0 / s + (1.0 - R0 / s) * np.exp(s * t)


def _R0(scen):
    b = _bundle(scen)
    R0, spread = scalar_variation(b.R_scalar, scen.chart, _pts(scen, "flow_R0"))
    if spread > 1e-6:
        raise ValueError(f"scalar curvature is not spatially constant (max - min = {spread:.3g})")
    return R0


def check_conformal(scen, tol=None):
    _need_geometry(scen, "conformal")
    mode, value, t_end, steps, _ = _flow_params(scen)
    R0 = _R0(scen)
    n = scen.geometry.dim
    if mode == "paper_volume":
        return [CheckResult("conformal_closed_form", None, _tol(1e-10, tol), False, "no closed form for paper_volume")]
    s = value if mode == "constant" else None
    tr = integrate_conformal(R0, n, t_end, steps, mode, value)
    exact = np.ones_like(tr.t) if s is None else exact_conformal(R0, s, tr.t)
    return [CheckResult("conformal_closed_form", _maxabs(tr.c - exact), _tol(1e-10, tol))]


def check_self_convergence(scen, tol=None):
    _need_geometry(scen, "self_convergence")
    mode, value, t_end, steps, _ = _flow_params(scen)
    R0 = _R0(scen)
    n = scen.geometry.dim
    # S = 0 or S = R0 makes the ODE exactly solvable by RK4; use a genuinely
    # exponential solution so the truncation error is visible.
    s = value if mode == "constant" and value not in (0.0, R0) else R0 + 1.0
    coarse = 8
    e1, e2, ratio = self_convergence(R0, n, t_end, coarse, "constant", s)
    return [CheckResult("self_convergence", ratio, (14.0, 18.0), note=f"S={s:g} errors {e1:.3e} -> {e2:.3e}")]


def _lambda_results(scen, fn, label, tol):
    _need_geometry(scen, label)
    mode, value, t_end, steps, _ = _flow_params(scen)
    pts = _pts(scen, label)
    tr = fn(scen.geometry, pts, t_end, steps, mode, value)
    out = [
        CheckResult(f"{label}_law", tr.max_deviation, _tol(1e-6, tol), note=f"lambda0={tr.lam0:.12g}"),
        CheckResult(f"{label}_product", tr.product_deviation, _tol(1e-8, tol)),
    ]
    if mode != "paper_volume":
        R0 = tr.R[0]
        exact = np.ones_like(tr.t) if mode == "average" else exact_conformal(R0, value, tr.t)
        out.append(CheckResult(f"{label}_closed_form", _maxabs(tr.lam - tr.lam0 / exact), _tol(1e-6, tol)))
    scen.__dict__.setdefault("_cache", {})[f"trace_{label}"] = tr
    return out


def check_lambda_einstein(scen, tol=None):
    return _lambda_results(scen, einstein_lambda_check, "lambda_einstein", tol)


def check_lambda_space_form(scen, tol=None):
    return _lambda_results(scen, constant_curvature_check, "lambda_space_form", tol)


def check_expr_corpus(scen, tol=None):
    r = corpus_check(200, scen.seed)
    return [
        CheckResult("expr_corpus_diff", r.max_diff_error, _tol(1e-6, tol), note=f"{r.evaluated_points} points, {r.skipped_points} skipped"),
        CheckResult("expr_corpus_roundtrip", float(len(r.roundtrip_failures)), 0.0),
    ]


# ---------------------------------------------------------------------------
# acceptance criteria, each composed from the checks above


def _builtin(name, seed):
    from .scenario import load

    return load(f"builtin:{name}").with_seed(seed)


def _prefixed(prefix, results):
    for r in results:
        r.name = f"{prefix}/{r.name}"
    return results


def criterion_1(scen, tol=None):
    out = []
    for name in ("flat2", "flat3"):
        out += _prefixed(f"criterion_1/{name}", check_flat_zero(_builtin(name, scen.seed)))
    return out


def criterion_2(scen, tol=None):
    out = []
    for name in ("sphere2", "sphere3", "hyperbolic2"):
        out += _prefixed(f"criterion_2/{name}", check_scalar_value(_builtin(name, scen.seed)))
    return out


def _criterion_specs():
    for seed, n in zip(range(5), (2, 3, 2, 3, 2)):
        chart = Chart(tuple("xyz"[:n]), ((-1.0, 1.0),) * n)
        yield seed, n, random_spec(chart, seed)


def criterion_3(scen, tol=None):
    out = []
    for seed, n, spec in _criterion_specs():
        pts = spec.extended.sample(100, np.random.default_rng([scen.seed, seed]))
        res = [r for r in _extension_results(spec, pts, "", None) if not r.name.endswith("scalar")]
        out += _prefixed(f"criterion_3/spec{seed}_n{n}", res)
    return out


def criterion_4(scen, tol=None):
    out = []
    for seed, n, spec in _criterion_specs():
        pts = spec.extended.sample(100, np.random.default_rng([scen.seed, seed, 4]))
        r = compare_with_direct(spec, pts)
        res = [CheckResult("scalar", max(r["scalar_closed"], r["scalar_direct"]), 1e-8)]
        res += _stationarity_results(spec, pts, "average", 0.0, "stationarity_", None)
        out += _prefixed(f"criterion_4/spec{seed}_n{n}", res)
    return out


def criterion_5(scen, tol=None):
    out = []
    for name in ("sphere2", "sphere3", "hyperbolic2"):
        s = _builtin(name, scen.seed)
        s.flow = dict(s.flow, s_mode="constant", s_value=0.0, h=1e-4)
        out += _prefixed(f"criterion_5/{name}", check_evolution(s) + check_evolution_order(s))
    return out


def criterion_6(scen, tol=None):
    out = _prefixed("criterion_6/random4", check_weyl_relation(_builtin("random4", scen.seed)))
    for name in ("sphere3", "flat3", "random3"):
        s = _builtin(name, scen.seed)
        out += _prefixed(f"criterion_6/{name}", [r for r in check_weyl_relation(s) if r.name == "weyl_vanishes_3d"])
    return out


def criterion_7(scen, tol=None):
    s = _builtin("sphere2", scen.seed)
    s.flow = dict(s.flow, s_mode="constant", s_value=0.0, t_end=0.1, steps=100)
    out = check_lambda_einstein(s) + check_lambda_space_form(s) + check_self_convergence(s)
    return _prefixed("criterion_7/sphere2", out)


def criterion_8(scen, tol=None):
    return _prefixed("criterion_8", check_expr_corpus(scen))


CHECKS = {
    "flat_zero": check_flat_zero,
    "scalar_value": check_scalar_value,
    "bianchi": check_bianchi,
    "space_form": check_space_form,
    "einstein": check_einstein,
    "weyl_relation": check_weyl_relation,
    "extension_oracle": check_extension_oracle,
    "stationarity": check_stationarity,
    "s_average": check_s_average,
    "evolution": check_evolution,
    "evolution_order": check_evolution_order,
    "conformal": check_conformal,
    "self_convergence": check_self_convergence,
    "lambda_einstein": check_lambda_einstein,
    "lambda_space_form": check_lambda_space_form,
    "expr_corpus": check_expr_corpus,
}

CRITERIA = {f"criterion_{k}": f for k, f in enumerate(
    (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8), start=1)}
CHECKS.update(CRITERIA)

GROUPS = {
    "curvature": {"flat_zero", "scalar_value", "bianchi", "space_form", "einstein", "weyl_relation"},
    "extend": {"extension_oracle", "stationarity"},
    "flow": {"s_average", "evolution", "evolution_order", "conformal", "self_convergence",
             "lambda_einstein", "lambda_space_form"},
}


def default_checks(command: str, scen) -> list[str]:
    """Checks a subcommand runs: the scenario's list filtered to the command's group."""
    names = list(scen.checks)
    if command in GROUPS:
        return [c for c in names if c in GROUPS[command]]
    return names


def run_checks(scen, names, tolerance=None):
    """Run named checks in order; returns (results, per-check seconds)."""
    import time

    results, timing = [], {}
    for name in names:
        if name not in CHECKS:
            raise KeyError(name)
        t0 = time.perf_counter()
        results += CHECKS[name](scen, tolerance)
        timing[name] = round(time.perf_counter() - t0, 6)
    return results, timing
