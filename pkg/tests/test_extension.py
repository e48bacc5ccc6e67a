import numpy as np
import pytest

from rextflow.curvature import ricci, riemann
from rextflow.expr import ONE, ZERO, Chart, parse
from rextflow.extension import (
    ExtensionSpec,
    build_inverse_closed_form,
    build_metric,
    closed_form_connection,
    closed_form_curvature,
    compare_with_direct,
    extension_ricci_scalar,
    omega_degree,
    random_spec,
)
from rextflow.tensor import TensorField, evaluate_on

XY = Chart(("x", "y"), ((-1, 1), (-1, 1)))
XYZ = Chart(("x", "y", "z"), ((-1, 1),) * 3)


def flat_spec(chart, c=None):
    gam = TensorField.zeros(chart, "udd")
    cc = TensorField.zeros(chart, "dd") if c is None else c
    return ExtensionSpec(chart, gam, cc)


def test_flat_metric_block_form():
    spec = flat_spec(XY)
    pts = spec.extended.sample(10, np.random.default_rng(0))
    block = np.block([[np.zeros((2, 2)), np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    assert np.array_equal(evaluate_on(build_metric(spec), pts), np.broadcast_to(block, (10, 4, 4)))
    assert np.array_equal(evaluate_on(build_inverse_closed_form(spec), pts), np.broadcast_to(block, (10, 4, 4)))
    assert closed_form_connection(spec).field.is_zero()
    assert closed_form_curvature(spec).field.is_zero()


def test_extended_chart_names():
    spec = random_spec(XY, 0)
    assert spec.extended.coords == ("x", "y", "w_x", "w_y")
    assert spec.extended.domain[2:] == ((-1.0, 1.0), (-1.0, 1.0))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_metric_structure(seed):
    spec = random_spec(XYZ, seed)
    g = build_metric(spec)
    n = 3
    for i in range(n):
        for j in range(n):
            assert g[n + i, n + j] is ZERO
            assert g[i, n + j] is (ONE if i == j else ZERO)
            assert g[n + j, i] is g[i, n + j]
    om = [s for s in spec.omegas]
    assert all(omega_degree(e, om) <= 1 for e in g.components.flat)
    inv = build_inverse_closed_form(spec)
    pts = spec.extended.sample(100, np.random.default_rng(seed))
    gv, iv = evaluate_on(g, pts), evaluate_on(inv, pts)
    assert np.max(np.abs(np.einsum("pij,pjk->pik", gv, iv) - np.eye(2 * n))) <= 1e-12
    # fiber-fiber inverse block is minus the base-base metric block
    assert np.max(np.abs(iv[:, n:, n:] + gv[:, :n, :n])) <= 1e-12


def test_vanishing_component_classes():
    spec = random_spec(XY, 3)
    conn = closed_form_connection(spec)
    assert all(e is ZERO for e in conn.block("..*").flat)  # Γ̄^k_{i j*}
    assert all(e is ZERO for e in conn.block(".*.").flat)  # Γ̄^k_{i* j}
    assert all(e is ZERO for e in conn.block("***").flat)  # Γ̄^{k*}_{i* j*}
    Ric, _ = extension_ricci_scalar(spec)
    assert all(e is ZERO for e in Ric.block("**").flat)
    assert all(e is ZERO for e in Ric.block("*.").flat)


@pytest.mark.parametrize("seed,chart", [(0, XY), (1, XYZ), (2, XY), (3, XYZ), (4, XY)])
def test_closed_forms_match_direct_pipeline(seed, chart):
    spec = random_spec(chart, seed)
    pts = spec.extended.sample(100, np.random.default_rng(100 + seed))
    r = compare_with_direct(spec, pts)
    for key in ("inverse", "connection", "curvature", "ricci"):
        assert r[key] <= 1e-7, key
    assert r["scalar_closed"] <= 1e-8 and r["scalar_direct"] <= 1e-8
    assert r["middle_lowered_fiber"] <= 1e-9


def test_verbatim_tables_do_not_match():
    """The ω-parts as typeset disagree with the direct pipeline; the corrected ones agree."""
    spec = random_spec(XY, 0)
    pts = spec.extended.sample(50, np.random.default_rng(9))
    lit = compare_with_direct(spec, pts, classical=True)
    assert lit["connection"] > 1e-3
    assert lit["curvature"] > 1e-3


def test_ricci_table_for_metric_connection():
    from conftest import diag_metric
    from rextflow.curvature import christoffel

    ch = Chart(("x", "y"), ((-1, 1), (0.5, 2)))
    g = diag_metric(ch, ["1/y^2", "1/y^2"])
    spec = ExtensionSpec(ch, christoffel(g), TensorField.zeros(ch, "dd"))
    Ric, R = extension_ricci_scalar(spec)
    pts = spec.extended.sample(30, np.random.default_rng(3))
    base_ric = evaluate_on(ricci(riemann(spec.gamma)), pts[:, :2])
    assert np.max(np.abs(evaluate_on(Ric.field, pts)[:, :2, :2] - 2 * base_ric)) <= 1e-12
    assert R is ZERO or np.max(np.abs(evaluate_on(TensorField.scalar(spec.extended, R), pts))) <= 1e-8


def test_curvature_omega_affine():
    spec = random_spec(XY, 5)
    om = list(spec.omegas)
    R = closed_form_curvature(spec).field
    assert all(omega_degree(e, om) <= 1 for e in R.components.flat)


def test_spec_validation():
    gam = TensorField.build(XY, "udd", lambda k, i, j: parse("x", XY) if (i, j) == (0, 1) else ZERO)
    with pytest.raises(ValueError):
        ExtensionSpec(XY, gam, TensorField.zeros(XY, "dd"))
    c = TensorField.build(XY, "dd", lambda i, j: parse("y", XY) if (i, j) == (1, 0) else ZERO)
    with pytest.raises(ValueError):
        ExtensionSpec(XY, TensorField.zeros(XY, "udd"), c)
    with pytest.raises(ValueError):
        ExtensionSpec(XY, TensorField.zeros(XY, "ddd"), c)

