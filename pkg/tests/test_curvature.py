import math

import numpy as np
import pytest

from conftest import diag_metric
from rextflow.curvature import (
    christoffel,
    concircular,
    conharmonic,
    curvature_bundle,
    metric_inverse,
    space_form_pattern,
    weyl,
    weyl_identity_residual,
)
from rextflow.expr import Chart, evaluate, evaluate_many
from rextflow.scenario import random_metric
from rextflow.tensor import contract, contract_pair, evaluate_on


def _pts(g, k=100, seed=0):
    return g.chart.sample(k, np.random.default_rng(seed))


def _scalar(b, pts):
    return np.broadcast_to(evaluate_many([b.R_scalar], b.chart.bindings(pts))[0], (len(pts),))


def test_flat_everything_zero(flat3):
    b = curvature_bundle(flat3)
    for T in (b.gamma, b.R_up, b.R_down, b.Ric, b.concircular(), b.conharmonic(), b.weyl()):
        assert T.is_zero(), T.name
    assert weyl_identity_residual(b.weyl(), b.conharmonic(), b.concircular(), b.R_down, 3).is_zero()


def test_sphere_christoffel(sphere2):
    gam = christoffel(sphere2)
    for th in (0.3, 1.0, 2.5):
        v = {"th": th, "ph": 0.4}
        assert abs(evaluate(gam[0, 1, 1], v) + math.sin(th) * math.cos(th)) < 1e-14
        assert abs(evaluate(gam[1, 0, 1], v) - math.cos(th) / math.sin(th)) < 1e-14
        assert evaluate(gam[0, 0, 0], v) == 0.0


def test_hyperbolic_christoffel(hyperbolic2):
    gam = christoffel(hyperbolic2)
    for y in (0.5, 1.0, 1.7):
        v = {"x": 0.2, "y": y}
        assert abs(evaluate(gam[0, 0, 1], v) + 1 / y) < 1e-14
        assert abs(evaluate(gam[1, 0, 0], v) - 1 / y) < 1e-14
        assert abs(evaluate(gam[1, 1, 1], v) + 1 / y) < 1e-14


@pytest.mark.parametrize("name,R,lam", [("sphere2", 2.0, 1.0), ("sphere3", 6.0, 1.0), ("hyperbolic2", -2.0, -1.0)])
def test_space_forms(name, R, lam, request):
    g = request.getfixturevalue(name)
    b = curvature_bundle(g)
    pts = _pts(g)
    assert np.max(np.abs(_scalar(b, pts) - R)) <= 1e-8
    n = g.dim
    assert abs(R / (n * (n - 1)) - lam) < 1e-15
    pat = evaluate_on(space_form_pattern(g), pts)
    assert np.max(np.abs(evaluate_on(b.R_down, pts) - lam * pat)) <= 1e-8
    assert np.max(np.abs(evaluate_on(b.concircular(), pts))) <= 1e-9


def test_riemann_symmetries_and_bianchi():
    ch = Chart(("x", "y", "z"), ((-0.5, 0.5),) * 3)
    g = random_metric(ch, seed=11)
    b = curvature_bundle(g)
    pts = _pts(g, 30, 1)
    R = evaluate_on(b.R_down, pts)
    assert np.max(np.abs(R + np.swapaxes(R, 3, 4))) <= 1e-9
    assert np.max(np.abs(R + np.swapaxes(R, 1, 2))) <= 1e-9
    assert np.max(np.abs(R - np.transpose(R, (0, 3, 4, 1, 2)))) <= 1e-9
    Ru = evaluate_on(b.R_up, pts)
    cyc = Ru + np.transpose(Ru, (0, 1, 3, 4, 2)) + np.transpose(Ru, (0, 1, 4, 2, 3))
    assert np.max(np.abs(cyc)) <= 1e-9
    Ric = evaluate_on(b.Ric, pts)
    assert np.max(np.abs(Ric - np.swapaxes(Ric, 1, 2))) <= 1e-9
    # R = g^{jk} R_jk
    tr = contract(contract_pair(b.g_inv, 1, b.Ric, 0), 0, 1)
    assert np.max(np.abs(evaluate_on(tr, pts) - _scalar(b, pts))) <= 1e-9


def test_concircular_reevaluation():
    ch = Chart(("x", "y", "z"), ((-0.5, 0.5),) * 3)
    g = random_metric(ch, seed=2)
    b = curvature_bundle(g)
    pts = _pts(g, 50, 3)
    G, R, s = evaluate_on(g, pts), evaluate_on(b.R_down, pts), _scalar(b, pts)
    pat = np.einsum("pil,pjk->pijkl", G, G) - np.einsum("pjl,pik->pijkl", G, G)
    ref = R - (s / 6.0)[:, None, None, None, None] * pat
    assert np.max(np.abs(evaluate_on(b.concircular(), pts) - ref)) <= 1e-10


def test_concircular_trace_recovery():
    ch = Chart(("x", "y", "z"), ((-0.5, 0.5),) * 3)
    g = random_metric(ch, seed=5)
    b = curvature_bundle(g)
    pts = _pts(g, 20, 4)
    C = evaluate_on(b.concircular(), pts)
    gi = evaluate_on(b.g_inv, pts)
    tr = np.einsum("pil,pijkl->pjk", gi, C)
    ref = evaluate_on(b.Ric, pts) - (_scalar(b, pts) / 3)[:, None, None] * evaluate_on(g, pts)
    assert np.max(np.abs(tr - ref)) <= 1e-9


def test_conharmonic_reevaluation(sphere3):
    b = curvature_bundle(sphere3)
    pts = _pts(sphere3, 30, 5)
    G, R, Ric = evaluate_on(sphere3, pts), evaluate_on(b.R_down, pts), evaluate_on(b.Ric, pts)
    corr = (np.einsum("pjk,pil->pijkl", G, Ric) + np.einsum("pil,pjk->pijkl", G, Ric)
            - np.einsum("pik,pjl->pijkl", G, Ric) - np.einsum("pjl,pik->pijkl", G, Ric))
    assert np.max(np.abs(evaluate_on(b.conharmonic(), pts) - (R - corr))) <= 1e-10


def test_dimension_preconditions(sphere2):
    b = curvature_bundle(sphere2)
    with pytest.raises(ValueError):
        conharmonic(b.g, b.R_down, b.Ric)
    with pytest.raises(ValueError):
        weyl(b.g, b.R_down, b.Ric, b.R_scalar)
    one = Chart(("x",), ((0, 1),))
    g1 = diag_metric(one, ["1"])
    b1 = curvature_bundle(g1)
    with pytest.raises(ValueError):
        concircular(g1, b1.R_down, b1.R_scalar)


def test_weyl_vanishes_in_three_dimensions(sphere3):
    ch = Chart(("x", "y", "z"), ((-0.5, 0.5),) * 3)
    for g in (sphere3, random_metric(ch, seed=1), random_metric(ch, seed=9)):
        b = curvature_bundle(g)
        assert np.max(np.abs(evaluate_on(b.weyl(), _pts(g, 50, 6)))) <= 1e-9


def test_weyl_trace_free_and_relation_in_four_dimensions():
    ch = Chart(("x", "y", "z", "w"), ((-0.5, 0.5),) * 4)
    g = random_metric(ch, seed=4)
    b = curvature_bundle(g)
    pts = _pts(g, 50, 7)
    W = evaluate_on(b.weyl(), pts)
    gi = evaluate_on(b.g_inv, pts)
    assert np.max(np.abs(W)) > 1e-3
    for a, c in ((1, 4), (1, 3), (2, 3), (2, 4)):
        letters = "ijkl"
        spec = f"p{letters[a - 1]}{letters[c - 1]},pijkl->p" + "".join(x for k, x in enumerate(letters) if k + 1 not in (a, c))
        assert np.max(np.abs(np.einsum(spec, gi, W))) <= 1e-8
    res = weyl_identity_residual(b.weyl(), b.conharmonic(), b.concircular(), b.R_down, 4)
    assert np.max(np.abs(evaluate_on(res, pts))) <= 1e-9


def test_inverse_is_inverse():
    ch = Chart(("x", "y", "z", "w"), ((-0.5, 0.5),) * 4)
    g = random_metric(ch, seed=6)
    pts = _pts(g, 40, 8)
    prod = np.einsum("pij,pjk->pik", evaluate_on(g, pts), evaluate_on(metric_inverse(g), pts))
    assert np.max(np.abs(prod - np.eye(4))) <= 1e-12
