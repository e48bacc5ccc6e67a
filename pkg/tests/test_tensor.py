import numpy as np
import pytest

from conftest import diag_metric
from rextflow.curvature import christoffel, curvature_bundle, metric_inverse, riemann
from rextflow.expr import Chart, EvalDomainError, parse
from rextflow.tensor import (
    SingularMetricError,
    TensorEvalError,
    TensorField,
    VarianceError,
    antisymmetrize,
    check_nonsingular,
    check_symmetries,
    contract,
    contract_pair,
    covariant_derivative,
    delta,
    evaluate_at,
    evaluate_on,
    lower,
    permute,
    raise_index,
    symmetrize,
    tensor_product,
)

XYZ = Chart(("x", "y", "z"), ((-1, 1),) * 3)


def random_field(chart, variance, rng, name="T"):
    terms = ["x", "y*z", "sin(x*y)", "exp(z)", "x^2 - y", "1"]
    return TensorField.build(
        chart, variance,
        lambda *i: parse(f"{rng.integers(-3, 4)}*{terms[rng.integers(len(terms))]}", chart), name=name,
    )


def test_trace_of_identity():
    for n in (1, 2, 3, 4):
        ch = Chart(tuple(f"x{i}" for i in range(n)), ((0, 1),) * n)
        tr = contract(delta(ch), 0, 1)
        assert tr.rank == 0 and float(evaluate_on(tr, ch.sample(1, np.random.default_rng(0)))[0]) == n


def test_inverse_pair_contracts_to_delta(sphere2):
    gi = metric_inverse(sphere2)
    d = contract(tensor_product(gi, sphere2), 1, 2)
    pts = sphere2.chart.sample(30, np.random.default_rng(1))
    assert np.max(np.abs(evaluate_on(d, pts) - np.eye(2))) <= 1e-12


def test_ricci_by_contraction_on_sphere(sphere2):
    R = riemann(christoffel(sphere2))
    Ric = contract(R, 0, 2)
    pts = sphere2.chart.sample(30, np.random.default_rng(2))
    assert np.max(np.abs(evaluate_on(Ric, pts) - evaluate_on(sphere2, pts))) <= 1e-12


def test_contract_errors(sphere2):
    with pytest.raises(VarianceError):
        contract(sphere2, 0, 1)
    with pytest.raises(VarianceError):
        contract(delta(sphere2.chart), 0, 5)


def test_contract_is_linear(rng):
    A = random_field(XYZ, "udd", rng)
    B = random_field(XYZ, "udd", rng)
    pts = XYZ.sample(20, rng)
    lhs = evaluate_on(contract(A * 2.0 + B, 0, 2), pts)
    rhs = 2.0 * evaluate_on(contract(A, 0, 2), pts) + evaluate_on(contract(B, 0, 2), pts)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * (1 + np.max(np.abs(rhs)))


def test_lower_with_identity_is_noop(flat3, rng):
    T = random_field(XYZ, "udu", rng)
    pts = XYZ.sample(10, rng)
    for slot in (0, 2):
        assert np.array_equal(evaluate_on(lower(T, slot, flat3), pts), evaluate_on(T, pts))


def test_lower_then_raise(sphere2, rng):
    ch = sphere2.chart
    T = TensorField.build(ch, "udd", lambda k, i, j: parse(["th", "sin(ph)", "cos(th)*ph", "1"][(k + 2 * i + j) % 4], ch))
    pts = ch.sample(20, rng)
    back = raise_index(lower(T, 0, sphere2), 0, metric_inverse(sphere2))
    assert np.max(np.abs(evaluate_on(back, pts) - evaluate_on(T, pts))) <= 1e-10


def test_lower_wrong_variance(sphere2):
    with pytest.raises(VarianceError):
        lower(sphere2, 0, sphere2)
    with pytest.raises(VarianceError):
        lower(delta(sphere2.chart), 0, metric_inverse(sphere2))


def test_middle_lowering_gives_space_form(sphere2):
    """g_mk R^m_ijl on the unit sphere equals g_jk g_il - g_ij g_kl (λ = 1)."""
    R = riemann(christoffel(sphere2))
    mid = lower(R, 0, sphere2, position=2)
    pts = sphere2.chart.sample(30, np.random.default_rng(4))
    G = evaluate_on(sphere2, pts)
    pat = np.einsum("pjk,pil->pijkl", G, G) - np.einsum("pij,pkl->pijkl", G, G)
    assert np.max(np.abs(evaluate_on(mid, pts) - pat)) <= 1e-12


def test_metric_compatibility(sphere3):
    nabla_g = covariant_derivative(sphere3, christoffel(sphere3))
    pts = sphere3.chart.sample(20, np.random.default_rng(5))
    assert np.max(np.abs(evaluate_on(nabla_g, pts))) <= 1e-10


def test_constant_scalar_is_parallel(sphere2):
    f = TensorField.scalar(sphere2.chart, parse("4"))
    assert covariant_derivative(f, christoffel(sphere2)).is_zero()


def test_sphere_curvature_is_parallel(sphere2):
    R = riemann(christoffel(sphere2))
    pts = sphere2.chart.sample(20, np.random.default_rng(6))
    assert np.max(np.abs(evaluate_on(covariant_derivative(R, christoffel(sphere2)), pts))) <= 1e-10


def test_leibniz(sphere2, rng):
    ch = sphere2.chart
    gam = christoffel(sphere2)
    A = TensorField.build(ch, "u", lambda i: parse(["th*ph", "cos(ph)"][i], ch))
    B = TensorField.build(ch, "d", lambda i: parse(["sin(th)", "ph^2"][i], ch))
    lhs = covariant_derivative(tensor_product(A, B), gam)
    dA, dB = covariant_derivative(A, gam), covariant_derivative(B, gam)
    pts = ch.sample(20, rng)
    a, b = evaluate_on(A, pts), evaluate_on(B, pts)
    rhs = np.einsum("pci,pj->pcij", evaluate_on(dA, pts), b) + np.einsum("pi,pcj->pcij", a, evaluate_on(dB, pts))
    assert np.max(np.abs(evaluate_on(lhs, pts) - rhs)) <= 1e-9


def test_symmetrize_antisymmetric_is_zero(rng):
    T = antisymmetrize(random_field(XYZ, "dd", rng), 0, 1)
    assert np.max(np.abs(evaluate_on(symmetrize(T, 0, 1), XYZ.sample(10, rng)))) <= 1e-15


def test_declared_symmetries_hold(sphere3):
    b = curvature_bundle(sphere3)
    pts = sphere3.chart.sample(20, np.random.default_rng(8))
    for T in (b.g, b.g_inv, b.gamma, b.R_up, b.R_down, b.Ric):
        assert all(v <= 1e-10 for v in check_symmetries(T, pts).values()), T.name


def test_permute(rng):
    T = random_field(XYZ, "udd", rng)
    P = permute(T, (2, 0, 1))
    assert P.variance == ("d", "u", "d")
    assert P[0, 1, 2] is T[1, 2, 0]


def test_contract_pair_slots(rng):
    A = random_field(XYZ, "ud", rng)
    B = random_field(XYZ, "ud", rng)
    C = contract_pair(A, 1, B, 0)
    pts = XYZ.sample(5, rng)
    ref = np.einsum("pim,pmj->pij", evaluate_on(A, pts), evaluate_on(B, pts))
    assert np.max(np.abs(evaluate_on(C, pts) - ref)) <= 1e-12


def test_evaluate_at_examples(hyperbolic2, sphere2):
    I = evaluate_at(diag_metric(Chart(("a", "b"), ((0, 1), (0, 1))), ["1", "1"]), [0.3, 0.7])
    assert np.array_equal(I.values, np.eye(2))
    p = evaluate_at(sphere2, [0.1, 0.0])
    assert np.all(np.isfinite(p.values))
    G = evaluate_at(christoffel(hyperbolic2), [0.0, 1.0]).values
    assert G[0, 0, 1] == -1.0 and G[1, 0, 0] == 1.0 and G[1, 1, 1] == -1.0
    assert p.point == {"th": 0.1, "ph": 0.0}


def test_eval_error_carries_index_and_point(hyperbolic2):
    gam = christoffel(hyperbolic2)
    with pytest.raises(TensorEvalError) as info:
        evaluate_at(gam, [0.0, 0.0])
    assert isinstance(info.value.cause, EvalDomainError)
    assert len(info.value.index) == 3
    assert info.value.point is not None


def test_singular_metric_reported():
    ch = Chart(("x", "y"), ((-1, 1), (-1, 1)))
    g = diag_metric(ch, ["1", "x^2"])
    with pytest.raises(SingularMetricError) as info:
        check_nonsingular(g, [[0.5, 0.0], [0.0, 0.2]])
    assert info.value.point == {"x": 0.0, "y": 0.2}


def test_shape_validation():
    with pytest.raises(VarianceError):
        TensorField(XYZ, "dd", np.empty((2, 2), dtype=object))
    with pytest.raises(ValueError):
        TensorField.zeros(XYZ, "dq")
