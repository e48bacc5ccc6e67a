"""Tensor fields with expression components and tracked variance.

Components are stored densely in a numpy object array of shape ``(n,) * rank``.
Variance is a tuple of ``"u"`` (contravariant) / ``"d"`` (covariant) flags, one
per slot, and every operation checks it; nothing coerces an index silently.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .expr import (
    ONE,
    ZERO,
    Chart,
    EvalDomainError,
    Expr,
    add,
    diff,
    evaluate_many,
    mul,
    simplify,
)

__all__ = [
    "TensorField",
    "PointTensor",
    "VarianceError",
    "TensorEvalError",
    "SingularMetricError",
    "check_nonsingular",
    "delta",
    "tensor_product",
    "contract",
    "contract_pair",
    "lower",
    "raise_index",
    "permute",
    "symmetrize",
    "antisymmetrize",
    "partial_derivative",
    "covariant_derivative",
    "evaluate_at",
    "evaluate_on",
    "check_symmetries",
]

UP, DOWN = "u", "d"


class VarianceError(ValueError):
    """Slot variance (or slot index) does not fit the requested operation."""


class TensorEvalError(ArithmeticError):
    def __init__(self, name, index, cause: EvalDomainError):
        self.index = index
        self.cause = cause
        self.point = cause.point
        super().__init__(f"{name or 'tensor'}{list(index)}: {cause}")


class SingularMetricError(ArithmeticError):
    def __init__(self, point, det):
        self.point = point
        self.det = det
        super().__init__(f"metric is singular at {point} (det={det:.3g})")


def _norm_variance(variance) -> tuple[str, ...]:
    if isinstance(variance, str):
        variance = tuple(variance)
    variance = tuple(variance)
    for v in variance:
        if v not in (UP, DOWN):
            raise VarianceError(f"variance entries must be 'u' or 'd', got {v!r}")
    return variance


@dataclass(frozen=True, eq=False)
class TensorField:
    """Dense tensor field over a chart.

    ``symmetries`` holds ``(slot_a, slot_b, kind)`` triples with kind
    ``"sym"`` or ``"anti"``.  They are metadata only; use
    :func:`check_symmetries` to verify them by sampling.
    """

    chart: Chart
    variance: tuple[str, ...]
    components: np.ndarray
    symmetries: tuple[tuple[int, int, str], ...] = ()
    name: str = ""

    def __post_init__(self):
        variance = _norm_variance(self.variance)
        object.__setattr__(self, "variance", variance)
        comps = np.asarray(self.components, dtype=object)
        n = self.chart.dim
        if comps.shape != (n,) * len(variance):
            raise VarianceError(
                f"component grid {comps.shape} does not match rank {len(variance)} over dim {n}"
            )
        for idx in np.ndindex(comps.shape):
            if not isinstance(comps[idx], Expr):
                raise TypeError(f"component {idx} is not an Expr: {comps[idx]!r}")
        comps.flags.writeable = False
        object.__setattr__(self, "components", comps)
        for a, b, kind in self.symmetries:
            _check_slot(self, a)
            _check_slot(self, b)
            if kind not in ("sym", "anti"):
                raise ValueError(f"unknown symmetry kind {kind!r}")

    @classmethod
    def build(cls, chart: Chart, variance, fn, symmetries=(), name="") -> "TensorField":
        """Fill every component from ``fn(*index)``."""
        variance = _norm_variance(variance)
        shape = (chart.dim,) * len(variance)
        comps = np.empty(shape, dtype=object)
        for idx in np.ndindex(shape):
            comps[idx] = fn(*idx)
        return cls(chart, variance, comps, tuple(symmetries), name)

    @classmethod
    def zeros(cls, chart: Chart, variance, name="") -> "TensorField":
        return cls.build(chart, variance, lambda *i: ZERO, name=name)

    @classmethod
    def scalar(cls, chart: Chart, e: Expr, name="") -> "TensorField":
        comps = np.empty((), dtype=object)
        comps[()] = e
        return cls(chart, (), comps, (), name)

    @property
    def rank(self) -> int:
        return len(self.variance)

    @property
    def dim(self) -> int:
        return self.chart.dim

    def __getitem__(self, idx) -> Expr:
        return self.components[idx]

    def items(self):
        for idx in np.ndindex(self.components.shape):
            yield idx, self.components[idx]

    def map(self, fn, name=None) -> "TensorField":
        return TensorField.build(
            self.chart,
            self.variance,
            lambda *i: fn(self.components[i]),
            self.symmetries,
            self.name if name is None else name,
        )

    def with_name(self, name: str) -> "TensorField":
        return TensorField(self.chart, self.variance, self.components, self.symmetries, name)

    def with_symmetries(self, *symmetries) -> "TensorField":
        return TensorField(self.chart, self.variance, self.components, tuple(symmetries), self.name)

    def is_zero(self) -> bool:
        """True if every component is the literal zero expression."""
        return all(e is ZERO for _, e in self.items())

    def simplified(self) -> "TensorField":
        return self.map(simplify)

    def _same_shape(self, other: "TensorField"):
        if other.chart != self.chart:
            raise VarianceError("fields live on different charts")
        if other.variance != self.variance:
            raise VarianceError(f"variance mismatch {self.variance} vs {other.variance}")

    def __add__(self, other: "TensorField") -> "TensorField":
        self._same_shape(other)
        return TensorField.build(
            self.chart, self.variance, lambda *i: add(self.components[i], other.components[i])
        )

    def __sub__(self, other: "TensorField") -> "TensorField":
        self._same_shape(other)
        return TensorField.build(
            self.chart,
            self.variance,
            lambda *i: add(self.components[i], mul(-1.0, other.components[i])),
        )

    def __mul__(self, factor) -> "TensorField":
        if isinstance(factor, TensorField):
            return tensor_product(self, factor)
        return self.map(lambda e: e * factor, name="")

    __rmul__ = __mul__

    def __neg__(self) -> "TensorField":
        return self.map(lambda e: -e, name="")


@dataclass(frozen=True)
class PointTensor:
    """Numeric snapshot of a tensor field at one point."""

    variance: tuple[str, ...]
    values: np.ndarray
    point: dict = field(default_factory=dict)


def _check_slot(T: TensorField, slot: int):
    if not 0 <= slot < T.rank:
        raise VarianceError(f"slot {slot} out of range for rank {T.rank}")


def delta(chart: Chart) -> TensorField:
    """Kronecker delta as a (1,1) field."""
    return TensorField.build(chart, "ud", lambda i, j: ONE if i == j else ZERO, name="delta")


def tensor_product(A: TensorField, B: TensorField) -> TensorField:
    if A.chart != B.chart:
        raise VarianceError("fields live on different charts")
    ra = A.rank
    return TensorField.build(
        A.chart,
        A.variance + B.variance,
        lambda *i: mul(A.components[i[:ra]], B.components[i[ra:]]),
    )


def contract(T: TensorField, slot_a: int, slot_b: int) -> TensorField:
    """Trace over one up slot and one down slot."""
    _check_slot(T, slot_a)
    _check_slot(T, slot_b)
    if slot_a == slot_b:
        raise VarianceError("cannot contract a slot with itself")
    if {T.variance[slot_a], T.variance[slot_b]} != {UP, DOWN}:
        raise VarianceError(
            f"contraction needs one up and one down slot, got {T.variance[slot_a]}{T.variance[slot_b]}"
        )
    keep = [s for s in range(T.rank) if s not in (slot_a, slot_b)]
    n = T.dim

    def comp(*idx):
        full = [0] * T.rank
        for s, i in zip(keep, idx):
            full[s] = i
        terms = []
        for m in range(n):
            full[slot_a] = full[slot_b] = m
            terms.append(T.components[tuple(full)])
        return add(*terms)

    return TensorField.build(T.chart, tuple(T.variance[s] for s in keep), comp)


def contract_pair(A: TensorField, slot_a: int, B: TensorField, slot_b: int) -> TensorField:
    """Contract slot ``slot_a`` of A with slot ``slot_b`` of B.

    Equivalent to ``contract(tensor_product(A, B), slot_a, A.rank + slot_b)``
    without building the full product.  Remaining slots are A's then B's.
    """
    _check_slot(A, slot_a)
    _check_slot(B, slot_b)
    if A.chart != B.chart:
        raise VarianceError("fields live on different charts")
    if {A.variance[slot_a], B.variance[slot_b]} != {UP, DOWN}:
        raise VarianceError(
            f"contraction needs one up and one down slot, got {A.variance[slot_a]}{B.variance[slot_b]}"
        )
    keep_a = [s for s in range(A.rank) if s != slot_a]
    keep_b = [s for s in range(B.rank) if s != slot_b]
    n = A.dim
    ka = len(keep_a)

    def comp(*idx):
        ia = [0] * A.rank
        ib = [0] * B.rank
        for s, i in zip(keep_a, idx[:ka]):
            ia[s] = i
        for s, i in zip(keep_b, idx[ka:]):
            ib[s] = i
        terms = []
        for m in range(n):
            ia[slot_a] = m
            ib[slot_b] = m
            terms.append(mul(A.components[tuple(ia)], B.components[tuple(ib)]))
        return add(*terms)

    variance = tuple(A.variance[s] for s in keep_a) + tuple(B.variance[s] for s in keep_b)
    return TensorField.build(A.chart, variance, comp)


def permute(T: TensorField, order) -> TensorField:
    """New field whose slot ``k`` is slot ``order[k]`` of ``T``."""
    order = tuple(order)
    if sorted(order) != list(range(T.rank)):
        raise VarianceError(f"{order} is not a permutation of {T.rank} slots")
    comps = np.transpose(T.components, order)
    return TensorField(T.chart, tuple(T.variance[s] for s in order), comps.copy())


def _move_slot(T: TensorField, src: int, dst: int) -> TensorField:
    order = [s for s in range(T.rank) if s != src]
    order.insert(dst, src)
    return permute(T, order)


def _check_metric(g: TensorField, variance):
    if g.variance != variance:
        raise VarianceError(f"expected a metric with variance {variance}, got {g.variance}")


def lower(T: TensorField, slot: int, g: TensorField, position: int | None = None) -> TensorField:
    """Lower ``slot`` with the metric ``g``.

    The lowered index stays in place unless ``position`` says where it goes
    (e.g. ``lower(R, 0, g, position=2)`` gives g_{mk} R^m_{ijl}).
    """
    _check_slot(T, slot)
    _check_metric(g, (DOWN, DOWN))
    if T.variance[slot] != UP:
        raise VarianceError(f"slot {slot} is not an up slot")
    out = contract_pair(g, 1, T, slot)  # new down index is slot 0
    return _move_slot(out, 0, slot if position is None else position)


def raise_index(T: TensorField, slot: int, g_inv: TensorField, position: int | None = None) -> TensorField:
    _check_slot(T, slot)
    _check_metric(g_inv, (UP, UP))
    if T.variance[slot] != DOWN:
        raise VarianceError(f"slot {slot} is not a down slot")
    out = contract_pair(g_inv, 1, T, slot)
    return _move_slot(out, 0, slot if position is None else position)


def _pair_swap(T: TensorField, a: int, b: int, sign: float) -> TensorField:
    _check_slot(T, a)
    _check_slot(T, b)
    if T.variance[a] != T.variance[b]:
        raise VarianceError("can only (anti)symmetrize slots of equal variance")

    def comp(*idx):
        j = list(idx)
        j[a], j[b] = j[b], j[a]
        return mul(0.5, add(T.components[idx], mul(sign, T.components[tuple(j)])))

    return TensorField.build(T.chart, T.variance, comp)


def symmetrize(T: TensorField, a: int, b: int) -> TensorField:
    return _pair_swap(T, a, b, 1.0)


def antisymmetrize(T: TensorField, a: int, b: int) -> TensorField:
    return _pair_swap(T, a, b, -1.0)


def partial_derivative(T: TensorField) -> TensorField:
    """Coordinate derivative; the new derivative slot is slot 0 (down)."""
    xs = T.chart.symbols()
    rank = T.rank
    return TensorField.build(
        T.chart,
        (DOWN,) + T.variance,
        lambda c, *idx: diff(T.components[idx] if rank else T.components[()], xs[c]),
    )


def covariant_derivative(T: TensorField, gamma: TensorField) -> TensorField:
    """Covariant derivative with connection coefficients ``gamma[k, i, j]`` = Γ^k_{ij}.

    The new derivative index is slot 0:
    (∇T)_c = ∂_c T + Σ_up Γ^a_{c m} T^{..m..} − Σ_down Γ^m_{c b} T_{..m..}.
    """
    if gamma.variance != (UP, DOWN, DOWN):
        raise VarianceError(f"connection must have variance (u, d, d), got {gamma.variance}")
    if gamma.chart != T.chart:
        raise VarianceError("connection and field live on different charts")
    dT = partial_derivative(T)
    n = T.dim
    G = gamma.components
    C = T.components

    def comp(c, *idx):
        terms = [dT.components[(c,) + idx]]
        for s, v in enumerate(T.variance):
            for m in range(n):
                j = list(idx)
                j[s] = m
                tm = C[tuple(j)]
                if v == UP:
                    terms.append(mul(G[idx[s], c, m], tm))
                else:
                    terms.append(mul(-1.0, G[m, c, idx[s]], tm))
        return add(*terms)

    return TensorField.build(T.chart, (DOWN,) + T.variance, comp)


def evaluate_on(T: TensorField, points, extra=None) -> np.ndarray:
    """Evaluate every component at each point; result shape ``(N,) + (n,)*rank``.

    ``extra`` binds non-coordinate parameters (e.g. a conformal scale).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    b = T.chart.bindings(pts)
    if extra:
        b.update(extra)
    comps = [T.components[idx] for idx in np.ndindex(T.components.shape)]
    try:
        vals = evaluate_many(comps, b)
    except EvalDomainError:
        for idx in np.ndindex(T.components.shape):
            try:
                evaluate_many([T.components[idx]], b)
            except EvalDomainError as err:
                raise TensorEvalError(T.name, idx, err) from err
        raise
    N = pts.shape[0]
    out = np.empty((N, len(comps)))
    for k, v in enumerate(vals):
        out[:, k] = v
    return out.reshape((N,) + T.components.shape)


def evaluate_at(T: TensorField, point, extra=None) -> PointTensor:
    point = np.asarray(point, dtype=float).reshape(-1)
    values = evaluate_on(T, point[None, :], extra)[0]
    return PointTensor(T.variance, values, dict(zip(T.chart.coords, map(float, point))))


def check_nonsingular(g: TensorField, points, tol: float = 1e-12) -> float:
    """Smallest |det g| over ``points``; raises :class:`SingularMetricError` at the first bad point."""
    if g.variance not in ((DOWN, DOWN), (UP, UP)):
        raise VarianceError(f"expected a (0,2) or (2,0) field, got {g.variance}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    try:
        dets = np.linalg.det(evaluate_on(g, pts))
    except TensorEvalError as err:
        raise SingularMetricError(err.point, float("nan")) from err
    for p, d in zip(pts, dets):
        if not abs(d) > tol:
            raise SingularMetricError(dict(zip(g.chart.coords, map(float, p))), float(d))
    return float(np.min(np.abs(dets))) if len(dets) else math.inf


def check_symmetries(T: TensorField, points, tol: float = 1e-10) -> dict:
    """Max violation of each declared symmetry over ``points``."""
    vals = evaluate_on(T, points)
    out = {}
    for a, b, kind in T.symmetries:
        sw = np.swapaxes(vals, a + 1, b + 1)
        dev = vals - sw if kind == "sym" else vals + sw
        out[(a, b, kind)] = float(np.max(np.abs(dev))) if dev.size else 0.0
    return out


def all_indices(n: int, rank: int):
    return itertools.product(range(n), repeat=rank)
