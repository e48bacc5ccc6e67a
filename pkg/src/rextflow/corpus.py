"""Seeded random expression corpus for derivative and round-trip checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import Chart, EvalDomainError, diff, emit, evaluate_many, parse

__all__ = ["random_expression", "CorpusResult", "corpus_check"]

_FUNCS = ("sin", "cos", "exp", "log", "sqrt")


def random_expression(rng: np.random.Generator, names, depth: int = 3) -> str:
    """Random expression text over ``names``.

    log and sqrt arguments are shifted to stay positive on [-1, 1]-ish boxes,
    and quotient denominators are kept away from zero, so the corpus is
    smooth on the sampling domain.
    """
    if depth <= 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return str(names[rng.integers(len(names))])
        return repr(float(np.round(rng.uniform(-3, 3), 3)))
    r = rng.random()
    a = random_expression(rng, names, depth - 1)
    if r < 0.25:
        return f"({a}) + ({random_expression(rng, names, depth - 1)})"
    if r < 0.4:
        return f"({a}) - ({random_expression(rng, names, depth - 1)})"
    if r < 0.6:
        return f"({a})*({random_expression(rng, names, depth - 1)})"
    if r < 0.68:
        return f"({a})/(2 + ({random_expression(rng, names, depth - 1)})^2)"
    if r < 0.78:
        return f"({a})^{int(rng.integers(2, 4))}"
    if r < 0.82:
        return f"-({a})"
    f = _FUNCS[rng.integers(len(_FUNCS))]
    if f in ("log", "sqrt"):
        return f"{f}(1 + ({a})^2)"
    if f == "exp":
        return f"exp(sin({a}))"
    return f"{f}({a})"


@dataclass
class CorpusResult:
    count: int
    max_diff_error: float
    roundtrip_failures: list
    evaluated_points: int
    skipped_points: int

    @property
    def ok(self) -> bool:
        return not self.roundtrip_failures


def corpus_check(count: int = 200, seed: int = 0, points: int = 5, step: float = 1e-5, depth: int = 3) -> CorpusResult:
    """Symbolic derivative vs central difference, and emit/parse fixed point, on a seeded corpus.

    The error measure is |d_sym − d_fd| / max(1, |d_sym|).  Points where
    the expression or derivative exceeds 1e6 in magnitude count as near a
    singularity and are skipped.
    """
    rng = np.random.default_rng(seed)
    chart = Chart(("x", "y", "z"), ((-1, 1),) * 3)
    worst, failures, used, skipped = 0.0, [], 0, 0
    for k in range(count):
        text = random_expression(rng, chart.coords, depth)
        e = parse(text, chart)
        once = emit(e)
        if emit(parse(once, chart)) != once or parse(once, chart) is not e:
            failures.append(text)
        var = chart.coords[rng.integers(chart.dim)]
        d = diff(e, var)
        pts = chart.sample(points, rng)
        for p in pts:
            b = dict(zip(chart.coords, map(float, p)))
            bp, bm = dict(b), dict(b)
            bp[var] += step
            bm[var] -= step
            try:
                f0, ds = evaluate_many([e, d], b)
                fp = evaluate_many([e], bp)[0]
                fm = evaluate_many([e], bm)[0]
            except EvalDomainError:
                skipped += 1
                continue
            if not (abs(f0) < 1e6 and abs(ds) < 1e6):
                skipped += 1
                continue
            fd = (fp - fm) / (2 * step)
            worst = max(worst, abs(ds - fd) / max(1.0, abs(ds)))
            used += 1
    return CorpusResult(count, worst, failures, used, skipped)
