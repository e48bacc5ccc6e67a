import math

import numpy as np
import pytest

from rextflow.expr import ZERO, Chart, parse
from rextflow.tensor import TensorField


def diag_metric(chart, entries, off=None):
    """Symmetric (0,2) field from diagonal strings plus optional {(i, j): text}."""
    comps = {(i, i): parse(e, chart) for i, e in enumerate(entries)}
    for (i, j), e in (off or {}).items():
        comps[i, j] = comps[j, i] = parse(e, chart)
    return TensorField.build(chart, "dd", lambda i, j: comps.get((i, j), ZERO), [(0, 1, "sym")], "g")


POLAR = (0.1, math.pi - 0.1)


@pytest.fixture
def sphere2():
    ch = Chart(("th", "ph"), (POLAR, (0.0, 2 * math.pi)))
    return diag_metric(ch, ["1", "sin(th)^2"])


@pytest.fixture
def sphere3():
    ch = Chart(("chi", "th", "ph"), (POLAR, POLAR, (0.0, 2 * math.pi)))
    return diag_metric(ch, ["1", "sin(chi)^2", "sin(chi)^2*sin(th)^2"])


@pytest.fixture
def hyperbolic2():
    ch = Chart(("x", "y"), ((-1.0, 1.0), (0.5, 2.0)))
    return diag_metric(ch, ["1/y^2", "1/y^2"])


@pytest.fixture
def flat3():
    ch = Chart(("x", "y", "z"), ((-1.0, 1.0),) * 3)
    return diag_metric(ch, ["1", "1", "1"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
