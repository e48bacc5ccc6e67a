"""Symbolic curvature, modified Riemann extensions and Yamabe flow verification."""

__version__ = "0.1.0"

from .expr import Chart, diff, emit, evaluate, parse, simplify  # noqa: E402
from .tensor import TensorField  # noqa: E402
from .curvature import CurvatureBundle, curvature_bundle  # noqa: E402
from .extension import ExtensionSpec, random_spec  # noqa: E402

__all__ = [
    "__version__",
    "Chart",
    "parse",
    "diff",
    "emit",
    "evaluate",
    "simplify",
    "TensorField",
    "CurvatureBundle",
    "curvature_bundle",
    "ExtensionSpec",
    "random_spec",
]
