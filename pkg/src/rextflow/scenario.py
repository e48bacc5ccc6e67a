"""Scenario files: YAML documents describing a geometry and the checks to run.

Loading keeps the source line of every node so that validation errors can
point at ``file:line``.  See ``docs/scenarios.md`` for the schema.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .expr import Chart, ExprSyntaxError, UnknownSymbolError, ZERO, parse, simplify
from .extension import ExtensionSpec, random_spec
from .tensor import TensorField

__all__ = [
    "ScenarioError",
    "Scenario",
    "load",
    "load_text",
    "builtin_names",
    "builtin_path",
    "random_metric",
    "KINDS",
]

KINDS = ("curvature", "extend", "flow", "verify")
_TOP_KEYS = {
    "name", "kind", "description", "seed", "samples", "chart", "metric", "extension",
    "flow", "expect", "checks", "output", "suite",
}
_FLOW_KEYS = {"S_mode", "S_value", "t_end", "steps", "h"}


class ScenarioError(ValueError):
    """Malformed scenario; carries the source file and line when known."""

    def __init__(self, message: str, source: str = "<scenario>", line: int | None = None):
        self.source, self.line, self.message = source, line, message
        where = source if line is None else f"{source}:{line}"
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# line-aware YAML


def _construct(node, path, lines, source):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _construct(k, path + ("<key>",), {}, source)
            if not isinstance(key, (str, int, float)):
                raise ScenarioError("mapping keys must be scalars", source, k.start_mark.line + 1)
            key = str(key)
            if key in out:
                raise ScenarioError(f"duplicate key {key!r}", source, k.start_mark.line + 1)
            out[key] = _construct(v, path + (key,), lines, source)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_construct(v, path + (i,), lines, source) for i, v in enumerate(node.value)]
    return yaml.SafeLoader("").construct_object(node)


def _compose(text: str, source: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        line = None if mark is None else mark.line + 1
        raise ScenarioError(f"YAML syntax error: {getattr(err, 'problem', err)}", source, line) from None
    if node is None:
        raise ScenarioError("empty scenario", source, 1)
    lines: dict = {}
    data = _construct(node, (), lines, source)
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping", source, 1)
    return data, lines


# ---------------------------------------------------------------------------
# scenario object


@dataclass
class Scenario:
    """Validated scenario: raw data echo plus built geometry."""

    name: str
    kind: str
    data: dict
    source: str
    seed: int
    samples: int
    chart: Chart | None = None
    metric: TensorField | None = None
    extension: ExtensionSpec | None = None
    flow: dict = field(default_factory=dict)
    expect: dict = field(default_factory=dict)
    checks: tuple = ()
    lines: dict = field(default_factory=dict, repr=False)

    def line(self, *path) -> int | None:
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, message: str, *path) -> ScenarioError:
        return ScenarioError(message, self.source, self.line(*path))

    @property
    def geometry(self) -> TensorField | None:
        """Metric to run curvature and flow pipelines on (the extended metric for extensions)."""
        if self.metric is not None:
            return self.metric
        if self.extension is not None:
            from .extension import build_metric

            return build_metric(self.extension)
        return None

    def rng(self, label: str) -> np.random.Generator:
        """Independent stream per label, stable under reordering of checks."""
        import zlib

        return np.random.default_rng([self.seed, zlib.crc32(label.encode())])

    def with_seed(self, seed: int) -> "Scenario":
        """Same scenario with another sampling seed (random geometry keeps its own seed)."""
        return dataclasses.replace(self, seed=int(seed))


def _real(value, what, src, line):
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ScenarioError(f"{what} must be a number", src, line)
    try:
        return float(eval_constant(value))
    except (ValueError, TypeError, ExprSyntaxError, UnknownSymbolError):
        raise ScenarioError(f"{what} must be a number, got {value!r}", src, line) from None


def eval_constant(value) -> float:
    """Numbers or constant expressions such as ``"pi - 0.1"``."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).replace("pi", "3.141592653589793")
    e = simplify(parse(text, Chart(("_",), ((0, 1),))))
    from .expr import Const

    if not isinstance(e, Const):
        raise ValueError(f"not a constant: {value!r}")
    return e.value


def _chart(data, lines, src) -> Chart:
    ch = data.get("chart")
    ln = lines.get(("chart",))
    if not isinstance(ch, dict):
        raise ScenarioError("missing or invalid 'chart' block", src, ln)
    coords = ch.get("coords")
    if not isinstance(coords, list) or not coords or not all(isinstance(c, str) for c in coords):
        raise ScenarioError("chart.coords must be a non-empty list of names", src, lines.get(("chart", "coords"), ln))
    if "dim" in ch and ch["dim"] != len(coords):
        raise ScenarioError(f"chart.dim={ch['dim']} but {len(coords)} coordinates given", src, lines.get(("chart", "dim")))
    dom = ch.get("domain")
    if not isinstance(dom, list) or len(dom) != len(coords):
        raise ScenarioError("chart.domain needs one [lo, hi] interval per coordinate", src, lines.get(("chart", "domain"), ln))
    intervals = []
    for i, iv in enumerate(dom):
        il = lines.get(("chart", "domain", i))
        if not isinstance(iv, list) or len(iv) != 2:
            raise ScenarioError("each domain entry must be [lo, hi]", src, il)
        intervals.append((_real(iv[0], "domain bound", src, il), _real(iv[1], "domain bound", src, il)))
    try:
        return Chart(tuple(coords), tuple(intervals), name=str(data.get("name", "")))
    except ValueError as err:
        raise ScenarioError(str(err), src, ln) from None


def _expr(text, chart, src, line, where):
    if isinstance(text, bool) or not isinstance(text, (str, int, float)):
        raise ScenarioError(f"{where}: expression must be a string or number", src, line)
    try:
        return parse(str(text), chart)
    except UnknownSymbolError as err:
        raise ScenarioError(f"{where}: undeclared coordinate {err.name!r}", src, line) from None
    except ExprSyntaxError as err:
        raise ScenarioError(f"{where}: {err}", src, line) from None


def _index_key(key, chart, count, src, line, where):
    parts = key.replace(",", " ").split()
    if len(parts) != count:
        raise ScenarioError(f"{where}: key {key!r} needs {count} coordinate names", src, line)
    idx = []
    for p in parts:
        if p not in chart.coords:
            raise ScenarioError(f"{where}: undeclared coordinate {p!r} in key {key!r}", src, line)
        idx.append(chart.coords.index(p))
    return tuple(idx)


def _sym2(block, chart, src, lines, path, name) -> TensorField:
    """Symmetric (0,2) field from ``"a b": expr`` entries; mirrored, missing entries zero."""
    if not isinstance(block, dict):
        raise ScenarioError(f"'{'.'.join(path)}' must be a mapping of \"a b\": expression", src, lines.get(path))
    comps = {}
    for key, text in block.items():
        ln = lines.get(path + (key,))
        i, j = _index_key(key, chart, 2, src, ln, ".".join(path))
        e = _expr(text, chart, src, ln, f"{'.'.join(path)}[{key!r}]")
        for ij in ((i, j), (j, i)):
            if ij in comps and comps[ij] is not e:
                raise ScenarioError(f"{'.'.join(path)}: conflicting entries for {key!r}", src, ln)
            comps[ij] = e
    return TensorField.build(chart, "dd", lambda i, j: comps.get((i, j), ZERO), [(0, 1, "sym")], name)


def _connection(block, chart, src, lines, path) -> TensorField:
    if not isinstance(block, dict):
        raise ScenarioError("extension.connection must be a mapping of \"k i j\": expression", src, lines.get(path))
    comps = {}
    for key, text in block.items():
        ln = lines.get(path + (key,))
        k, i, j = _index_key(key, chart, 3, src, ln, "extension.connection")
        e = _expr(text, chart, src, ln, f"extension.connection[{key!r}]")
        for kij in ((k, i, j), (k, j, i)):
            if kij in comps and comps[kij] is not e:
                raise ScenarioError(f"extension.connection: conflicting entries for {key!r}", src, ln)
            comps[kij] = e
    return TensorField.build(chart, "udd", lambda k, i, j: comps.get((k, i, j), ZERO), [(1, 2, "sym")], "Gamma")


def _build_extension(data, chart, scen_like) -> ExtensionSpec:
    src, lines = scen_like.source, scen_like.lines
    block = data["extension"]
    path = ("extension",)
    if not isinstance(block, dict):
        raise ScenarioError("'extension' must be a mapping", src, lines.get(path))
    extent = _real(block.get("fiber_extent", 1.0), "fiber_extent", src, lines.get(path + ("fiber_extent",)))
    if "random" in block:
        r = block["random"]
        rl = lines.get(path + ("random",))
        if not isinstance(r, dict):
            raise ScenarioError("extension.random must be a mapping", src, rl)
        seed = int(r.get("seed", scen_like.seed))
        spec = random_spec(chart, seed, int(r.get("degree", 2)), float(r.get("scale", 1.0)))
        return ExtensionSpec(chart, spec.gamma, spec.c, extent)
    gamma = _connection(block.get("connection", {}), chart, src, lines, path + ("connection",))
    c = _sym2(block.get("c", {}), chart, src, lines, path + ("c",), "c")
    try:
        return ExtensionSpec(chart, gamma, c, extent)
    except ValueError as err:
        raise ScenarioError(str(err), src, lines.get(path)) from None


def random_metric(chart: Chart, seed: int, degree: int = 2, scale: float = 0.1) -> TensorField:
    """Seeded polynomial perturbation of 2·I, positive definite on small boxes."""
    from .extension import _random_poly

    rng = np.random.default_rng(seed)
    xs = chart.symbols()
    n = chart.dim
    comps = {}
    for i in range(n):
        for j in range(i, n):
            p = _random_poly(xs, rng, degree, scale)
            comps[i, j] = comps[j, i] = simplify(p + 2.0) if i == j else p
    return TensorField.build(chart, "dd", lambda i, j: comps[i, j], [(0, 1, "sym")], "g")


def _metric(data, chart, src, lines) -> TensorField:
    block = data["metric"]
    if isinstance(block, dict) and "random" in block:
        r = block["random"]
        if not isinstance(r, dict):
            raise ScenarioError("metric.random must be a mapping", src, lines.get(("metric", "random")))
        return random_metric(chart, int(r.get("seed", 0)), int(r.get("degree", 2)), float(r.get("scale", 0.1)))
    return _sym2(block, chart, src, lines, ("metric",), "g")


def load_text(text: str, source: str = "<scenario>") -> Scenario:
    data, lines = _compose(text, source)
    for key in data:
        if key not in _TOP_KEYS:
            raise ScenarioError(f"unknown top-level key {key!r}", source, lines.get((key,)))
    kind = data.get("kind", "verify")
    if kind not in KINDS:
        raise ScenarioError(f"kind must be one of {', '.join(KINDS)}, got {kind!r}", source, lines.get(("kind",)))
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ScenarioError("seed must be an unsigned 64-bit integer", source, lines.get(("seed",)))
    samples = data.get("samples", 100)
    if isinstance(samples, bool) or not isinstance(samples, int) or samples < 1:
        raise ScenarioError("samples must be a positive integer", source, lines.get(("samples",)))
    checks = data.get("checks", [])
    if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
        raise ScenarioError("checks must be a list of check names", source, lines.get(("checks",)))
    scen = Scenario(
        name=str(data.get("name", source)),
        kind=kind,
        data=data,
        source=source,
        seed=seed,
        samples=samples,
        checks=tuple(checks),
        lines=lines,
    )
    needs_geometry = kind != "verify" or "chart" in data
    if kind == "extend" and "extension" not in data:
        raise scen.error("kind 'extend' requires an 'extension' block")
    if kind in ("curvature", "flow") and "metric" not in data and "extension" not in data:
        raise scen.error(f"kind {kind!r} requires a 'metric' block")
    if needs_geometry:
        scen.chart = _chart(data, lines, source)
        if "metric" in data:
            scen.metric = _metric(data, scen.chart, source, lines)
        if "extension" in data:
            scen.extension = _build_extension(data, scen.chart, scen)
    elif "metric" in data or "extension" in data:
        raise scen.error("geometry given without a 'chart' block")
    flow = data.get("flow", {})
    if not isinstance(flow, dict):
        raise scen.error("'flow' must be a mapping", "flow")
    for key in flow:
        if key not in _FLOW_KEYS:
            raise scen.error(f"unknown flow key {key!r}", "flow", key)
    if kind == "flow" and not flow:
        raise scen.error("kind 'flow' requires a 'flow' block")
    parsed = {}
    if "S_mode" in flow:
        parsed["s_mode"] = str(flow["S_mode"])
    for key, name in (("S_value", "s_value"), ("t_end", "t_end"), ("h", "h")):
        if key in flow:
            parsed[name] = _real(flow[key], f"flow.{key}", source, scen.line("flow", key))
    if "steps" in flow:
        if isinstance(flow["steps"], bool) or not isinstance(flow["steps"], int):
            raise scen.error("flow.steps must be an integer", "flow", "steps")
        parsed["steps"] = flow["steps"]
    from .flow import S_MODES

    if parsed.get("s_mode", "average") not in S_MODES:
        raise scen.error(f"flow.S_mode must be one of {', '.join(S_MODES)}", "flow", "S_mode")
    if parsed.get("t_end", 1.0) <= 0 or parsed.get("steps", 1) < 1 or parsed.get("h", 1.0) <= 0:
        raise scen.error("flow requires t_end > 0, steps >= 1 and h > 0", "flow")
    scen.flow = parsed
    expect = data.get("expect", {})
    if not isinstance(expect, dict):
        raise scen.error("'expect' must be a mapping", "expect")
    scen.expect = {k: _real(v, f"expect.{k}", source, scen.line("expect", k)) for k, v in expect.items()}
    return scen


def load(path_or_name: str) -> Scenario:
    """Load a scenario file, or a bundled one via ``builtin:<name>``."""
    if path_or_name.startswith("builtin:"):
        name = path_or_name[len("builtin:"):]
        if name not in builtin_names():
            raise ScenarioError(f"no bundled scenario {name!r}; available: {', '.join(builtin_names())}", path_or_name)
        text = builtin_path(name).read_text(encoding="utf-8")
        return load_text(text, path_or_name)
    try:
        with open(path_or_name, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario: {err.strerror}", path_or_name) from None
    return load_text(text, path_or_name)


def _builtin_dir():
    return resources.files("rextflow") / "scenarios"


def builtin_names() -> list[str]:
    return sorted(p.name[:-5] for p in _builtin_dir().iterdir() if p.name.endswith(".yaml"))


def builtin_path(name: str):
    return _builtin_dir() / f"{name}.yaml"
