"""Command-line front end.

    rextflow {curvature|extend|flow|verify|report} --scenario <path|builtin:name>
             [--out report.yaml] [--seed N] [--tolerance T] [--list]

Exit status: 0 all checks pass, 1 a check failed, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import time

import numpy as np
import yaml

from . import __version__
from .checks import CHECKS, default_checks, run_checks
from .expr import ZERO, emit, evaluate_many
from .scenario import Scenario, ScenarioError, builtin_names, load

COMMANDS = ("curvature", "extend", "flow", "verify", "report")
MAX_ENTRIES = 64
MAX_EXPR = 240


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ScenarioError(message, "command line")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rextflow", description="Curvature, Riemann extension and Yamabe flow verification.")
    p.add_argument("--version", action="version", version=f"rextflow {__version__}")
    p.add_argument("command", choices=COMMANDS + ("list",))
    p.add_argument("--scenario", help="scenario file, or builtin:<name>")
    p.add_argument("--out", help="report path (YAML); traces go next to it as CSV")
    p.add_argument("--seed", type=_u64, help="override the sampling seed")
    p.add_argument("--tolerance", type=_positive, help="override every residual tolerance")
    return p


def _u64(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid tolerance {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("tolerance must be positive")
    return v


def _short(e) -> str:
    s = emit(e)
    return s if len(s) <= MAX_EXPR else s[: MAX_EXPR - 3] + "..."


def _label(chart, idx):
    return "[" + ",".join(chart.coords[i] for i in idx) + "]"


def _table(field, pts) -> dict:
    """Nonzero component count, max |value| at samples, and up to MAX_ENTRIES expressions."""
    entries, nonzero = {}, 0
    for idx in np.ndindex(field.components.shape):
        e = field.components[idx]
        if e is ZERO:
            continue
        nonzero += 1
        if len(entries) < MAX_ENTRIES:
            entries[field.name + _label(field.chart, idx)] = _short(e)
    vals = _values(field, pts)
    return {"nonzero_components": nonzero, "max_abs_at_samples": vals, "entries": entries}


def _values(field, pts) -> float:
    from .tensor import evaluate_on

    a = evaluate_on(field, pts)
    return float(np.max(np.abs(a))) if a.size else 0.0


def _scalar_stats(chart, R, pts) -> dict:
    v = np.broadcast_to(evaluate_many([R], chart.bindings(pts))[0], (len(pts),))
    return {"expression": _short(R), "min": float(np.min(v)), "max": float(np.max(v))}


def summarize_curvature(scen: Scenario) -> dict:
    from .checks import _bundle

    b = _bundle(scen)
    pts = scen.chart.sample(scen.samples, scen.rng("summary"))
    return {
        "dim": b.dim,
        "coords": list(b.chart.coords),
        "christoffel": _table(b.gamma, pts),
        "riemann": {"nonzero_components": _table(b.R_down, pts)["nonzero_components"],
                    "max_abs_at_samples": _values(b.R_down, pts)},
        "ricci": _table(b.Ric, pts),
        "scalar": _scalar_stats(scen.chart, b.R_scalar, pts),
    }


def summarize_extension(scen: Scenario) -> dict:
    from .extension import closed_form_curvature, extension_ricci_scalar, build_metric

    spec = scen.extension
    pts = spec.extended.sample(scen.samples, scen.rng("summary"))
    R = closed_form_curvature(spec)
    Ric, Rs = extension_ricci_scalar(spec)
    ext = spec.extended
    return {
        "base_dim": spec.dim,
        "extended_coords": list(ext.coords),
        "metric": _table(build_metric(spec), pts),
        "curvature": _table(R.field, pts),
        "ricci": _table(Ric.field, pts),
        "scalar": _scalar_stats(ext, Rs, pts),
    }


def _flow_trace(scen: Scenario):
    """(summary, csv text) for the conformal flow of the scenario geometry."""
    from .checks import _bundle, _flow_params
    from .flow import (
        PreconditionError,
        constant_curvature_check,
        einstein_lambda_check,
        integrate_conformal,
        scalar_variation,
        volume,
    )

    g = scen.geometry
    b = _bundle(scen)
    mode, value, t_end, steps, h = _flow_params(scen)
    pts = scen.chart.sample(scen.samples, scen.rng("trace"))
    R0, spread = scalar_variation(b.R_scalar, scen.chart, pts)
    if spread > 1e-6:
        raise PreconditionError(f"scalar curvature is not spatially constant (max - min = {spread:.3g} > 1e-06)")
    V0 = volume(g) if mode == "paper_volume" else None
    tr = integrate_conformal(R0, g.dim, t_end, steps, mode, value, V0)
    lam, source = None, ""
    for fn, label in ((constant_curvature_check, "space_form"), (einstein_lambda_check, "einstein")):
        try:
            lt = fn(g, pts, t_end, steps, mode, value)
        except PreconditionError:
            continue
        lam, source = lt.lam, label
        break
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "c", "lambda", "R", "S"])
    for k in range(len(tr.t)):
        w.writerow([repr(float(tr.t[k])), repr(float(tr.c[k])),
                    "" if lam is None else repr(float(lam[k])), repr(float(tr.R[k])), repr(float(tr.S[k]))])
    summary = {
        "S_mode": mode,
        "R0": R0,
        "t_end": t_end,
        "steps": steps,
        "c_final": float(tr.c[-1]),
        "R_final": float(tr.R[-1]),
        "lambda_source": source or None,
    }
    return summary, buf.getvalue()


def build_report(command: str, scen: Scenario, tolerance=None) -> tuple[dict, dict]:
    """Report mapping and named CSV traces."""
    t0 = time.perf_counter()
    names = default_checks(command, scen) if command != "report" else list(scen.checks)
    for i, n in enumerate(scen.checks):
        if n not in CHECKS:
            raise scen.error(f"unknown check {n!r}", "checks", i)
    summary, traces = {}, {}
    if command in ("curvature", "report") and scen.geometry is not None and scen.extension is None:
        summary["curvature"] = summarize_curvature(scen)
    if command in ("extend", "report") and scen.extension is not None:
        summary["extension"] = summarize_extension(scen)
    if command == "flow" or (command == "report" and scen.flow and scen.metric is not None):
        summary["flow"], traces["trace"] = _flow_trace(scen)
    results, timing = run_checks(scen, names, tolerance)
    checks = [r.as_dict() for r in results]
    failed = [r.name for r in results if not r.passed]
    report = {
        "tool": "rextflow",
        "version": __version__,
        "command": command,
        "scenario": {"name": scen.name, "source": scen.source, "echo": scen.data},
        "seed": scen.seed,
        "samples": scen.samples,
        "tolerance_override": tolerance,
        "summary": summary,
        "checks": checks,
        "failed": failed,
        "pass": not failed,
        "timing": {"total_seconds": round(time.perf_counter() - t0, 6), "checks": timing},
    }
    return report, traces


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _dump(report) -> str:
    return yaml.safe_dump(_plain(report), sort_keys=False, allow_unicode=True, width=120)


def write_outputs(report, traces, out):
    if out is None:
        sys.stdout.write(_dump(report))
        for name, text in traces.items():
            sys.stdout.write(f"# {name}.csv\n{text}")
        return
    stem = out[:-5] if out.endswith(".yaml") else out
    paths = {}
    for name, text in traces.items():
        p = f"{stem}.{name}.csv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        paths[name] = os.path.basename(p)
    if paths:
        timing = report.pop("timing")
        report["traces"] = paths
        report["timing"] = timing
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(_dump(report))


def _print_checks(report):
    for c in report["checks"]:
        status = "PASS" if c["pass"] else "FAIL"
        if c.get("applicable") is False:
            status = "N/A "
        res = c["max_residual"]
        res = "-" if res is None else f"{res:.3e}"
        print(f"{status} {c['name']}: {res} (tol {c['tolerance']})", file=sys.stderr)


def run(argv=None) -> int:
    from .expr import EvalDomainError
    from .flow import FlowSingularityError, PreconditionError, QuadratureError
    from .tensor import SingularMetricError, TensorEvalError

    try:
        args = _parser().parse_args(argv)
        if args.command == "list":
            for name in builtin_names():
                print(f"builtin:{name}")
            return 0
        if not args.scenario:
            raise ScenarioError("--scenario is required", "rextflow")
        scen = load(args.scenario)
        if args.seed is not None:
            scen = scen.with_seed(args.seed)
        if args.command == "extend" and scen.extension is None:
            raise scen.error("'extend' needs an 'extension' block")
        if args.command in ("curvature", "flow") and scen.geometry is None:
            raise scen.error(f"{args.command!r} needs a 'metric' block")
        if args.command == "flow" and scen.metric is None:
            raise scen.error("'flow' needs a 'metric' block")
        report, traces = build_report(args.command, scen, args.tolerance)
    except ScenarioError as err:
        print(f"rextflow: error: {err}", file=sys.stderr)
        return 2
    except (PreconditionError, FlowSingularityError, SingularMetricError, QuadratureError, EvalDomainError, TensorEvalError, ValueError) as err:
        where = args.scenario if "args" in locals() and args.scenario else "rextflow"
        print(f"rextflow: error: {where}: {err}", file=sys.stderr)
        return 2
    try:
        write_outputs(report, traces, args.out)
    except OSError as err:
        print(f"rextflow: error: cannot write {args.out}: {err.strerror}", file=sys.stderr)
        return 2
    _print_checks(report)
    return 0 if report["pass"] else 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
