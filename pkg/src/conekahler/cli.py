"""Command-line driver: ``conekahler run CONFIG`` and ``conekahler compare A B``.

A config is one JSON file::

    {"command": "solve-ke", "parameters": {"beta": 0.5, "N": 256}}

Unknown keys are rejected and every parameter is checked against the module
invariants before any computation starts.  The output directory gets
report.json (versioned by ``schema_version``), CSV grids and tables, and SVG
plots when ``plots`` is true.  The only environment variable read is
CONEKAHLER_OUTPUT_DIR, which overrides ``output_dir``.

Exit codes: 0 all checks pass, 2 a check failed, 3 config error,
4 numerical failure (a trace file is written next to the report).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import checks
from .cone_surface import SurfaceSpec, save_grid
from .errors import AdmissibilityError, CokernelObstruction, ConfigError, ConvergenceError
from .ke_continuity import KEProblem
from .ricci_bound import SmoothingParams

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4
ENV_OUTPUT = "CONEKAHLER_OUTPUT_DIR"

log = logging.getLogger("conekahler")


class NumericalFailure(RuntimeError):
    """A solver raised; the trace file is already written."""


# -- parameter schema ---------------------------------------------------------------

def _number(v, key):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite number")
    return float(v)


def _positive(v, key):
    v = _number(v, key)
    if v <= 0:
        raise ConfigError(f"{key} must be positive")
    return v


def _count(v, key):
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{key} must be a positive integer")
    return v


def _flag(v, key):
    if not isinstance(v, bool):
        raise ConfigError(f"{key} must be true or false")
    return v


def _seed(v, key):
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ConfigError(f"{key} must be a non-negative integer")
    return v


def _numbers(v, key):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key} must be a non-empty list of numbers")
    return [_number(x, key) for x in v]


def _optional(kind):
    return lambda v, key: None if v is None else kind(v, key)


def _schedule(v, key):
    """Either an explicit list of t values or a number of equal steps."""
    if isinstance(v, int) and not isinstance(v, bool):
        return [float(t) for t in np.linspace(0.0, 1.0, _count(v, key) + 1)]
    return _numbers(v, key)


def _text(v, key):
    if not isinstance(v, str) or not v:
        raise ConfigError(f"{key} must be a non-empty string")
    return v


COMMON = {
    "seed": (_seed, 0),
    "output_dir": (_text, "out"),
    "plots": (_flag, False),
}

SCHEMA = {
    "verify-local": {
        "betas": (_numbers, [0.6, 0.75, 0.9]),
        "a_values": (_numbers, [-0.5, 0.5]),
        "points": (_count, 100),
        "sturm_points": (_count, 1000),
        "tol_curvature": (_positive, 1e-4),
        "tol_sturm": (_positive, 1e-9),
        "tol_branch": (_positive, 1e-12),
    },
    "verify-geometry": {
        "betas": (_numbers, [0.6, 0.75, 0.9]),
        "count": (_count, 12),
        "exponent_tol": (_positive, 0.05),
    },
    "solve-linear": {
        "beta": (_number, 0.5),
        "N": (_count, 128),
        "r0": (_number, 0.15),
        "delta": (_optional(_positive), None),
        "trials": (_count, 20),
        "tol": (_positive, 1e-10),
    },
    "flatten-ricci": {
        "beta": (_number, 0.5),
        "N": (_count, 128),
        "r0": (_number, 0.15),
        "delta": (_optional(_positive), None),
        "refine": (_flag, True),
        "mollifier_scale": (_positive, 1 / 16),
        "eps": (_positive, 50.0),
        "mu": (_positive, 1.0),
        "max_newton": (_count, 8),
        "volume_tol": (_positive, 1e-8),
        "stable_tol": (_positive, 0.1),
        "growth_min": (_positive, 0.5),
    },
    "solve-ke": {
        "beta": (_number, 0.5),
        "lambda": (_number, -1.0),
        "N": (_count, 256),
        "r0": (_number, 0.15),
        "delta": (_optional(_positive), None),
        "schedule": (_schedule, 10),
        "alt_schedule": (_optional(_schedule), None),
        "refine": (_flag, False),
        "mollifier_scale": (_positive, 1 / 16),
        "eps": (_positive, 50.0),
        "newton_tol": (_positive, 1e-9),
        "max_newton": (_count, 20),
        "max_steps": (_count, 20),
        "residual_tol": (_positive, 1e-8),
        "curvature_tol": (_positive, 0.02),
        "area_tol": (_positive, 0.02),
        "chernlu_tol": (_positive, 1e-3),
        "distortion_max": (_positive, 50.0),
        "schedule_tol": (_positive, 1e-6),
        "checkpoint": (_flag, True),
        "resume": (_flag, False),
    },
}


def _check_invariants(command: str, p: dict) -> None:
    """Construct the module objects once so their own validation runs up front."""
    try:
        if command in ("verify-local", "verify-geometry"):
            for b in p["betas"]:
                if not 0 < b < 1:
                    raise ValueError(f"beta must lie in (0, 1), got {b}")
                if command == "verify-geometry" and 1 / b - 1 > 1:
                    raise ValueError(f"beta={b}: exponent 1/beta - 1 exceeds 1, no Holder fit")
            for a in p.get("a_values", []):
                if not abs(a) < 1:
                    raise ValueError(f"a must satisfy |a| < 1, got {a}")
            if command == "verify-geometry" and p["count"] < 5:
                raise ValueError("count must be at least 5")
            return
        spec = SurfaceSpec(p["N"], p["beta"], p["r0"])
        if p.get("refine"):
            SurfaceSpec(2 * p["N"], p["beta"], p["r0"])
        if command == "flatten-ricci":
            SmoothingParams.for_beta(p["beta"], eps=p["eps"], mu=p["mu"],
                                     mollifier_scale=p["mollifier_scale"])
        if command == "solve-ke":
            if p["lambda"] != -1.0:
                raise ValueError("only the Einstein constant lambda = -1 is implemented")
            spec.coarsened()  # the Holder monitor samples every second node
            for key in ("schedule", "alt_schedule"):
                if p[key] is not None:
                    KEProblem(spec, p["delta"], p[key], p["newton_tol"], p["max_newton"],
                              p["mollifier_scale"], p["eps"]).smoothing().validate(p["beta"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(source) -> tuple[str, dict]:
    """(command, full parameter dict with defaults) from a path or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}") from None
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - {"command", "parameters"})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")
    if "command" not in raw:
        raise ConfigError("missing command")
    command = raw["command"]
    if command not in SCHEMA:
        raise ConfigError(f"unknown command {command!r}")
    given = raw.get("parameters", {})
    if not isinstance(given, dict):
        raise ConfigError("parameters must be a JSON object")
    schema = {**COMMON, **SCHEMA[command]}
    unknown = sorted(set(given) - set(schema))
    if unknown:
        raise ConfigError(f"unknown parameter {unknown[0]!r} for {command}")
    params = {}
    for key, (kind, default) in schema.items():
        params[key] = kind(given.get(key, default), key)
    _check_invariants(command, params)
    return command, params


# -- artifacts ------------------------------------------------------------------------

def write_table(path: Path, columns: dict) -> None:
    keys = list(columns)
    rows = zip(*(columns[k] for k in keys))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_plot(path: Path, name: str, columns: dict) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "conekahler"
    keys = list(columns)
    x = np.asarray(columns[keys[0]], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in keys[1:]:
        y = np.abs(np.asarray(columns[k], dtype=float))
        ax.plot(x, y, marker=".", label=k)
    if name.startswith(("newton", "curvature")):
        ax.set_yscale("log")
    ax.set_xlabel(keys[0])
    ax.set_title(name)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _resolve_output(params: dict, override: str | None) -> Path:
    out = Path(override or os.environ.get(ENV_OUTPUT) or params["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output_dir {str(out)!r} is not writable: {exc.strerror}") from None
    return out


def _report(command: str, params: dict, config_name: str, result=None, error=None) -> dict:
    public = {k: v for k, v in params.items() if k != "output_dir"}
    rep = {"schema_version": SCHEMA_VERSION, "command": command, "config": public,
           "invocation": f"conekahler run {config_name}"}
    if result is not None:
        rep.update(passed=result.passed, checks=[c.as_dict() for c in result.checks],
                   tracked=result.tracked, details=checks._plain(result.extra))
    if error is not None:
        rep.update(passed=False, error=error)
    return rep


def run(source, output_dir: str | None = None) -> int:
    """Execute one config; returns the exit status.  Config errors raise ConfigError."""
    command, params = load_config(source)
    if params["plots"]:
        try:
            import matplotlib  # noqa: F401
        except ImportError:
            raise ConfigError("plots requested but matplotlib is not installed") from None
    out = _resolve_output(params, output_dir)
    config_name = Path(source).name if not isinstance(source, dict) else "<dict>"
    suite = checks.SUITES[command]
    t0 = time.perf_counter()
    try:
        if command == "solve-ke":
            ckpt = out / "checkpoints" if params["checkpoint"] else None
            result = suite(params, checkpoint_dir=ckpt, resume=params["resume"], log=log.info)
        else:
            result = suite(params)
    except (ConvergenceError, AdmissibilityError, CokernelObstruction, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        trace = out / "trace.txt"
        lines = traceback.format_exception(type(exc), exc, exc.__traceback__)
        history = getattr(exc, "history", None)
        if history:
            lines.append(f"history: {history!r}\n")
        trace.write_text("".join(lines))
        _write_json(out / "report.json", _report(command, params, config_name, error={
            "type": type(exc).__name__, "message": str(exc), "trace": trace.name}))
        raise NumericalFailure(f"{type(exc).__name__}: {exc}") from exc
    log.info("%s finished in %.1f s", command, time.perf_counter() - t0)
    for stem, (values, spec) in result.grids.items():
        save_grid(out / f"{stem}.csv", values, spec)
    for stem, cols in result.series.items():
        write_table(out / f"{stem}.csv", cols)
        if params["plots"]:
            write_plot(out / f"{stem}.svg", stem, cols)
    _write_json(out / "report.json", _report(command, params, config_name, result))
    for c in result.checks:
        log.info("%s %s measured=%s threshold=%s", "PASS" if c.passed else "FAIL", c.name,
                 c.measured, c.threshold)
    return EXIT_OK if result.passed else EXIT_CHECK


# -- compare --------------------------------------------------------------------------

STABLE_TOL = 0.1


def _expectation_ok(expect: str, ratio: float):
    if expect == checks.HALVING:
        return ratio <= 0.65
    if expect == checks.STABLE:
        return abs(ratio - 1) < STABLE_TOL
    if expect == checks.GROWTH:
        return ratio > 1.5
    return None


def compare(report_a: dict, report_b: dict) -> dict:
    """Refinement table of the tracked quantities, fine over coarse.

    The reports must come from the same command and config up to N.
    """
    for rep in (report_a, report_b):
        if rep.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema_version {rep.get('schema_version')!r}")
        if "tracked" not in rep:
            raise ConfigError("report has no tracked quantities (failed run?)")
    if report_a["command"] != report_b["command"]:
        raise ConfigError(f"mismatched commands: {report_a['command']} vs {report_b['command']}")
    ca, cb = report_a["config"], report_b["config"]
    for key in sorted(set(ca) | set(cb)):
        if key != "N" and ca.get(key) != cb.get(key):
            raise ConfigError(f"mismatched configs: {key} differs ({ca.get(key)!r} vs {cb.get(key)!r})")
    coarse, fine = (report_a, report_b) if ca.get("N", 0) <= cb.get("N", 0) else (report_b, report_a)
    same = ca.get("N") == cb.get("N")
    rows = []
    for name, entry in coarse["tracked"].items():
        if name not in fine["tracked"]:
            continue
        a, b = entry["value"], fine["tracked"][name]["value"]
        ratio = b / a if a != 0 else (1.0 if b == 0 else math.inf)
        ok = None if same else _expectation_ok(entry["expect"], ratio)
        rows.append({"quantity": name, "coarse": a, "fine": b, "ratio": ratio,
                     "expect": entry["expect"], "passed": ok})
    return {"schema_version": SCHEMA_VERSION, "command": coarse["command"],
            "N": [coarse["config"].get("N"), fine["config"].get("N")], "rows": rows,
            "passed": all(r["passed"] is not False for r in rows)}


def format_table(summary: dict) -> str:
    lines = [f"{'quantity':<24} {'coarse':>12} {'fine':>12} {'ratio':>8} {'expect':>8}  result"]
    for r in summary["rows"]:
        res = {True: "pass", False: "FAIL", None: "-"}[r["passed"]]
        lines.append(f"{r['quantity']:<24} {r['coarse']:>12.5g} {r['fine']:>12.5g} "
                     f"{r['ratio']:>8.4f} {r['expect']:>8}  {res}")
    return "\n".join(lines)


# -- entry point ------------------------------------------------------------------------

def _fail(code: int, kind: str, reason: str) -> int:
    print(json.dumps({"status": kind, "exit": code, "reason": reason}), file=sys.stderr)
    return code


def _read_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="conekahler", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="log warnings only")
    sub = parser.add_subparsers(dest="action")
    p_run = sub.add_parser("run", help="run one JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_cmp = sub.add_parser("compare", help="refinement table of two reports")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("--output", default=None, help="also write the summary as JSON")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    if args.action is None:
        return _fail(EXIT_CONFIG, "config-error", "missing action (run or compare)")
    try:
        if args.action == "run":
            return run(args.config, args.output_dir)
        summary = compare(_read_report(args.report_a), _read_report(args.report_b))
        print(format_table(summary))
        if args.output:
            _write_json(Path(args.output), summary)
        return EXIT_OK if summary["passed"] else EXIT_CHECK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config-error", str(exc))
    except NumericalFailure as exc:
        return _fail(EXIT_NUMERICAL, "numerical-failure", str(exc).splitlines()[0])


if __name__ == "__main__":
    sys.exit(main())
