"""Command-line scenario runner.

    dualmag <scenario> [--config FILE] [--out DIR] [--threads N] [--seed N] [--strict]

The config is an INI file.  ``[params]`` overrides SystemParams fields (plus
``r``, converted to the ancilla photon number), ``[spectra]`` overrides
SpectraParams fields and also holds the spectra scenario options, and a
section named after the scenario sets its options and sweep axes
(``lin(a, b, n)``, ``log(a, b, n)``, ``list(...)``).

Exit codes: 0 success, 2 config error, 3 convergence failure, 4 partial
failure of a sweep.  Errors are also written to ``error.json``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import multiprocessing
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, fisher, lindblad
from .fock import StateError, TruncationError, TruncationWarning
from .integrate import StepUnderflowError
from .params import ParameterError, SystemParams, from_mapping, reference_params, with_r
from .scenarios import SCENARIOS, ConfigError, Context, Point, Scenario, format_axis, points, resolve_options
from .spectra import SpectraError, SpectraParams

log = logging.getLogger("dualmag")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_PARTIAL = 0, 2, 3, 4

CONFIG_ERRORS = (ConfigError, ParameterError, SpectraError, configparser.Error)
CONVERGENCE_ERRORS = (lindblad.ConvergenceError, lindblad.PositivityError, TruncationError, TruncationWarning,
                      StepUnderflowError, fisher.FiniteDifferenceError, fisher.QuadratureError, StateError)

TOLERANCES = {
    "integrator_rtol": 1e-8,
    "integrator_atol": 1e-10,
    "trace_tol": lindblad.TRACE_TOL,
    "hermiticity_tol": lindblad.HERMITIAN_TOL,
    "positivity_abort": lindblad.POSITIVITY_ABORT,
    "drift_tol": lindblad.DRIFT_TOL,
    "richardson_tol": fisher.RICHARDSON_TOL,
    "quadrature_tol": fisher.QUADRATURE_TOL,
}


# --- config ---------------------------------------------------------------------

def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # parameter names are case sensitive (N1, B_z)
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def build_params(cp: configparser.ConfigParser) -> SystemParams:
    raw = dict(cp["params"]) if cp.has_section("params") else {}
    r = raw.pop("r", None)
    try:
        p = from_mapping(raw, reference_params())
    except ParameterError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[params] {exc}") from None
    if r is not None:
        try:
            p = with_r(p, float(r))
        except ValueError as exc:
            raise ConfigError(f"[params] r: {exc}") from None
    return p


def build_spectra(cp: configparser.ConfigParser, scenario_keys=()) -> SpectraParams:
    # [spectra] doubles as the options section of the spectra scenario
    raw = dict(cp["spectra"]) if cp.has_section("spectra") else {}
    names = {f.name for f in dataclasses.fields(SpectraParams)}
    unknown = set(raw) - names - set(scenario_keys)
    if unknown:
        raise ConfigError(f"[spectra] unknown keys: {', '.join(sorted(unknown))}")
    try:
        return SpectraParams(**{k: float(v) for k, v in raw.items() if k in names})
    except ValueError as exc:
        raise ConfigError(f"[spectra] {exc}") from None


def check_sections(cp: configparser.ConfigParser, scenario: str):
    allowed = {"params", "spectra", scenario}
    extra = [s for s in cp.sections() if s not in allowed and s not in SCENARIOS]
    if extra:
        raise ConfigError(f"unknown config sections: {', '.join(extra)}")


# --- output ---------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    return str(o)


def write_json(path: Path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    path.write_text(text + "\n")


# --- execution ------------------------------------------------------------------

def _classify(exc: BaseException) -> int:
    if isinstance(exc, CONFIG_ERRORS):
        return EXIT_CONFIG
    if isinstance(exc, CONVERGENCE_ERRORS):
        return EXIT_CONVERGENCE
    # remaining ValueErrors come from input validation deeper in the stack
    return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_CONVERGENCE


def _run_point(args) -> dict[str, Any]:
    name, ctx, pt = args
    s = SCENARIOS[name]
    start = time.perf_counter()
    with warnings.catch_warnings():
        if ctx.strict:
            warnings.simplefilter("error")
        try:
            tables, diag = s.evaluate(ctx, pt)
        except Exception as exc:  # reported per point; the sweep decides the exit code
            payload = getattr(exc, "diagnostics", None)
            return {"index": pt.index, "values": pt.values, "ok": False, "error": type(exc).__name__,
                    "message": str(exc), "code": _classify(exc),
                    "diagnostics": lindblad_summary(payload) if isinstance(payload, dict) else None}
    return {"index": pt.index, "values": pt.values, "ok": True, "tables": tables, "diagnostics": diag,
            "wall_time": time.perf_counter() - start}


def lindblad_summary(d: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in d.items() if k not in ("conservation", "point_diagnostics")}


def run_points(name: str, ctx: Context, pts: list[Point], threads: int) -> list[dict[str, Any]]:
    jobs = [(name, ctx, pt) for pt in pts]
    if threads <= 1 or len(jobs) <= 1:
        return [_run_point(j) for j in jobs]
    # spawn avoids forking a process whose OpenMP runtime is already initialized
    mp = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=threads, mp_context=mp) as pool:
        return list(pool.map(_run_point, jobs))


def run(name: str, config: str | None = None, out: str | Path = "out", threads: int = 1, seed: int = 0,
        strict: bool = False) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}")
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        s: Scenario = SCENARIOS[name]
        cp = load_config(config)
        check_sections(cp, name)
        params = build_params(cp)
        sp_keys = {**SCENARIOS["spectra"].options, **SCENARIOS["spectra"].axes}
        sp = build_spectra(cp, sp_keys if name == "spectra" else ())
        raw = dict(cp[name]) if cp.has_section(name) else {}
        if name == "spectra":
            raw = {k: v for k, v in raw.items() if k in sp_keys}
        opts, axes = resolve_options(s, raw)
    except CONFIG_ERRORS as exc:
        return _fail(out, EXIT_CONFIG, type(exc).__name__, str(exc))

    ctx = Context(params, sp, opts, strict)
    pts = points(axes, s.sort_axes)
    log.info("scenario %s: %d point(s), %d worker(s)", name, len(pts), threads)
    results = run_points(name, ctx, pts, threads)
    failed = [r for r in results if not r["ok"]]
    ok = [r for r in results if r["ok"]]

    files = {}
    for table, header in s.tables.items():
        rows = [row for r in ok for row in r["tables"].get(table, [])]
        text = csv_text(header, rows)
        path = out / f"{table}.csv"
        path.write_text(text)
        files[path.name] = {"sha256": hashlib.sha256(text.encode()).hexdigest(), "rows": len(rows),
                            "header": header}

    manifest = {
        "scenario": name,
        "description": s.description,
        "version": __version__,
        "seed": seed,
        "strict": strict,
        "threads": threads,
        "params": _params_dict(params),
        "spectra": dataclasses.asdict(sp) if name == "spectra" else None,
        "options": opts,
        "axes": {a.name: format_axis(a) for a in axes},
        "tolerances": TOLERANCES,
        "files": files,
        "points": [{"index": r["index"], "values": r["values"], "ok": r["ok"],
                    "diagnostics": r.get("diagnostics"),
                    **({"error": r["error"], "message": r["message"]} if not r["ok"] else {})}
                   for r in results],
        "wall_time": time.perf_counter() - start,
    }
    if name == "derive" and ok:
        manifest["derived"] = ok[0]["diagnostics"]["derived"]
    write_json(out / "manifest.json", manifest)

    if not failed:
        return EXIT_OK
    listing = [{"index": r["index"], "values": r["values"], "error": r["error"], "message": r["message"]}
               for r in failed]
    if ok:
        return _fail(out, EXIT_PARTIAL, "PartialFailure", f"{len(failed)} of {len(results)} points failed",
                     listing)
    return _fail(out, failed[0]["code"], failed[0]["error"], failed[0]["message"], listing)


def _params_dict(p: SystemParams) -> dict[str, Any]:
    from .params import derive, to_mapping

    return {"resolved": to_mapping(p), "derived": derive(p).as_dict()}


def _fail(out: Path, code: int, kind: str, message: str, failed=None) -> int:
    err = {"exit_code": code, "error": kind, "message": message}
    if failed is not None:
        err["failed_points"] = failed
    write_json(out / "error.json", err)
    print(json.dumps(err, default=_json_default, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualmag", description="Dual-coupling optomechanical magnetometer scenarios")
    ap.add_argument("scenario", choices=sorted(SCENARIOS), help="scenario to run")
    ap.add_argument("--config", help="INI config file")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--threads", type=int, default=1, help="worker processes for sweep points")
    ap.add_argument("--seed", type=int, default=0, help="reserved; no stochastic paths")
    ap.add_argument("--strict", action="store_true", help="escalate warnings to errors")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.scenario, args.config, args.out, args.threads, args.seed, args.strict)


if __name__ == "__main__":
    sys.exit(main())
