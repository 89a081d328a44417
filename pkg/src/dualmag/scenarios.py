"""Scenario definitions: sweep axes, options and per-point table rows.

A scenario is a cartesian product of axes.  Every point is evaluated
independently and returns rows for one or more named tables; rows are
concatenated in point order, so the output never depends on scheduling.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import analytic, fisher, lindblad, spectra
from .params import SystemParams, derive, with_r
from .spectra import SpectraParams

# dissipative runs are kept at desk scale
MAX_DISSIPATIVE_R = 0.8
MAX_DISSIPATIVE_ALPHA = 1.5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    name: str
    values: tuple

    @property
    def size(self) -> int:
        return len(self.values)


_AXIS_RE = re.compile(r"^\s*(lin|log|list)\s*\((.*)\)\s*$")


def parse_axis(name: str, text: str) -> Axis:
    """``lin(a, b, n)``, ``log(a, b, n)``, ``list(v1, v2, ...)`` or a single number."""
    m = _AXIS_RE.match(text)
    if m is None:
        try:
            return Axis(name, (float(text),))
        except ValueError:
            raise ConfigError(f"axis {name!r}: cannot parse {text!r}") from None
    kind, body = m.group(1), m.group(2)
    try:
        parts = [float(x) for x in body.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"axis {name!r}: non-numeric entry in {text!r}") from None
    if kind == "list":
        if not parts:
            raise ConfigError(f"axis {name!r}: empty list")
        return Axis(name, tuple(parts))
    if len(parts) != 3 or parts[2] != int(parts[2]):
        raise ConfigError(f"axis {name!r}: {kind}() takes start, stop, integer count")
    a, b, n = parts[0], parts[1], int(parts[2])
    if n < 2:
        raise ConfigError(f"axis {name!r}: count must be >= 2, got {n}")
    if kind == "log":
        if a <= 0 or b <= 0:
            raise ConfigError(f"axis {name!r}: log axis needs positive bounds")
        vals = np.geomspace(a, b, n)
    else:
        vals = np.linspace(a, b, n)
    return Axis(name, tuple(float(v) for v in vals))


def format_axis(axis: Axis) -> str:
    return "list(" + ", ".join(repr(v) for v in axis.values) + ")"


@dataclass(frozen=True)
class Point:
    index: int
    values: dict[str, float]


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    tables: dict[str, list[str]]
    axes: dict[str, str]  # default axis expressions
    options: dict[str, Any]  # default scalar options
    evaluate: Callable[["Context", Point], tuple[dict[str, list[list]], dict[str, Any]]]
    sort_axes: bool = False
    dissipative: bool = False


@dataclass(frozen=True)
class Context:
    params: SystemParams
    spectra: SpectraParams
    options: dict[str, Any]
    strict: bool = False


def points(axes: list[Axis], sort: bool = False) -> list[Point]:
    vals = [sorted(a.values) if sort else list(a.values) for a in axes]
    names = [a.name for a in axes]
    return [Point(i, dict(zip(names, combo))) for i, combo in enumerate(itertools.product(*vals))]


def _p_at(ctx: Context, pt: Point) -> SystemParams:
    p = ctx.params
    if "r" in pt.values:
        p = with_r(p, pt.values["r"])
    return p


def _dissipative_params(ctx: Context, pt: Point) -> SystemParams:
    o = {**ctx.options, **pt.values}
    p = ctx.params
    wm = p.omega_m
    p = p.replace(kappa=float(o["kappa_over_wm"]) * wm, gamma=float(o["gamma_over_wm"]) * wm,
                  n_th=float(o["n_th"]))
    r = float(o["r"])
    if r > MAX_DISSIPATIVE_R:
        raise ConfigError(f"dissipative scenarios are capped at r <= {MAX_DISSIPATIVE_R}, got {r}")
    if abs(p.alpha) > MAX_DISSIPATIVE_ALPHA:
        raise ConfigError(f"dissipative scenarios are capped at |alpha| <= {MAX_DISSIPATIVE_ALPHA}")
    return with_r(p, r)


def _lindblad_kwargs(o: dict[str, Any]) -> dict[str, Any]:
    kw: dict[str, Any] = {"convergence": str(o["convergence"]), "richardson": bool(o["richardson"]),
                          "drift_tol": float(o["drift_tol"]), "mechanics": str(o["mechanics"])}
    if o.get("mech_dim"):
        kw["mech_dim"] = int(o["mech_dim"])
    if o.get("cavity_dim"):
        kw["cavity_dim"] = int(o["cavity_dim"])
    return kw


def _slim(info: dict[str, Any]) -> dict[str, Any]:
    """Keep the manifest small: summary of conservation logs instead of every entry."""
    out = {k: v for k, v in info.items() if k not in ("conservation", "point_diagnostics")}
    log = info.get("conservation") or []
    if log:
        out["conservation_summary"] = {
            "max_trace_defect": max(c["trace_defect"] for c in log),
            "max_hermiticity_defect": max(c["hermiticity_defect"] for c in log),
            "min_eigenvalue": min(c["min_eigenvalue"] for c in log),
            "checkpoints": len(log),
        }
    return out


# --- evaluators ------------------------------------------------------------------

def _derive(ctx: Context, pt: Point):
    p = _p_at(ctx, pt)
    d = derive(p)
    rows = [[k, v] for k, v in d.as_dict().items()]
    return {"derived": rows}, {"derived": d.as_dict()}


def _squeezing(ctx: Context, pt: Point):
    p = _p_at(ctx, pt)
    d = derive(p)
    o = ctx.options
    periods, count = float(o["periods"]), int(o["count"])
    times = np.linspace(0.0, periods * d.tau1, count)
    rows = [[d.r] + row for row in analytic.squeezing_rows(d, times)]
    return {"squeezing": rows}, {"r": d.r, "max_squeezing_db": analytic.max_squeezing_db(d.r)}


def _tomography(ctx: Context, pt: Point):
    ls = [int(v) for v in _int_list(ctx.options["l"])]
    return {"tomography": analytic.tomography_rows(ctx.params, [pt.values["sqrt_N2"]], ls)}, {}


def _pae(ctx: Context, pt: Point):
    ns = [int(v) for v in _int_list(ctx.options["n"])]
    return {"pae": analytic.pae_rows(ctx.params, [pt.values["sqrt_N2"]], ns)}, {}


def _qfi(ctx: Context, pt: Point):
    rows = fisher.qfi_rows(ctx.params, [pt.values["r"]])
    return {"qfi": [row + [math.log(row[2]) if row[2] > 0 else -math.inf] for row in rows]}, {}


def _surface(ctx: Context, pt: Point):
    return {"surface": fisher.surface_rows(ctx.params, [pt.values["N1"]], [pt.values["N2"]])}, {}


def _vs_r(ctx: Context, pt: Point):
    p = _p_at(ctx, pt)
    theta = float(ctx.options["theta"])
    fq = fisher.qfi_analytic_tau1(p)
    fc = fisher.cfi_analytic_tau1(p, theta)
    # the analytic CFI is per unit |alpha|^2; scale to N1 photons
    fc = fisher.FisherReport(fc.value * p.N1, "CFI", "analytic", fc.tau1, fc.t, theta)
    row = [pt.values["r"], fq.value, fc.value, fq.sensitivity_per_sqrt_hz,
           fc.sensitivity_per_sqrt_hz if fc.value > 0 else math.inf, fisher.sensitivity_bound_closed_form(p)]
    return {"sensitivity": [row]}, {}


def _window(ctx: Context, pt: Point):
    o = ctx.options
    p = _dissipative_params(ctx, pt)
    grid = lindblad.window_grid(p, int(o["count"]), float(o["half_width"]))
    ws = lindblad.cfi_time_window(p, grid, float(o["theta"]), **_lindblad_kwargs(o))
    tau1 = derive(p).tau1
    rows = [[t, t / tau1, v] for t, v in zip(ws.times, ws.cfi)]
    return {"window": rows}, {"flatness": ws.flatness, "cfi_tau1": ws.cfi_tau1, **_slim(ws.diagnostics)}


def _vs_nth(ctx: Context, pt: Point):
    o = ctx.options
    p = _dissipative_params(ctx, pt)
    rep = lindblad.cfi_dissipative(p, None, float(o["theta"]), **_lindblad_kwargs(o))
    scaled = rep.value * p.N1 / abs(p.alpha) ** 2
    row = [p.n_th, rep.value, math.sqrt(rep.tau1 / scaled) if scaled > 0 else math.inf]
    return {"nth": [row]}, _slim(rep.diagnostics)


def _vs_decay(ctx: Context, pt: Point):
    o = ctx.options
    p = _dissipative_params(ctx, pt)
    rep = lindblad.cfi_dissipative(p, None, float(o["theta"]), **_lindblad_kwargs(o))
    scaled = rep.value * p.N1 / abs(p.alpha) ** 2
    row = [p.kappa / p.omega_m, p.gamma / p.omega_m, derive(p).r, rep.value,
           math.sqrt(rep.tau1 / scaled) if scaled > 0 else math.inf]
    return {"decay": [row]}, _slim(rep.diagnostics)


def _spectra(ctx: Context, pt: Point):
    sp = ctx.spectra
    o = ctx.options
    grid = np.linspace(0.0, float(o["max_over_res"]) * sp.omega_res, int(o["count"]))
    power = pt.values["power"]
    tables = {"spectrum": spectra.spectrum_rows(sp, [power], grid),
              "bandwidth": spectra.bandwidth_rows(sp, [power], grid)}
    return tables, {"thermal_force_floor": spectra.thermal_force_floor(sp)}


def _int_list(value) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    return [int(float(v)) for v in str(value).replace("list(", "").replace(")", "").split(",") if v.strip()]


_DISSIPATIVE_OPTIONS = {"r": 0.3, "kappa_over_wm": 0.01, "gamma_over_wm": 0.001, "n_th": 10.0,
                        "theta": math.pi / 2, "mech_dim": 0, "cavity_dim": 0, "mechanics": "coherent",
                        "convergence": "reduce", "richardson": True, "drift_tol": lindblad.DRIFT_TOL}

SCENARIOS: dict[str, Scenario] = {}


def _register(s: Scenario):
    SCENARIOS[s.name] = s


_register(Scenario("derive", "Derived squeezed-frame quantities", {"derived": ["quantity", "value"]},
                   {}, {}, _derive))
_register(Scenario("squeezing", "Mechanical quadrature variance and squeezing degree over time",
                   {"squeezing": ["r"] + analytic.SQUEEZING_HEADER},
                   {"r": "list(0.2, 0.4021, 0.5756)"}, {"periods": 2.0, "count": 401}, _squeezing))
_register(Scenario("tomography", "Two-level cavity tomography at the first decoupling time",
                   {"tomography": analytic.TOMOGRAPHY_HEADER},
                   {"sqrt_N2": "list(0, 500, 1000, 1400)"}, {"l": "list(1, 2, 3)"}, _tomography))
_register(Scenario("pae", "Phase accumulation efficiency per Fock branch",
                   {"pae": analytic.PAE_HEADER}, {"sqrt_N2": "lin(0, 1500, 16)"}, {"n": "list(1, 2, 3, 4)"}, _pae))
_register(Scenario("qfi", "Closed-form QFI at the first decoupling time versus r",
                   {"qfi": fisher.QFI_HEADER + ["ln_F_q"]}, {"r": "lin(0, 0.9, 19)"}, {}, _qfi))
_register(Scenario("sensitivity-surface", "Sensitivity bound over (N1, N2)",
                   {"surface": fisher.SURFACE_HEADER},
                   {"N1": "log(1e4, 1e8, 20)", "N2": "lin(0, 2.4e6, 20)"}, {}, _surface, sort_axes=True))
_register(Scenario("sensitivity-vs-r", "QFI/CFI sensitivity bounds versus r",
                   {"sensitivity": ["r", "F_q", "F_c", "dB_qfi_per_sqrt_hz_T", "dB_cfi_per_sqrt_hz_T",
                                    "dB_closed_form_per_sqrt_hz_T"]},
                   {"r": "lin(0, 0.9, 19)"}, {"theta": math.pi / 2}, _vs_r))
_register(Scenario("cfi-window", "Dissipative homodyne CFI over a time window around tau_1",
                   {"window": lindblad.WINDOW_HEADER}, {},
                   {**_DISSIPATIVE_OPTIONS, "r": 0.8, "gamma_over_wm": 0.01, "count": 41, "half_width": 0.2,
                    "richardson": False, "drift_tol": 0.02},
                   _window, dissipative=True))
_register(Scenario("cfi-vs-nth", "Dissipative homodyne CFI at tau_1 versus thermal occupation",
                   {"nth": lindblad.NTH_HEADER}, {"n_th": "log(1e-2, 1e3, 6)"},
                   {k: v for k, v in _DISSIPATIVE_OPTIONS.items() if k != "n_th"}, _vs_nth, dissipative=True))
_register(Scenario("cfi-vs-decay", "Dissipative homodyne CFI at tau_1 versus decay rates",
                   {"decay": lindblad.DECAY_HEADER},
                   {"kappa_over_wm": "list(0.01, 0.05, 0.1)", "gamma_over_wm": "list(0.001)"},
                   {k: v for k, v in _DISSIPATIVE_OPTIONS.items() if k not in ("kappa_over_wm", "gamma_over_wm")},
                   _vs_decay, dissipative=True))
_register(Scenario("spectra", "Displacement noise spectra and force-sensitivity bandwidth",
                   {"spectrum": spectra.SPECTRUM_HEADER, "bandwidth": spectra.BANDWIDTH_HEADER},
                   {"power": "list(" + ", ".join(repr(v) for v in spectra.REFERENCE_POWERS) + ")"},
                   {"count": 2001, "max_over_res": 5.0}, _spectra))


def resolve_options(s: Scenario, raw: dict[str, str]) -> tuple[dict[str, Any], list[Axis]]:
    """Split a config section into scalar options and sweep axes, applying defaults."""
    unknown = set(raw) - set(s.options) - set(s.axes)
    if unknown:
        raise ConfigError(f"[{s.name}] unknown keys: {', '.join(sorted(unknown))}")
    opts: dict[str, Any] = {}
    for k, default in s.options.items():
        if k not in raw:
            opts[k] = default
            continue
        text = raw[k].strip()
        if isinstance(default, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"[{s.name}] {k}: expected a boolean, got {text!r}")
            opts[k] = text.lower() in ("true", "1", "yes")
        elif isinstance(default, int):
            try:
                opts[k] = int(float(text))
            except ValueError:
                raise ConfigError(f"[{s.name}] {k}: expected an integer, got {text!r}") from None
        elif isinstance(default, float):
            try:
                opts[k] = float(text)
            except ValueError:
                raise ConfigError(f"[{s.name}] {k}: expected a number, got {text!r}") from None
        else:
            opts[k] = text
    if "convergence" in opts and opts["convergence"] not in lindblad.CONVERGENCE_MODES:
        raise ConfigError(f"[{s.name}] convergence must be one of {lindblad.CONVERGENCE_MODES}")
    if "mechanics" in opts and opts["mechanics"] not in lindblad.INITIAL_STATES:
        raise ConfigError(f"[{s.name}] mechanics must be one of {lindblad.INITIAL_STATES}")
    axes = [parse_axis(k, raw.get(k, default)) for k, default in s.axes.items()]
    return opts, axes

