"""Quantum/classical Fisher information for B_z and the derived sensitivities.

Two sensitivity conventions are exposed:

* per shot:  1/sqrt(F), scaling as e^{-6r} with the squeezing parameter;
* per sqrt(Hz): sqrt(tau_1/F), i.e. one detection every tau_1 seconds.  Since
  tau_1 = 2 pi e^{2r}/omega_m grows with r, this scales as e^{-5r}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import integrate

from . import analytic
from .analytic import EvolutionSpec
from .fock import QuantumState, TruncationError
from .params import HBAR, SystemParams, derive

DEFAULT_GRID = np.linspace(-12.0, 12.0, 2401)
PDF_FLOOR = 1e-14
PHASE_STEP = 1e-4
RICHARDSON_TOL = 5e-3
QUADRATURE_TOL = 5e-3


class FiniteDifferenceError(RuntimeError):
    """Central-difference estimate not converged in the B_z step."""


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class HomodyneDistribution:
    theta: float
    grid: np.ndarray
    pdf: np.ndarray
    integration_rule: dict[str, Any]


@dataclass(frozen=True)
class FisherReport:
    value: float
    kind: str  # "QFI" | "CFI"
    method: str  # "analytic" | "numeric"
    tau1: float
    t: float
    theta: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def sensitivity_per_shot(self) -> float:
        return 1.0 / math.sqrt(self.value) if self.value > 0 else math.inf

    @property
    def sensitivity_per_sqrt_hz(self) -> float:
        return math.sqrt(self.tau1 / self.value) if self.value > 0 else math.inf


def qfi_prefactor(p: SystemParams) -> float:
    """32 pi^2 m lambda1^2 L^2 alpha_mag^2 / (hbar omega_m E^2), in T^-2."""
    return (32 * math.pi**2 * p.mass * p.lambda1**2 * p.rod_length**2 * p.alpha_mag**2
            / (HBAR * p.omega_m * p.young_modulus**2))


def qfi_analytic_tau1(p: SystemParams) -> FisherReport:
    d = derive(p)
    value = qfi_prefactor(p) * p.N1 * math.exp(12 * d.r)
    return FisherReport(value, "QFI", "analytic", d.tau1, d.tau1, diagnostics={"N1": p.N1, "r": d.r})


def cfi_analytic_tau1(p: SystemParams, theta: float, alpha: complex | None = None) -> FisherReport:
    d = derive(p)
    a = p.alpha if alpha is None else complex(alpha)
    bracket = a.real * math.sin(theta) - a.imag * math.cos(theta)
    value = qfi_prefactor(p) * math.exp(12 * d.r) * bracket**2
    return FisherReport(value, "CFI", "analytic", d.tau1, d.tau1, theta,
                        diagnostics={"alpha": [a.real, a.imag], "r": d.r})


def sensitivity(report: FisherReport, mode: str = "per_sqrt_hz") -> float:
    if report.value <= 0:
        raise ValueError("Fisher information is zero; sensitivity undefined")
    if mode == "per_shot":
        return report.sensitivity_per_shot
    if mode == "per_sqrt_hz":
        return report.sensitivity_per_sqrt_hz
    raise ValueError(f"unknown sensitivity mode {mode!r}")


def sensitivity_bound_closed_form(p: SystemParams) -> float:
    """[E e^{-5r} / (4 pi lambda1 L alpha_mag)] sqrt(pi hbar / (m N1)), T/sqrt(Hz)."""
    r = derive(p).r
    return (p.young_modulus * math.exp(-5 * r) / (4 * math.pi * p.lambda1 * p.rod_length * p.alpha_mag)
            * math.sqrt(math.pi * HBAR / (p.mass * p.N1)))


def fisher_scale(p: SystemParams) -> float:
    """Order-of-magnitude Fisher information for the current amplitude; used for absolute floors."""
    r = derive(p).r
    return qfi_prefactor(p) * math.exp(12 * r) * max(abs(p.alpha) ** 2, 1.0)


def default_field_step(p: SystemParams, phase: float = PHASE_STEP) -> float:
    """B_z step inducing roughly ``phase`` rad on the dominant branch at tau_1."""
    d = derive(p)
    dfdB = d.drive_per_tesla * math.exp(d.r) / d.omega_s  # d f_tilde / d B_z
    a = abs(p.alpha)
    eta_dom = abs(d.lambda_tilde) * (a * a + 2 * a + 1) + abs(d.f_tilde)
    scale = 4 * math.pi * dfdB * max(eta_dom, 1e-3)
    return phase / scale


def _shifted(p: SystemParams, dB: float) -> SystemParams:
    return p.replace(B_z=p.B_z + dB)


def _agree(f1: float, f2: float, floor: float, tol: float = RICHARDSON_TOL) -> float:
    gap = abs(f1 - f2)
    if gap > tol * max(abs(f1), abs(f2)) + floor:
        raise FiniteDifferenceError(
            f"Richardson disagreement {gap:.3e} between {f1:.6e} and {f2:.6e}")
    return gap / max(abs(f1), abs(f2), floor)


def _pure_qfi(psi0, dpsi) -> float:
    return 4.0 * (np.vdot(dpsi, dpsi).real - abs(np.vdot(psi0, dpsi)) ** 2)


def qfi_numeric(spec: EvolutionSpec, dB_step: float | None = None, method: str = "derivative",
                cavity_dim: int | None = None, mech_dim: int | None = None) -> FisherReport:
    """QFI of the closed-form joint pure state by finite differences in B_z.

    ``method="derivative"``: 4(<dpsi|dpsi> - |<psi|dpsi>|^2) with a
    Richardson-extrapolated central difference.  ``method="fidelity"``:
    8(1 - |<psi(B-h)|psi(B+h)>|)/(2h)^2, extrapolated in h.
    """
    p = spec.params
    d = spec.derived
    center = analytic.materialize_state(spec, cavity_dim, mech_dim)
    cdim, mdim = center.dims
    floor = 1e-9 * fisher_scale(p)

    def state(dB):
        return analytic.materialize_state(EvolutionSpec(_shifted(p, dB), spec.t), cdim, mdim).data

    if method == "derivative":
        h = default_field_step(p) if dB_step is None else dB_step
        d1 = (state(h) - state(-h)) / (2 * h)
        d2 = (state(h / 2) - state(-h / 2)) / h
        f1 = _pure_qfi(center.data, d1)
        f2 = _pure_qfi(center.data, d2)
        rel = _agree(f1, f2, floor)
        value = _pure_qfi(center.data, (4 * d2 - d1) / 3)
    elif method == "fidelity":
        h = 10 * default_field_step(p) if dB_step is None else dB_step

        def fid_qfi(step):
            ov = abs(np.vdot(state(-step), state(step)))
            return 8.0 * (1.0 - ov) / (2 * step) ** 2

        f1 = fid_qfi(h)
        f2 = fid_qfi(h / 2)
        rel = _agree(f1, f2, floor)
        value = (4 * f2 - f1) / 3
    else:
        raise ValueError(f"unknown QFI method {method!r}")
    return FisherReport(max(value, 0.0), "QFI", "numeric", d.tau1, spec.t,
                        diagnostics={"dims": [cdim, mdim], "dB_step": h, "method": method,
                                     "richardson_rel_gap": rel})


def hermite_functions(nmax: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal oscillator eigenfunctions psi_n(x), n < nmax, by stable recurrence."""
    x = np.asarray(x, float)
    out = np.empty((nmax, x.size))
    out[0] = math.pi ** -0.25 * np.exp(-0.5 * x * x)
    if nmax > 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(1, nmax - 1):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def _simpson_with_error(y: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    full = integrate.simpson(y, x=x)
    if x.size >= 5 and x.size % 2 == 1:
        coarse = integrate.simpson(y[::2], x=x[::2])
        err = abs(full - coarse) / 15.0
    else:
        err = float("nan")
    return float(full), float(err)


def homodyne_pdf(rho_c: QuantumState | np.ndarray, theta: float, grid=None) -> HomodyneDistribution:
    """P(X_theta) = sum rho_nn' psi_n(X) psi_n'(X) e^{-i theta (n - n')}."""
    rho = rho_c.dm() if isinstance(rho_c, QuantumState) else np.asarray(rho_c)
    if isinstance(rho_c, QuantumState) and len(rho_c.dims) != 1:
        raise ValueError("homodyne_pdf needs a single-mode state")
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, float)
    pdf = _pdf_values(rho, theta, grid)
    norm, err = _simpson_with_error(pdf, grid)
    if abs(norm - 1.0) > 1e-4:
        raise TruncationError(f"homodyne pdf norm defect {abs(norm - 1):.3e}")
    return HomodyneDistribution(theta, grid, pdf,
                                {"rule": "composite-simpson", "norm": norm, "error_estimate": err})


def _pdf_values(rho: np.ndarray, theta: float, grid: np.ndarray) -> np.ndarray:
    dim = rho.shape[0]
    n = np.arange(dim)
    rot = rho * np.exp(-1j * theta * (n[:, None] - n[None, :]))
    psi = hermite_functions(dim, grid)
    vals = np.einsum("nx,nx->x", psi, rot @ psi)
    scale = max(float(np.max(np.abs(vals.real))), 1e-300)
    if np.max(np.abs(vals.imag)) > 1e-10 * scale:
        raise ValueError("density matrix is not Hermitian enough for a real pdf")
    pdf = vals.real
    if pdf.min() < -1e-8 * scale:
        raise ValueError(f"homodyne pdf has negative values ({pdf.min():.3e})")
    return np.clip(pdf, 0.0, None)


def fisher_from_pdfs(p_plus: np.ndarray, p_minus: np.ndarray, step: float, grid: np.ndarray,
                     p_center: np.ndarray | None = None) -> tuple[float, float]:
    """integral (dP/dB)^2 / P dX from a central difference; returns (value, quadrature error)."""
    dp = (p_plus - p_minus) / (2 * step)
    pc = 0.5 * (p_plus + p_minus) if p_center is None else p_center
    mask = pc > PDF_FLOOR * pc.max()
    integrand = np.zeros_like(pc)
    integrand[mask] = dp[mask] ** 2 / pc[mask]
    return _simpson_with_error(integrand, grid)


def cfi_from_rhos(rhos: dict[float, np.ndarray], h: float, theta: float, grid=None,
                  floor: float = 0.0) -> tuple[float, dict[str, Any]]:
    """CFI from cavity density matrices at B_z offsets {+h, -h, +h/2, -h/2} (half-step optional).

    Returns the Richardson-extrapolated value when half-step states are present.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, float)
    pdf = {k: _pdf_values(v, theta, grid) for k, v in rhos.items()}
    f1, q1 = fisher_from_pdfs(pdf[h], pdf[-h], h, grid)
    diag: dict[str, Any] = {"quadrature_error": q1}
    value = f1
    if h / 2 in pdf:
        f2, q2 = fisher_from_pdfs(pdf[h / 2], pdf[-h / 2], h / 2, grid)
        diag["richardson_rel_gap"] = _agree(f1, f2, floor)
        value = (4 * f2 - f1) / 3
        diag["quadrature_error"] = max(q1, q2)
    if diag["quadrature_error"] > QUADRATURE_TOL * abs(value) + floor:
        raise QuadratureError(f"quadrature error {diag['quadrature_error']:.3e} for CFI {value:.3e}")
    return max(value, 0.0), diag


def cfi_numeric(p: SystemParams, t: float, theta: float, dB_step: float | None = None, grid=None,
                cavity_dim: int | None = None) -> FisherReport:
    """Homodyne CFI of the closed-form reduced cavity state at time t."""
    spec = EvolutionSpec(p, t)
    cdim = analytic.cavity_dim(spec) if cavity_dim is None else cavity_dim
    h = default_field_step(p) if dB_step is None else dB_step
    rhos = {s: analytic.reduced_cavity_rho(EvolutionSpec(_shifted(p, s), t), cdim).data
            for s in (h, -h, h / 2, -h / 2)}
    value, diag = cfi_from_rhos(rhos, h, theta, grid, floor=1e-9 * fisher_scale(p))
    diag.update({"dims": [cdim], "dB_step": h})
    return FisherReport(value, "CFI", "numeric", derive(p).tau1, t, theta, diagnostics=diag)


# --- tables -----------------------------------------------------------------

QFI_HEADER = ["r", "N2", "F_q", "dB_per_shot_T", "dB_per_sqrt_hz_T"]
SURFACE_HEADER = ["N1", "N2", "r", "F_q", "dB_per_sqrt_hz_T"]
THETA_HEADER = ["theta", "F_c", "F_c_over_F_q"]


def qfi_rows(p: SystemParams, r_values) -> list[list[float]]:
    from .params import with_r

    rows = []
    for r in r_values:
        q = with_r(p, float(r))
        rep = qfi_analytic_tau1(q)
        rows.append([float(r), q.N2, rep.value, rep.sensitivity_per_shot, rep.sensitivity_per_sqrt_hz])
    return rows


def surface_rows(p: SystemParams, n1_values, n2_values) -> list[list[float]]:
    rows = []
    for n1 in sorted(float(v) for v in n1_values):
        for n2 in sorted(float(v) for v in n2_values):
            q = p.replace(N1=n1, N2=n2)
            rep = qfi_analytic_tau1(q)
            rows.append([n1, n2, derive(q).r, rep.value, rep.sensitivity_per_sqrt_hz])
    return rows


def theta_rows(p: SystemParams, thetas) -> list[list[float]]:
    fq = qfi_analytic_tau1(p.replace(N1=abs(p.alpha) ** 2)).value
    rows = []
    for th in thetas:
        fc = cfi_analytic_tau1(p, float(th)).value
        rows.append([float(th), fc, fc / fq if fq > 0 else 0.0])
    return rows
