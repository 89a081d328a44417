"""Classical noise model of the resonant-sensor mode.

Displacement PSDs are one-sided in m^2/Hz; the force sensitivity is
sqrt(S_xx / |chi|^2) in N/sqrt(Hz).  The thermal denominator uses the
standard damped-oscillator form (omega_res^2 - omega^2)^2 + omega^2 gamma^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .params import HBAR, KB, OMEGA_M_REF


class SpectraError(ValueError):
    pass


def coupling_from_mhz_per_nm(value: float) -> float:
    """dw_c/dx from a 'MHz/nm' figure, in rad s^-1 m^-1 (factor 2 pi included)."""
    return 2 * math.pi * value * 1e6 / 1e-9


def resonance(omega_m: float, r: float, frame: str = "squeezed") -> float:
    if frame == "squeezed":
        return omega_m * math.exp(-2 * r)
    if frame == "lab":
        return omega_m
    raise SpectraError(f"frame must be 'squeezed' or 'lab', got {frame!r}")


@dataclass(frozen=True)
class SpectraParams:
    mass: float = 4e-11
    omega_res: float = resonance(OMEGA_M_REF, 0.6)
    gamma: float = 2 * math.pi * 0.12
    temperature: float = 300.0
    probe_power: float = 20e-9
    omega_L: float = 2 * math.pi * 1e14
    kappa_total: float = 2 * math.pi * 1e8
    kappa_ex: float = 2 * math.pi * 1e8
    coupling_G: float = coupling_from_mhz_per_nm(500.0)
    detection_efficiency: float = 0.8

    def __post_init__(self):
        for name in ("mass", "omega_res", "gamma", "temperature", "probe_power", "omega_L",
                     "kappa_total", "kappa_ex", "coupling_G"):
            if not getattr(self, name) > 0:
                raise SpectraError(f"{name} must be positive")
        if not 0 < self.detection_efficiency <= 1:
            raise SpectraError("detection_efficiency must lie in (0, 1]")
        if self.kappa_ex > self.kappa_total * (1 + 1e-12):
            raise SpectraError("kappa_ex cannot exceed kappa_total")

    def replace(self, **changes) -> "SpectraParams":
        return replace(self, **changes)


REFERENCE_POWERS = (20e-12, 200e-12, 2e-9, 20e-9)


def intracavity_photons(sp: SpectraParams) -> float:
    """N = 4 P kappa_ex / (hbar omega_L kappa^2)."""
    return 4 * sp.probe_power * sp.kappa_ex / (HBAR * sp.omega_L * sp.kappa_total**2)


def susceptibility(sp: SpectraParams, omega):
    omega = np.asarray(omega, float)
    return 1.0 / (sp.mass * (sp.omega_res**2 - omega**2 - 1j * omega * sp.gamma))


def sxx_thermal(sp: SpectraParams, omega):
    omega = np.asarray(omega, float)
    den = sp.mass * ((sp.omega_res**2 - omega**2) ** 2 + omega**2 * sp.gamma**2)
    return 2 * sp.gamma * KB * sp.temperature / den


def sxx_shot(sp: SpectraParams, omega):
    omega = np.asarray(omega, float)
    n = intracavity_photons(sp)
    k = sp.kappa_total
    return k / (16 * sp.detection_efficiency * n * sp.coupling_G**2) * (1 + omega**2 / k**2)


def thermal_force_floor(sp: SpectraParams) -> float:
    return math.sqrt(2 * sp.mass * sp.gamma * KB * sp.temperature)


def force_sensitivity(sp: SpectraParams, omega, shot: bool = True):
    omega = np.asarray(omega, float)
    chi2 = np.abs(susceptibility(sp, omega)) ** 2
    total = sxx_thermal(sp, omega) + (sxx_shot(sp, omega) if shot else 0.0)
    return np.sqrt(total / chi2)


def default_grid(sp: SpectraParams, count: int = 20001) -> np.ndarray:
    return np.linspace(0.0, 5 * sp.omega_res, count)


def bandwidth(sp: SpectraParams, grid=None, factor: float = 2.0, shot: bool = True):
    """Contiguous interval around the optimum where the sensitivity is within ``factor`` of it.

    Endpoints inside the grid are located by root finding between grid
    points; an interval reaching the grid edge is clipped there.
    Returns (low, high) in rad/s, or None.
    """
    grid = default_grid(sp) if grid is None else np.asarray(grid, float)
    if grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise SpectraError("grid must be increasing with at least 3 points")
    s = force_sensitivity(sp, grid, shot)
    if not np.all(np.isfinite(s)):
        return None
    k = int(np.argmin(s))
    lo_b, hi_b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    if lo_b < hi_b:
        res = optimize.minimize_scalar(lambda w: float(force_sensitivity(sp, w, shot)), bounds=(lo_b, hi_b),
                                       method="bounded", options={"xatol": 1e-12 * max(hi_b, 1.0)})
        w_opt, s_opt = (float(res.x), float(res.fun)) if res.fun <= s[k] else (grid[k], s[k])
    else:
        w_opt, s_opt = grid[k], s[k]
    level = factor * s_opt
    if np.all(s <= level):
        return float(grid[0]), float(grid[-1])

    def g(w):
        return float(force_sensitivity(sp, w, shot)) - level

    above = s > level
    # nearest grid points above the level on each side of the optimum
    left = np.nonzero(above & (grid < w_opt))[0]
    right = np.nonzero(above & (grid > w_opt))[0]
    if left.size:
        i = left[-1]
        a = grid[i]
        b = min(grid[i + 1], w_opt)
        low = optimize.brentq(g, a, b, xtol=1e-12 * max(b, 1.0))
    else:
        low = float(grid[0])
    if right.size:
        j = right[0]
        b = grid[j]
        a = max(grid[j - 1], w_opt)
        high = optimize.brentq(g, a, b, xtol=1e-12 * max(b, 1.0))
    else:
        high = float(grid[-1])
    return float(low), float(high)


@dataclass(frozen=True)
class NoiseSpectrum:
    omegas: np.ndarray
    s_xx_thermal: np.ndarray
    s_xx_shot: np.ndarray
    s_xx_total: np.ndarray
    s_ff_sqrt: np.ndarray
    bandwidth: tuple[float, float] | None


def noise_spectrum(sp: SpectraParams, grid=None) -> NoiseSpectrum:
    grid = default_grid(sp) if grid is None else np.asarray(grid, float)
    th = sxx_thermal(sp, grid)
    sh = sxx_shot(sp, grid)
    tot = th + sh
    sff = np.sqrt(tot / np.abs(susceptibility(sp, grid)) ** 2)
    return NoiseSpectrum(grid, th, sh, tot, sff, bandwidth(sp, grid))


# --- tables -------------------------------------------------------------------

SPECTRUM_HEADER = ["power_W", "omega_rad_s", "freq_hz", "sxx_thermal", "sxx_shot", "sxx_total", "sff_sqrt"]
BANDWIDTH_HEADER = ["power_W", "photons", "low_rad_s", "high_rad_s", "low_hz", "high_hz", "width_hz",
                    "best_sff_sqrt"]


def spectrum_rows(sp: SpectraParams, powers, grid) -> list[list[float]]:
    rows = []
    for pw in powers:
        ns = noise_spectrum(sp.replace(probe_power=float(pw)), grid)
        for w, a, b, c, d in zip(ns.omegas, ns.s_xx_thermal, ns.s_xx_shot, ns.s_xx_total, ns.s_ff_sqrt):
            rows.append([float(pw), w, w / (2 * math.pi), a, b, c, d])
    return rows


def bandwidth_rows(sp: SpectraParams, powers, grid) -> list[list[float]]:
    rows = []
    for pw in powers:
        q = sp.replace(probe_power=float(pw))
        bw = bandwidth(q, grid)
        best = float(np.min(force_sensitivity(q, grid)))
        lo, hi = bw if bw is not None else (math.nan, math.nan)
        rows.append([float(pw), intracavity_photons(q), lo, hi, lo / (2 * math.pi), hi / (2 * math.pi),
                     (hi - lo) / (2 * math.pi), best])
    return rows
