"""Closed-form dynamics of the dual-coupling system (no dissipation).

The joint cavity/mechanics state is a sum over cavity Fock branches ``n``; in
each branch the mechanics sits in the state S^dag(r) S(r') |phi_n(t)> and the
branch picks up a phase that carries the magnetic signal.  The free cavity
rotation exp(-i omega_1 a^dag a t) is dropped; it cancels in every observable
computed here.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from . import fock
from .fock import QuantumState, TruncationError
from .params import DerivedParams, SystemParams, derive

MAX_MECH_DIM = 512


@dataclass(frozen=True)
class EvolutionSpec:
    params: SystemParams
    t: float
    derived: DerivedParams = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("t must be >= 0")
        object.__setattr__(self, "derived", derive(self.params))

    @property
    def alpha(self) -> complex:
        return self.params.alpha

    @property
    def beta(self) -> complex:
        return self.params.beta

    @property
    def beta_re(self) -> float:
        return self.params.beta.real

    @property
    def beta_im(self) -> float:
        return self.params.beta.imag

    def at(self, t: float) -> "EvolutionSpec":
        return EvolutionSpec(self.params, t)

    def with_params(self, **changes) -> "EvolutionSpec":
        return EvolutionSpec(self.params.replace(**changes), self.t)


@dataclass(frozen=True)
class BranchState:
    n: int
    phase: float
    eta: float
    mech_amplitude: complex
    mu_bar: complex
    r_prime: complex


def branch(n: int, spec: EvolutionSpec) -> BranchState:
    if n < 0:
        raise ValueError("branch index must be >= 0")
    d = spec.derived
    r = d.r
    th = d.omega_s * spec.t
    eta = d.lambda_tilde * n - d.f_tilde
    rot = cmath.exp(-1j * th)
    mu_bar = (1 - rot) * (math.cosh(r) - rot * math.sinh(r))
    phase = eta**2 * (th - math.sin(th)) + eta * (
        spec.beta_re * math.sin(th) * math.exp(-r) - spec.beta_im * (math.cos(th) - 1) * math.exp(r)
    )
    return BranchState(
        n=n,
        phase=phase,
        eta=eta,
        mech_amplitude=rot * spec.beta + eta * mu_bar,
        mu_bar=mu_bar,
        r_prime=r * cmath.exp(-2j * th),
    )


def cavity_dim(spec: EvolutionSpec) -> int:
    return max(fock.coherent_dim(spec.alpha), 2)


def mechanical_dim(spec: EvolutionSpec, cdim: int | None = None) -> int:
    """Starting mechanical truncation; intermediate states reach S^dag(2r), hence e^{4r}."""
    cdim = cavity_dim(spec) if cdim is None else cdim
    d = spec.derived
    # largest displacement over a period among branches carrying weight
    n_eff = abs(spec.alpha) ** 2 + 4 * abs(spec.alpha) + 2
    eta_max = abs(d.lambda_tilde) * min(n_eff, cdim) + abs(d.f_tilde)
    a = abs(spec.beta) + 2 * math.exp(d.r) * eta_max
    return int(math.ceil((a * a + 6 * a + 10) * math.exp(4 * d.r)))


def _branch_vectors(spec: EvolutionSpec, branches, work_dim: int) -> np.ndarray:
    r = spec.derived.r
    rp = branches[0].r_prime
    frame = fock.squeeze(r, work_dim).conj().T @ fock.squeeze(rp, work_dim)
    vecs = np.empty((len(branches), work_dim), dtype=complex)
    for k, b in enumerate(branches):
        vecs[k] = frame @ fock.displacement(b.mech_amplitude, work_dim)[:, 0]
    return vecs


def materialize_state(
    spec: EvolutionSpec, cavity_dim_: int | None = None, mech_dim: int | None = None
) -> QuantumState:
    """Joint pure state sum_n c_n e^{i Phi_n} |n> (x) S^dag(r) S(r') D(phi_n)|0>.

    Mechanical factors are built with matrix exponentials in a padded working
    space and truncated; when ``mech_dim`` is not given it is doubled until the
    weighted truncation defect drops below 1e-8.
    """
    cdim = cavity_dim(spec) if cavity_dim_ is None else cavity_dim_
    c = fock.coherent(spec.alpha, cdim).data
    branches = [branch(n, spec) for n in range(cdim)]
    auto = mech_dim is None
    mdim = mechanical_dim(spec, cdim) if auto else mech_dim
    while True:
        work = 2 * mdim + 20
        vecs = _branch_vectors(spec, branches, work)
        kept = vecs[:, :mdim]
        weights = np.abs(c) ** 2
        defect = float(np.sum(weights * (1.0 - np.sum(np.abs(kept) ** 2, axis=1))))
        if defect <= fock.NORM_DEFECT_TOL:
            break
        if not auto or 2 * mdim > MAX_MECH_DIM:
            raise TruncationError(f"mechanical truncation {mdim} leaves norm defect {defect:.3e}")
        mdim *= 2
    phases = np.exp(1j * np.array([b.phase for b in branches]))
    psi = (c * phases)[:, None] * kept
    psi = psi.ravel()
    return QuantumState(psi / np.linalg.norm(psi), (cdim, mdim))


def reduced_cavity_rho(spec: EvolutionSpec, cavity_dim_: int | None = None) -> QuantumState:
    """Cavity density matrix after tracing the mechanics, via coherent-state overlaps."""
    cdim = cavity_dim(spec) if cavity_dim_ is None else cavity_dim_
    c = fock.coherent(spec.alpha, cdim).data
    bs = [branch(n, spec) for n in range(cdim)]
    phi = np.array([b.mech_amplitude for b in bs])
    amp = c * np.exp(1j * np.array([b.phase for b in bs]))
    mag = np.abs(phi) ** 2
    overlap = np.exp(-0.5 * (mag[:, None] + mag[None, :]) + phi[:, None] * phi.conj()[None, :])
    rho = np.outer(amp, amp.conj()) * overlap
    return QuantumState(rho, (cdim,))


def phase_at_decoupling(n: int, m: int, d: DerivedParams) -> float:
    """Phi_n(tau_m) = 2 m pi (lambda_s n/omega_s - f_s/omega_s)^2."""
    if m < 1:
        raise ValueError("decoupling index m must be >= 1")
    return 2 * m * math.pi * (d.lambda_tilde * n - d.f_tilde) ** 2


def decoupling_time(m: int, d: DerivedParams) -> float:
    return m * d.tau1


def pae(n: int, p: SystemParams) -> float:
    """Displaced phase accumulation efficiency (rad/s) on Fock branch n."""
    d = derive(p)
    return (p.lambda1 * n / p.omega_m) * (p.lambda1 * n - 2 * d.f) * math.exp(4 * d.r)


def variance_x(t, d: DerivedParams):
    """Mechanical X variance in the alpha = 0 illustration (vacuum variance 1/2)."""
    r = d.r
    return 0.5 * math.exp(2 * r) * (math.cosh(2 * r) - np.cos(2 * d.omega_s * np.asarray(t)) * math.sinh(2 * r))


def squeezing_degree(t, d: DerivedParams):
    """S(t) = 10 log10(dX^2 / (1/2)) in dB."""
    return 10.0 * np.log10(variance_x(t, d) / 0.5)


def max_squeezing_db(r: float) -> float:
    return 10.0 * math.log10(math.exp(4 * r))


def mechanical_state(spec: EvolutionSpec, mech_dim: int) -> QuantumState:
    """Mechanical factor with the cavity in vacuum and no drive: S^dag(r) S(r') |beta(t)>."""
    free = spec.with_params(alpha=0, B_z=0.0)
    b = branch(0, free)
    work = 2 * mech_dim + 20
    v = _branch_vectors(free, [b], work)[0][:mech_dim]
    defect = 1 - np.vdot(v, v).real
    if defect > fock.NORM_DEFECT_TOL:
        raise TruncationError(f"mechanical state norm defect {defect:.3e}")
    return QuantumState(v / np.linalg.norm(v), (mech_dim,))


@dataclass(frozen=True)
class Tomography:
    l: int
    rho_dd: float
    rho_uu: float
    rho_du: complex
    rho_ud: complex
    sigma_z: float
    delta_phi: float


def tomography(l: int, p: SystemParams) -> Tomography:
    """Cavity state at tau_1 projected on |down>,|up> = (|0> -/+ |l>)/sqrt(2).

    Elements are <a|rho|b> with rho = sum c_n c_n'^* e^{i(Phi_n - Phi_n')} |n><n'|.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    d = derive(p)
    alpha = p.alpha
    dphi = phase_at_decoupling(l, 1, d) - phase_at_decoupling(0, 1, d)
    w = math.exp(-abs(alpha) ** 2)
    r00 = w
    rll = w * abs(alpha) ** (2 * l) / math.factorial(l)
    # rho_{0l} = c_0 c_l^* e^{i(Phi_0 - Phi_l)}
    r0l = w * np.conj(alpha) ** l / math.sqrt(math.factorial(l)) * cmath.exp(-1j * dphi)
    rl0 = np.conj(r0l)
    rho_dd = 0.5 * (r00 + rll - r0l - rl0).real
    rho_uu = 0.5 * (r00 + rll + r0l + rl0).real
    rho_du = 0.5 * (r00 + r0l - rl0 - rll)
    rho_ud = 0.5 * (r00 - r0l + rl0 - rll)
    return Tomography(l, float(rho_dd), float(rho_uu), complex(rho_du), complex(rho_ud),
                      float(rho_uu - rho_dd), dphi)


def project_two_level(rho: np.ndarray, l: int) -> np.ndarray:
    """2x2 matrix <a|rho|b> for a, b in (down, up); the independent projection route."""
    dim = rho.shape[0]
    down = np.zeros(dim, complex)
    up = np.zeros(dim, complex)
    down[0], down[l] = 1 / math.sqrt(2), -1 / math.sqrt(2)
    up[0], up[l] = 1 / math.sqrt(2), 1 / math.sqrt(2)
    basis = np.stack([down, up])
    return basis.conj() @ rho @ basis.T


# --- tables -----------------------------------------------------------------

SQUEEZING_HEADER = ["t_s", "t_over_T", "var_x", "squeezing_db"]
PAE_HEADER = ["sqrt_N2", "N2", "r", "n", "pae_rad_per_s", "abs_pae_rad_per_s"]
TOMOGRAPHY_HEADER = ["l", "sqrt_N2", "r", "rho_dd", "rho_uu", "rho_du_re", "rho_du_im",
                     "rho_ud_re", "rho_ud_im", "sigma_z", "delta_phi_rad"]


def squeezing_rows(d: DerivedParams, times) -> list[list[float]]:
    times = np.asarray(times, float)
    var = variance_x(times, d)
    sdb = squeezing_degree(times, d)
    return [[t, t / d.half_period, v, s] for t, v, s in zip(times, var, sdb)]


def pae_rows(p: SystemParams, sqrt_n2_values, ns) -> list[list[float]]:
    rows = []
    for s in sqrt_n2_values:
        q = p.replace(N2=float(s) ** 2)
        r = derive(q).r
        for n in ns:
            v = pae(int(n), q)
            rows.append([float(s), float(s) ** 2, r, int(n), v, abs(v)])
    return rows


def tomography_rows(p: SystemParams, sqrt_n2_values, ls) -> list[list[float]]:
    rows = []
    for s in sqrt_n2_values:
        q = p.replace(N2=float(s) ** 2)
        r = derive(q).r
        for l in ls:
            t = tomography(int(l), q)
            rows.append([int(l), float(s), r, t.rho_dd, t.rho_uu, t.rho_du.real, t.rho_du.imag,
                         t.rho_ud.real, t.rho_ud.imag, t.sigma_z, t.delta_phi])
    return rows
