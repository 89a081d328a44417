"""Dissipative evolution of the cavity + mechanics system.

Two frames are supported:

* ``lab``: H = w_m b^dag b - l1 n (b + b^dag) - l2 N2 (b + b^dag)^2 + f (b + b^dag),
  mechanical channels g(n_th+1) D[b] + g n_th D[b^dag];
* ``squeezed``: H_s = w_s b^dag b - l_s n (b + b^dag) + f_s (b + b^dag), and the
  mechanical bath seen through S(r): D and G channels weighted by cosh^2 r,
  sinh^2 r and sinh r cosh r.

rho_s = S(r) rho S^dag(r).  The cavity mode is untouched by the transformation,
so reduced cavity states agree between frames without any unsqueezing.

The production right-hand side exploits that H conserves the cavity photon
number: rho is stored as blocks rho[n, n'] of mechanical matrices and every
mechanical operator involved is banded.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numba
import numpy as np

if numba.config.THREADING_LAYER == "default":
    # the system TBB is too old for numba; avoid the noisy probe
    numba.config.THREADING_LAYER = "omp"

from . import fock
from .fisher import FisherReport, cfi_from_rhos, default_field_step, fisher_scale
from .fock import QuantumState, TruncationError
from .integrate import dopri5
from .params import SystemParams, derive

TRACE_TOL = 1e-7
HERMITIAN_TOL = 1e-10
POSITIVITY_WARN = -1e-6
POSITIVITY_ABORT = -1e-5
DRIFT_TOL = 1e-3
CAVITY_TAIL = 1e-9
CONVERGENCE_MODES = ("double", "reduce", "tail", "none")
MAX_MECH_DIM = 256

FRAMES = ("lab", "squeezed")
INITIAL_STATES = ("coherent", "ground", "thermal")


class PositivityError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# --- operators ----------------------------------------------------------------

def mech_hamiltonian_parts(p: SystemParams, mech_dim: int, frame: str):
    """(H0, X, coupling, drive): H_n = H0 + (drive - coupling * n) X on cavity block n."""
    d = derive(p)
    b = fock.destroy(mech_dim)
    x = b + b.T
    num = fock.number(mech_dim)
    if frame == "lab":
        h0 = p.omega_m * num - p.lambda2 * p.N2 * (x @ x)
        return h0, x, p.lambda1, d.f
    if frame == "squeezed":
        return d.omega_s * num, x, d.lambda_s, d.f_s
    raise ValueError(f"frame must be one of {FRAMES}, got {frame!r}")


def build_hamiltonian(p: SystemParams, cavity_dim: int, mech_dim: int, frame: str = "squeezed") -> np.ndarray:
    """Dense Hamiltonian on cavity (x) mechanics (hbar = 1, rad/s); constant offsets dropped."""
    if cavity_dim < 2 or mech_dim < 2:
        raise ValueError("dimensions must be >= 2")
    h0, x, lam, drive = mech_hamiltonian_parts(p, mech_dim, frame)
    n1 = fock.number(cavity_dim)
    ic = np.eye(cavity_dim)
    return np.kron(ic, h0 + drive * x) - lam * np.kron(n1, x)


def mechanical_channels(p: SystemParams, frame: str) -> tuple[list, list]:
    """Mechanical (rate, kind, coefficients) terms: D channels and G channels.

    Each operator is u b + v b^dag, given as (u, v).
    """
    g, n = p.gamma, p.n_th
    if frame == "lab":
        return [(g * (n + 1), (1.0, 0.0)), (g * n, (0.0, 1.0))], []
    r = derive(p).r
    ch2, sh2, chsh = math.cosh(r) ** 2, math.sinh(r) ** 2, math.sinh(r) * math.cosh(r)
    d_terms = [
        (g * (n + 1) * ch2, (1.0, 0.0)),
        (g * (n + 1) * sh2, (0.0, 1.0)),
        (g * n * ch2, (0.0, 1.0)),
        (g * n * sh2, (1.0, 0.0)),
    ]
    g_terms = [
        (g * (2 * n + 1) * chsh, (1.0, 0.0)),
        (g * (2 * n + 1) * chsh, (0.0, 1.0)),
    ]
    return d_terms, g_terms


def _mech_op(uv, dim):
    b = fock.destroy(dim)
    return uv[0] * b + uv[1] * b.T


@dataclass(frozen=True)
class LindbladSpec:
    params: SystemParams
    cavity_dim: int
    mech_dim: int
    frame: str = "squeezed"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}")
        if self.cavity_dim < 2 or self.mech_dim < 2:
            raise ValueError("dimensions must be >= 2")

    @property
    def dims(self) -> tuple[int, int]:
        return (self.cavity_dim, self.mech_dim)

    @property
    def hamiltonian(self) -> np.ndarray:
        return build_hamiltonian(self.params, self.cavity_dim, self.mech_dim, self.frame)

    @property
    def channels(self) -> dict[str, list]:
        """Full-space channels: {"D": [(rate, op)], "G": [(rate, op)]}."""
        ic = np.eye(self.cavity_dim)
        im = np.eye(self.mech_dim)
        d_terms, g_terms = mechanical_channels(self.params, self.frame)
        dch = [(self.params.kappa, np.kron(fock.destroy(self.cavity_dim), im))]
        dch += [(rate, np.kron(ic, _mech_op(uv, self.mech_dim))) for rate, uv in d_terms]
        gch = [(rate, np.kron(ic, _mech_op(uv, self.mech_dim))) for rate, uv in g_terms]
        return {"D": dch, "G": gch}


def superop_D(o: np.ndarray, rho: np.ndarray) -> np.ndarray:
    od = o.conj().T
    oo = od @ o
    return o @ rho @ od - 0.5 * (oo @ rho + rho @ oo)


def superop_G(o: np.ndarray, rho: np.ndarray) -> np.ndarray:
    oo = o @ o
    return o @ rho @ o - 0.5 * (oo @ rho + rho @ oo)


def rhs_reference(spec: LindbladSpec, rho: np.ndarray) -> np.ndarray:
    """Dense literal right-hand side; O(D^3), intended for small systems and as an oracle."""
    h = spec.hamiltonian
    out = -1j * (h @ rho - rho @ h)
    ch = spec.channels
    for rate, o in ch["D"]:
        if rate:
            out += rate * superop_D(o, rho)
    for rate, o in ch["G"]:
        if rate:
            out += rate * superop_G(o, rho)
    return out


# --- banded block kernel --------------------------------------------------------

@dataclass(frozen=True)
class BlockOperator:
    """Per-cavity-block banded generator data for a batch of parameter sets."""
    k0: np.ndarray  # (batch, dc, dm)
    k1: np.ndarray  # (batch, dc, dm+1); k1[..., i] = K[i, i-1], zero-padded
    k2: np.ndarray  # (batch, dc, dm+2); k2[..., i] = K[i, i-2], zero-padded
    kappa: float
    jaa: float
    jbb: float
    jab: float


def _mech_jump_weights(p: SystemParams, frame: str) -> tuple[float, float, float, np.ndarray]:
    """Coefficients of sum_j rate_j c_j rho c_j^dag and the dense sum_j rate_j c_j^dag c_j generator."""
    # fold everything into the two channels g(n+1) D[c], g n D[c^dag] with c = u b + v b^dag
    if frame == "lab":
        pairs = [(p.gamma * (p.n_th + 1), 1.0, 0.0), (p.gamma * p.n_th, 0.0, 1.0)]
    else:
        r = derive(p).r
        ch, sh = math.cosh(r), math.sinh(r)
        pairs = [(p.gamma * (p.n_th + 1), ch, sh), (p.gamma * p.n_th, sh, ch)]
    jaa = sum(rate * u * u for rate, u, v in pairs)
    jbb = sum(rate * v * v for rate, u, v in pairs)
    jab = sum(rate * u * v for rate, u, v in pairs)
    return jaa, jbb, jab, pairs


def block_operator(params_list: Sequence[SystemParams], cavity_dim: int, mech_dim: int, frame: str) -> BlockOperator:
    ref = params_list[0]
    for q in params_list[1:]:
        if (q.gamma, q.n_th, q.kappa, q.N2, q.lambda2, q.omega_m, q.lambda1) != (
                ref.gamma, ref.n_th, ref.kappa, ref.N2, ref.lambda2, ref.omega_m, ref.lambda1):
            raise ValueError("batched parameter sets may differ only in B_z")
    jaa, jbb, jab, pairs = _mech_jump_weights(ref, frame)
    m_gen = np.zeros((mech_dim, mech_dim))
    for rate, u, v in pairs:
        c = _mech_op((u, v), mech_dim)
        m_gen += rate * (c.T @ c).real
    nb = len(params_list)
    k0 = np.empty((nb, cavity_dim, mech_dim), complex)
    k1 = np.zeros((nb, cavity_dim, mech_dim + 1), complex)
    k2 = np.zeros((nb, cavity_dim, mech_dim + 2), complex)
    for bi, q in enumerate(params_list):
        h0, x, lam, drive = mech_hamiltonian_parts(q, mech_dim, frame)
        for n in range(cavity_dim):
            k = h0 + (drive - lam * n) * x - 0.5j * (m_gen + ref.kappa * n * np.eye(mech_dim))
            k0[bi, n] = np.diagonal(k)
            k1[bi, n, 1:mech_dim] = np.diagonal(k, -1)
            k2[bi, n, 2:mech_dim] = np.diagonal(k, -2)
    return BlockOperator(k0, k1, k2, float(ref.kappa), float(jaa), float(jbb), float(jab))


def pair_tables(dc: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Upper cavity blocks (n <= m) in row-major order, with the index of (n+1, m+1) or -1."""
    ns, ms = np.triu_indices(dc)
    index = -np.ones((dc, dc), dtype=np.int64)
    index[ns, ms] = np.arange(ns.size)
    nxt = np.array([index[n + 1, m + 1] if m + 1 < dc else -1 for n, m in zip(ns, ms)], dtype=np.int64)
    return ns.astype(np.int64), ms.astype(np.int64), nxt


@numba.njit(parallel=True, cache=True, fastmath=True)
def _block_rhs(rho, pn, pm, pnext, k0, k1p, k2p, kap, jaa, jbb, jab):
    # rho[b, p] is the mechanical block of cavity pair p = (pn[p], pm[p]) with pn <= pm.
    # k1p[b, n, i] = K_n[i, i-1] and k2p[b, n, i] = K_n[i, i-2], zero-padded at the edges.
    # Each block is copied into a buffer with a 2-wide zero border so the
    # inner loop is branch free.
    nb, npairs, dm, _ = rho.shape
    out = np.empty_like(rho)
    sq = np.zeros(dm + 4)  # sq[j + 1] = sqrt(j)
    for i in range(dm):
        sq[i + 1] = math.sqrt(i)
    for idx in numba.prange(nb * npairs):
        b = idx // npairs
        p = idx % npairs
        n = pn[p]
        m = pm[p]
        rp = np.zeros((dm + 4, dm + 4), dtype=np.complex128)
        rp[2:dm + 2, 2:dm + 2] = rho[b, p]
        ck0 = np.conj(k0[b, m])
        ck1 = np.conj(k1p[b, m])
        ck2 = np.conj(k2p[b, m])
        o = out[b, p]
        for i in range(dm):
            ii = i + 2
            a0 = k0[b, n, i]
            lo1 = k1p[b, n, i]
            up1 = k1p[b, n, i + 1]
            lo2 = k2p[b, n, i]
            up2 = k2p[b, n, i + 2]
            fa = jaa * sq[i + 2]
            fb = jbb * sq[i + 1]
            fab1 = jab * sq[i + 2]
            fab2 = jab * sq[i + 1]
            r0 = rp[ii]
            rm1 = rp[ii - 1]
            rp1 = rp[ii + 1]
            rm2 = rp[ii - 2]
            rp2 = rp[ii + 2]
            orow = o[i]
            for j in range(dm):
                acc = ((a0 - ck0[j]) * r0[j + 2] + lo1 * rm1[j + 2] + up1 * rp1[j + 2]
                       + lo2 * rm2[j + 2] + up2 * rp2[j + 2])
                acc -= r0[j + 1] * ck1[j] + r0[j + 3] * ck1[j + 1] + r0[j] * ck2[j] + r0[j + 4] * ck2[j + 2]
                val = complex(acc.imag, -acc.real)  # -1j * acc
                val += (fa * sq[j + 2] * rp1[j + 3] + fb * sq[j + 1] * rm1[j + 1]
                        + fab1 * sq[j + 1] * rp1[j + 1] + fab2 * sq[j + 2] * rm1[j + 3])
                orow[j] = val
        q = pnext[p]
        if q >= 0 and kap != 0.0:
            cav = kap * math.sqrt((n + 1.0) * (m + 1.0))
            nxt = rho[b, q]
            for i in range(dm):
                for j in range(dm):
                    o[i, j] += cav * nxt[i, j]
    return out


@dataclass(frozen=True)
class PackedLayout:
    cavity_dim: int
    mech_dim: int
    pn: np.ndarray
    pm: np.ndarray
    pnext: np.ndarray

    @classmethod
    def of(cls, dc: int, dm: int) -> "PackedLayout":
        return cls(dc, dm, *pair_tables(dc))

    @property
    def npairs(self) -> int:
        return self.pn.size


def pack(rho: np.ndarray, layout: PackedLayout) -> np.ndarray:
    """Dense (D x D) density matrix -> upper cavity blocks (npairs, dm, dm)."""
    dc, dm = layout.cavity_dim, layout.mech_dim
    blocks = rho.reshape(dc, dm, dc, dm).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(blocks[layout.pn, layout.pm])


def unpack(packed: np.ndarray, layout: PackedLayout) -> np.ndarray:
    dc, dm = layout.cavity_dim, layout.mech_dim
    blocks = np.empty((dc, dc, dm, dm), dtype=complex)
    blocks[layout.pn, layout.pm] = packed
    blocks[layout.pm, layout.pn] = np.conj(np.swapaxes(packed, -1, -2))
    return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3).reshape(dc * dm, dc * dm))


def block_rhs(op: BlockOperator, layout: PackedLayout, packed: np.ndarray) -> np.ndarray:
    """d rho/dt for a batch of packed density matrices (batch, npairs, dm, dm)."""
    return _block_rhs(packed, layout.pn, layout.pm, layout.pnext, op.k0, op.k1, op.k2,
                      op.kappa, op.jaa, op.jbb, op.jab)


def rhs(spec: LindbladSpec, rho: np.ndarray) -> np.ndarray:
    """Right-hand side on a dense (D x D) density matrix, evaluated with the block kernel."""
    op = block_operator([spec.params], spec.cavity_dim, spec.mech_dim, spec.frame)
    layout = PackedLayout.of(spec.cavity_dim, spec.mech_dim)
    return unpack(block_rhs(op, layout, pack(rho, layout)[None])[0], layout)


# --- states -------------------------------------------------------------------

def heated_occupation(p: SystemParams, t_end: float | None = None) -> float:
    """Bath occupation reached by t_end, n_th (1 - e^{-gamma t}); n_th itself when t_end is None."""
    if t_end is None:
        return p.n_th
    return p.n_th * -math.expm1(-p.gamma * t_end)


def mechanical_dim_rule(p: SystemParams, t_end: float | None = None) -> int:
    """4 n + |beta|^2 + 8 e^{2r} + 10 with n the occupation the bath can build up by t_end."""
    r = derive(p).r
    n = heated_occupation(p, t_end)
    return int(math.ceil(4 * n + abs(p.beta) ** 2 + 8 * math.exp(2 * r) + 10))


def to_squeezed_frame(rho_mech: np.ndarray, r: float, dim_out: int) -> np.ndarray:
    """S(r) rho S^dag(r) computed in an enlarged space and truncated to ``dim_out``."""
    return _conjugate(rho_mech, r, dim_out)


def unsqueeze(rho_mech: np.ndarray, r: float, dim_out: int) -> np.ndarray:
    """S^dag(r) rho S(r), same embedding strategy."""
    return _conjugate(rho_mech, -r, dim_out)


def _conjugate(rho, z, dim_out, tol=fock.NORM_DEFECT_TOL):
    dim_in = rho.shape[0]
    work = 2 * max(dim_in, dim_out) + 20
    s = fock.squeeze(z, work)
    big = np.zeros((work, work), complex)
    big[:dim_in, :dim_in] = rho
    out = (s @ big @ s.conj().T)[:dim_out, :dim_out]
    defect = abs(np.trace(rho).real - np.trace(out).real)
    if defect > tol:
        raise TruncationError(f"squeeze transform leaves trace defect {defect:.3e} at dim {dim_out}")
    return out


def _conjugate_joint(rho_joint: np.ndarray, dc: int, dm_in: int, z: float, dm_out: int, tol) -> np.ndarray:
    work = 2 * max(dm_in, dm_out) + 20
    s = fock.squeeze(z, work)[:dm_out, :dm_in]
    blocks = rho_joint.reshape(dc, dm_in, dc, dm_in)
    out = np.einsum("ai,nimj,bj->nabm", s, blocks, s.conj(), optimize=True)
    out = out.transpose(0, 1, 3, 2).reshape(dc * dm_out, dc * dm_out)
    defect = abs(np.trace(rho_joint).real - np.trace(out).real)
    if defect > tol:
        raise TruncationError(f"frame change leaves trace defect {defect:.3e} at mech dim {dm_out}")
    return out


def unsqueeze_joint(rho_joint: np.ndarray, dc: int, dm_in: int, r: float, dm_out: int, tol=1e-6) -> np.ndarray:
    """Joint-state S^dag(r) rho_s S(r) on the mechanical factor."""
    return _conjugate_joint(rho_joint, dc, dm_in, -r, dm_out, tol)


def squeeze_joint(rho_joint: np.ndarray, dc: int, dm_in: int, r: float, dm_out: int, tol=1e-8) -> np.ndarray:
    return _conjugate_joint(rho_joint, dc, dm_in, r, dm_out, tol)


def initial_state(p: SystemParams, cavity_dim: int, mech_dim: int, frame: str = "squeezed",
                  mechanics: str = "coherent") -> np.ndarray:
    """Dense initial density matrix |alpha><alpha| (x) rho_mech in the requested frame.

    ``mechanics``: "coherent" (|beta>), "ground" (|0>) or "thermal" (n_th).
    """
    if mechanics not in INITIAL_STATES:
        raise ValueError(f"mechanics must be one of {INITIAL_STATES}")
    cav = fock.coherent(p.alpha, cavity_dim, warn=False).dm()
    work = 2 * mech_dim + 20
    if mechanics == "thermal":
        rho_m = fock.thermal_dm(p.n_th, work).data
    else:
        beta = p.beta if mechanics == "coherent" else 0j
        rho_m = fock.coherent(beta, work).dm()
    if frame == "squeezed" and derive(p).r != 0.0:
        rho_m = to_squeezed_frame(rho_m, derive(p).r, mech_dim)
    else:
        defect = 1 - np.trace(rho_m[:mech_dim, :mech_dim]).real
        if defect > fock.NORM_DEFECT_TOL:
            raise TruncationError(f"initial mechanical state truncation defect {defect:.3e}")
        rho_m = rho_m[:mech_dim, :mech_dim]
    rho_m = rho_m / np.trace(rho_m).real
    return np.kron(cav, rho_m)


# --- evolution ----------------------------------------------------------------

@dataclass
class EvolutionResult:
    times: np.ndarray
    states: list  # per checkpoint: array (batch, D, D) or list of QuantumState for single runs
    conservation: list[dict[str, Any]]
    step_stats: dict[str, Any]
    dims: tuple[int, int]
    frame: str
    wall_time: float = 0.0
    warnings: list[str] = field(default_factory=list)
    layout: PackedLayout | None = None

    def state(self, k: int, member: int = 0) -> QuantumState:
        return QuantumState(unpack(self.states[k][member], self.layout), self.dims)


def conservation_check(packed: np.ndarray, layout: PackedLayout) -> dict[str, float]:
    rho = unpack(packed, layout)
    tr = np.trace(rho)
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    min_eig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
    return {"trace_defect": float(abs(tr - 1.0)), "hermiticity_defect": herm, "min_eigenvalue": min_eig}


def _evolve_blocks(op: BlockOperator, layout: PackedLayout, blocks0: np.ndarray, checkpoints, rtol, atol,
                   check=True):
    log: list[dict[str, Any]] = []
    notes: list[str] = []

    def on_cp(t, y):
        if not check:
            return
        for bi in range(y.shape[0]):
            c = conservation_check(y[bi], layout)
            c.update({"t": t, "member": bi})
            log.append(c)
            if c["min_eigenvalue"] < POSITIVITY_ABORT:
                raise PositivityError(f"positivity violated at t={t:.6e}: min eigenvalue {c['min_eigenvalue']:.3e}",
                                      {"conservation": log})
            if c["trace_defect"] > TRACE_TOL:
                notes.append(f"trace defect {c['trace_defect']:.2e} at t={t:.6e}")
            if c["min_eigenvalue"] < POSITIVITY_WARN:
                notes.append(f"min eigenvalue {c['min_eigenvalue']:.2e} at t={t:.6e}")

    sol = dopri5(lambda t, y: block_rhs(op, layout, y), blocks0, checkpoints, rtol=rtol, atol=atol, on_checkpoint=on_cp)
    return sol, log, notes


def evolve(spec: LindbladSpec, rho0, checkpoints=None, t_end: float | None = None,
           rtol: float = 1e-8, atol: float = 1e-10) -> EvolutionResult:
    """Integrate the master equation from rho0 (QuantumState or dense matrix) through the checkpoints."""
    if checkpoints is None:
        if t_end is None:
            raise ValueError("give checkpoints or t_end")
        checkpoints = [t_end]
    dc, dm = spec.dims
    if isinstance(rho0, QuantumState):
        if tuple(rho0.dims) != (dc, dm):
            raise ValueError(f"state dims {rho0.dims} do not match spec dims {(dc, dm)}")
        rho0 = rho0.dm()
    rho0 = np.asarray(rho0, complex)
    if rho0.shape != (dc * dm, dc * dm):
        raise ValueError("rho0 shape does not match dims")
    op = block_operator([spec.params], dc, dm, spec.frame)
    layout = PackedLayout.of(dc, dm)
    start = _time.perf_counter()
    sol, log, notes = _evolve_blocks(op, layout, pack(rho0, layout)[None], checkpoints, rtol, atol)
    return EvolutionResult(sol.times, [s for s in sol.states], log, sol.stats.as_dict(), (dc, dm),
                           spec.frame, _time.perf_counter() - start, notes, layout)


# --- Fisher information under dissipation ---------------------------------------------

def reduced_cavity_blocks(packed: np.ndarray, layout: PackedLayout) -> np.ndarray:
    dc = layout.cavity_dim
    out = np.zeros((dc, dc), complex)
    tr = np.einsum("pii->p", packed)
    out[layout.pn, layout.pm] = tr
    out[layout.pm, layout.pn] = np.conj(tr)
    return out


def _cfi_series(p: SystemParams, times, theta: float, h: float, dc: int, dm: int, frame: str,
                mechanics: str, richardson: bool, grid, rtol, atol):
    offsets = [h, -h, h / 2, -h / 2] if richardson else [h, -h]
    plist = [p.replace(B_z=p.B_z + s) for s in offsets]
    op = block_operator(plist, dc, dm, frame)
    layout = PackedLayout.of(dc, dm)
    rho0 = pack(initial_state(p, dc, dm, frame, mechanics), layout)
    batch = np.ascontiguousarray(np.broadcast_to(rho0, (len(offsets),) + rho0.shape))
    times = np.asarray(times, float)
    sol, log, notes = _evolve_blocks(op, layout, batch, times, rtol, atol)
    floor = 1e-9 * fisher_scale(p)
    values, diags, tails = [], [], []
    for y in sol.states:
        rhos = {s: reduced_cavity_blocks(y[k], layout) for k, s in enumerate(offsets)}
        v, dg = cfi_from_rhos(rhos, h, theta, grid, floor=floor)
        values.append(v)
        diags.append(dg)
        tails.append(_mech_tail(y[0], layout))
    return np.array(values), diags, {"conservation": log, "notes": notes, "step_stats": sol.stats.as_dict(),
                                     "mech_tail": tails}


def _mech_tail(packed: np.ndarray, layout: PackedLayout) -> float:
    """Mechanical population in the top 10% of retained levels."""
    mech = packed[layout.pn == layout.pm].sum(axis=0).real
    dm = mech.shape[0]
    top = max(1, dm // 10)
    return float(np.sum(np.diagonal(mech)[dm - top:]))


def dissipative_dims(p: SystemParams, cavity_dim=None, mech_dim=None, t_end=None,
                     mechanics: str = "coherent") -> tuple[int, int]:
    """Cavity: Poisson tail below CAVITY_TAIL (H conserves the photon number and decay only
    lowers it, so the initial truncation is the only cavity error).  Mechanics: heating rule,
    widened for a thermal start to hold its geometric tail, stretched by e^{2r}."""
    dc = fock.coherent_tail_dim(p.alpha, CAVITY_TAIL) if cavity_dim is None else cavity_dim
    if mech_dim is not None:
        dm = mech_dim
    elif mechanics == "thermal":
        tail = fock.thermal_tail_dim(p.n_th) * math.exp(2 * derive(p).r)
        dm = max(mechanical_dim_rule(p), int(math.ceil(tail)) + 10)
    else:
        dm = mechanical_dim_rule(p, t_end)
    return max(dc, 2), max(dm, 3)


def cfi_time_series(p: SystemParams, times, theta: float = math.pi / 2, dB_step: float | None = None,
                    cavity_dim: int | None = None, mech_dim: int | None = None, frame: str = "squeezed",
                    mechanics: str = "coherent", richardson: bool = True, convergence: str = "double",
                    grid=None, rtol: float = 1e-8, atol: float = 1e-10,
                    drift_tol: float = DRIFT_TOL) -> tuple[np.ndarray, dict[str, Any]]:
    """Homodyne CFI from master-equation states at each time in ``times``.

    ``convergence``: "double" reruns with the mechanical truncation doubled
    until the drift is below ``drift_tol``; "reduce" reruns once at 3/4 of the
    truncation and requires the same (cheaper when the run time grows as dim^3);
    "tail" only records the top-level population; "none" skips all checks.
    """
    if convergence not in CONVERGENCE_MODES:
        raise ValueError(f"convergence must be one of {CONVERGENCE_MODES}")
    h = default_field_step(p) if dB_step is None else dB_step
    times = np.asarray(times, float)
    t_end = float(np.max(times)) if times.size else None
    dc, dm = dissipative_dims(p, cavity_dim, mech_dim, t_end, mechanics)
    start = _time.perf_counter()
    values, diags, extra = _cfi_series(p, times, theta, h, dc, dm, frame, mechanics, richardson, grid, rtol, atol)
    info: dict[str, Any] = {"dims": [dc, dm], "frame": frame, "dB_step": h, "mechanics": mechanics,
                            "convergence": convergence, "point_diagnostics": diags, **extra}
    if convergence == "reduce":
        dm_low = max(3, int(math.ceil(0.75 * dm)))
        v2, _, _ = _cfi_series(p, times, theta, h, dc, dm_low, frame, mechanics, False, grid, rtol, atol)
        scale = np.maximum(np.abs(values), 1e-9 * fisher_scale(p))
        drift = float(np.max(np.abs(values - v2) / scale))
        info["drift_history"] = [{"mech_dim": dm_low, "drift": drift}]
        info["drift"] = drift
        if drift > drift_tol:
            raise ConvergenceError(f"CFI drift {drift:.3e} between mech dims {dm_low} and {dm} exceeds "
                                   f"{drift_tol:.1e}", info)
    if convergence == "double":
        dm2 = dm
        while True:
            dm2 = 2 * dm2
            if dm2 > MAX_MECH_DIM:
                raise ConvergenceError(f"mechanical truncation did not converge below {MAX_MECH_DIM}", info)
            v2, _, _ = _cfi_series(p, times, theta, h, dc, dm2, frame, mechanics, False, grid, rtol, atol)
            scale = np.maximum(np.abs(v2), 1e-9 * fisher_scale(p))
            drift = float(np.max(np.abs(values - v2) / scale))
            info.setdefault("drift_history", []).append({"mech_dim": dm2, "drift": drift})
            if drift <= drift_tol:
                info["convergence_dims"] = [dc, dm2]
                info["drift"] = drift
                break
            values, dm = v2, dm2
            info["dims"] = [dc, dm]
    info["wall_time"] = _time.perf_counter() - start
    return values, info


def cfi_dissipative(p: SystemParams, t: float | None = None, theta: float = math.pi / 2,
                    dB_step: float | None = None, **kwargs) -> FisherReport:
    """Homodyne CFI at time t (default tau_1) from the master-equation state."""
    d = derive(p)
    t = d.tau1 if t is None else t
    values, info = cfi_time_series(p, [t], theta, dB_step, **kwargs)
    return FisherReport(float(values[0]), "CFI", "numeric", d.tau1, t, theta, diagnostics=info)


@dataclass(frozen=True)
class WindowSeries:
    times: np.ndarray
    cfi: np.ndarray
    cfi_tau1: float
    flatness: float
    diagnostics: dict[str, Any]


def window_grid(p: SystemParams, count: int = 41, half_width: float = 0.2) -> np.ndarray:
    tau1 = derive(p).tau1
    return tau1 * np.linspace(1 - half_width, 1 + half_width, count)


def flatness(times: np.ndarray, cfi: np.ndarray, tau1: float, window: float = 0.05) -> float:
    """Largest relative deviation from F_c(tau_1) over |t - tau_1| <= window*tau_1."""
    k = int(np.argmin(np.abs(times - tau1)))
    ref = cfi[k]
    mask = np.abs(times - tau1) <= window * tau1 * (1 + 1e-12)
    return float(np.max(np.abs(cfi[mask] - ref)) / ref)


def cfi_time_window(p: SystemParams, t_grid=None, theta: float = math.pi / 2, **kwargs) -> WindowSeries:
    tau1 = derive(p).tau1
    t_grid = window_grid(p) if t_grid is None else np.asarray(t_grid, float)
    if not np.any(np.isclose(t_grid, tau1, rtol=1e-12, atol=0)):
        t_grid = np.sort(np.append(t_grid, tau1))
    values, info = cfi_time_series(p, t_grid, theta, **kwargs)
    k = int(np.argmin(np.abs(t_grid - tau1)))
    return WindowSeries(t_grid, values, float(values[k]), flatness(t_grid, values, tau1), info)


# --- tables -------------------------------------------------------------------

WINDOW_HEADER = ["t_s", "t_over_tau1", "F_c"]
NTH_HEADER = ["n_th", "F_c", "dB_per_sqrt_hz_T"]
DECAY_HEADER = ["kappa_over_wm", "gamma_over_wm", "r", "F_c", "dB_per_sqrt_hz_T"]
