"""Truncated Fock-space linear algebra.

Operators are plain dense ``numpy`` arrays.  States carry their subsystem
truncations in :class:`QuantumState` so partial traces know the tensor layout.
Quadratures follow ``X = (b + b^dag)/sqrt(2)``, so vacuum has variance 1/2.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from functools import reduce
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, stats


class TruncationError(RuntimeError):
    """Fock truncation too small for the requested accuracy."""


class TruncationWarning(UserWarning):
    pass


class StateError(ValueError):
    pass


PURE_NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = -1e-8
NORM_DEFECT_TOL = 1e-8


@dataclass(frozen=True)
class QuantumState:
    data: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        total = int(np.prod(self.dims))
        data = np.asarray(self.data, dtype=complex)
        if data.ndim == 1 and data.shape != (total,):
            raise StateError(f"vector of length {data.shape[0]} does not match dims {self.dims}")
        if data.ndim == 2 and data.shape != (total, total):
            raise StateError(f"matrix of shape {data.shape} does not match dims {self.dims}")
        if data.ndim not in (1, 2):
            raise StateError("state data must be a vector or a square matrix")
        object.__setattr__(self, "data", data)

    @property
    def kind(self) -> str:
        return "pure" if self.data.ndim == 1 else "mixed"

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def dm(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data

    def to_mixed(self) -> "QuantumState":
        return self if not self.is_pure else QuantumState(self.dm(), self.dims)

    def trace(self) -> float:
        if self.is_pure:
            return float(np.vdot(self.data, self.data).real)
        return float(np.trace(self.data).real)

    def purity(self) -> float:
        if self.is_pure:
            return self.trace() ** 2
        rho = self.data
        return float(np.real(np.sum(rho * rho.T)))

    def check(self) -> "QuantumState":
        """Validate the physical invariants; returns self for chaining."""
        if self.is_pure:
            defect = abs(np.linalg.norm(self.data) - 1.0)
            if defect > PURE_NORM_TOL:
                raise StateError(f"pure state norm defect {defect:.3e}")
            return self
        rho = self.data
        herm = float(np.max(np.abs(rho - rho.conj().T)))
        if herm > HERMITIAN_TOL:
            raise StateError(f"Hermiticity defect {herm:.3e}")
        tr = abs(np.trace(rho).real - 1.0)
        if tr > TRACE_TOL:
            raise StateError(f"trace defect {tr:.3e}")
        mineig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
        if mineig < POSITIVITY_TOL:
            raise StateError(f"negative eigenvalue {mineig:.3e}")
        return self


def destroy(dim: int) -> np.ndarray:
    if dim < 2:
        raise ValueError("Fock truncation must be at least 2")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def create(dim: int) -> np.ndarray:
    return destroy(dim).conj().T


def number(dim: int) -> np.ndarray:
    if dim < 2:
        raise ValueError("Fock truncation must be at least 2")
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def identity(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex)


def parity(dim: int) -> np.ndarray:
    return np.diag((-1.0) ** np.arange(dim)).astype(complex)


def quadrature(dim: int, theta: float = 0.0) -> np.ndarray:
    """X_theta = (a e^{-i theta} + a^dag e^{i theta}) / sqrt(2)."""
    a = destroy(dim)
    return (a * np.exp(-1j * theta) + a.conj().T * np.exp(1j * theta)) / math.sqrt(2)


def fock_state(n: int, dim: int) -> QuantumState:
    if not 0 <= n < dim:
        raise ValueError(f"Fock index {n} outside truncation {dim}")
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return QuantumState(v, (dim,))


def coherent_dim(alpha: complex, r: float = 0.0) -> int:
    """Truncation adequacy rule |a|^2 + 6|a| + 10, stretched by e^{2r} for squeezing."""
    a = abs(alpha)
    return int(math.ceil((a * a + 6 * a + 10) * math.exp(2 * abs(r))))


def coherent_tail_dim(alpha: complex, tol: float = 1e-9) -> int:
    """Smallest dimension whose truncated |alpha> misses less than ``tol`` of the norm."""
    mean = abs(alpha) ** 2
    dim = 2
    while float(stats.poisson.sf(dim - 1, mean)) > tol:
        dim += 1
    return dim


def thermal_tail_dim(n_th: float, tol: float = NORM_DEFECT_TOL) -> int:
    """Smallest dimension whose truncated thermal state misses less than ``tol``: (n/(n+1))^dim < tol."""
    if n_th <= 0:
        return 1
    return int(math.ceil(math.log(tol) / math.log(n_th / (n_th + 1))))


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    n = np.arange(dim)
    # log-space avoids overflow of alpha**n / sqrt(n!) for large dims
    if alpha == 0:
        out = np.zeros(dim, dtype=complex)
        out[0] = 1.0
        return out
    logmag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * _lgamma1(n)
    return np.exp(logmag) * np.exp(1j * n * np.angle(alpha))


def _lgamma1(n: np.ndarray) -> np.ndarray:
    from scipy.special import gammaln

    return gammaln(np.asarray(n, dtype=float) + 1.0)


def coherent(alpha: complex, dim: int, warn: bool = True) -> QuantumState:
    """Normalized truncated coherent state |alpha>.

    ``warn=False`` silences the adequacy-rule warning; the norm-defect check still applies.
    """
    if dim < 2:
        raise ValueError("Fock truncation must be at least 2")
    if warn and dim < coherent_dim(alpha):
        warnings.warn(
            f"dim={dim} below adequacy rule {coherent_dim(alpha)} for |alpha|={abs(alpha):.3g}",
            TruncationWarning,
            stacklevel=2,
        )
    c = coherent_amplitudes(alpha, dim)
    defect = 1.0 - float(np.vdot(c, c).real)
    if defect > NORM_DEFECT_TOL:
        raise TruncationError(f"coherent state norm defect {defect:.3e} at dim={dim}")
    return QuantumState(c / np.linalg.norm(c), (dim,))


def thermal_dm(n_th: float, dim: int) -> QuantumState:
    if n_th == 0:
        rho = np.zeros((dim, dim), dtype=complex)
        rho[0, 0] = 1.0
        return QuantumState(rho, (dim,))
    ratio = n_th / (1.0 + n_th)
    p = ratio ** np.arange(dim) / (1.0 + n_th)
    defect = 1.0 - p.sum()
    if defect > NORM_DEFECT_TOL:
        raise TruncationError(f"thermal state norm defect {defect:.3e} at dim={dim}")
    return QuantumState(np.diag(p / p.sum()).astype(complex), (dim,))


def _check_unitary(u: np.ndarray, what: str) -> np.ndarray:
    defect = float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
    if defect > 1e-8:
        raise TruncationError(f"{what} unitarity defect {defect:.3e}")
    return u


def displacement(beta: complex, dim: int) -> np.ndarray:
    """D(beta) = exp(beta b^dag - beta^* b) on the truncated space."""
    a = destroy(dim)
    gen = beta * a.conj().T - np.conj(beta) * a
    return _check_unitary(linalg.expm(gen), "displacement")


def squeeze(z: complex, dim: int) -> np.ndarray:
    """S(z) = exp[(z^* b^2 - z b^dag^2)/2]; real z = r gives S(r) b S(-r) = b cosh r + b^dag sinh r."""
    a = destroy(dim)
    a2 = a @ a
    gen = 0.5 * (np.conj(z) * a2 - z * a2.conj().T)
    return _check_unitary(linalg.expm(gen), "squeeze")


def embed(vec_or_rho: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad a single-mode vector/matrix into a larger truncation."""
    x = np.asarray(vec_or_rho)
    if x.ndim == 1:
        out = np.zeros(dim, dtype=complex)
        out[: x.shape[0]] = x
    else:
        out = np.zeros((dim, dim), dtype=complex)
        out[: x.shape[0], : x.shape[1]] = x
    return out


def _as_array(item):
    return item.data if isinstance(item, QuantumState) else np.asarray(item)


def tensor(*items):
    """Kronecker product of operators, or of QuantumStates (dims concatenated)."""
    if len(items) == 1 and isinstance(items[0], (list, tuple)):
        items = tuple(items[0])
    if not items:
        raise ValueError("tensor needs at least one factor")
    if all(isinstance(i, QuantumState) for i in items):
        if all(i.is_pure for i in items):
            data = reduce(np.kron, [i.data for i in items])
        else:
            data = reduce(np.kron, [i.dm() for i in items])
        dims = tuple(d for i in items for d in i.dims)
        return QuantumState(data, dims)
    if any(isinstance(i, QuantumState) for i in items):
        raise TypeError("cannot mix states and operators in tensor()")
    return reduce(np.kron, [_as_array(i) for i in items])


def partial_trace(state: QuantumState, keep: int | Sequence[int]) -> QuantumState:
    """Reduced density matrix on the subsystems listed in ``keep``."""
    keep = [keep] if isinstance(keep, int) else sorted(keep)
    dims = state.dims
    nsys = len(dims)
    if any(k < 0 or k >= nsys for k in keep):
        raise ValueError(f"keep={keep} out of range for dims {dims}")
    if state.is_pure:
        psi = state.data.reshape(dims)
        traced = [i for i in range(nsys) if i not in keep]
        psi = np.transpose(psi, keep + traced).reshape(int(np.prod([dims[k] for k in keep])), -1)
        rho = psi @ psi.conj().T
    else:
        rho = state.data.reshape(dims + dims)
        idx_in = list(range(2 * nsys))
        for i in range(nsys):
            if i not in keep:
                idx_in[nsys + i] = idx_in[i]
        idx_out = keep + [nsys + k for k in keep]
        rho = np.einsum(rho, idx_in, idx_out)
        kd = int(np.prod([dims[k] for k in keep]))
        rho = rho.reshape(kd, kd)
    return QuantumState(rho, tuple(dims[k] for k in keep))


def expect(op: np.ndarray, state: QuantumState) -> complex:
    if state.is_pure:
        return complex(np.vdot(state.data, op @ state.data))
    return complex(np.trace(op @ state.data))


def fidelity(state: QuantumState, other: QuantumState) -> float:
    """Uhlmann fidelity F = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2; overlap form if either is pure."""
    if state.is_pure and other.is_pure:
        return abs(np.vdot(state.data, other.data)) ** 2
    if other.is_pure:
        return float(np.real(np.vdot(other.data, state.dm() @ other.data)))
    if state.is_pure:
        return float(np.real(np.vdot(state.data, other.dm() @ state.data)))
    s = linalg.sqrtm(state.data)
    m = linalg.sqrtm(s @ other.data @ s)
    return float(np.real(np.trace(m)) ** 2)


def wigner(state: QuantumState, xs: np.ndarray, ps: np.ndarray) -> np.ndarray:
    """Wigner function W[p_index, x_index] in quadrature coordinates (vacuum peak 1/pi).

    Displaced-parity expansion evaluated in the Fock basis with the Laguerre
    recurrence, so no per-point matrix exponential is needed.
    """
    if len(state.dims) != 1:
        raise StateError("wigner() needs a single-mode state")
    rho = state.dm()
    dim = rho.shape[0]
    X, P = np.meshgrid(np.asarray(xs, float), np.asarray(ps, float))
    A = (X + 1j * P) / math.sqrt(2)
    w = [np.exp(-2.0 * np.abs(A) ** 2) / math.pi]
    W = np.real(rho[0, 0]) * w[0].real
    for n in range(1, dim):
        w.append(2.0 * A * w[n - 1] / math.sqrt(n))
        W = W + 2.0 * np.real(rho[0, n] * w[n])
    for m in range(1, dim):
        prev = w[m].copy()
        w[m] = (2.0 * np.conj(A) * prev - math.sqrt(m) * w[m - 1]) / math.sqrt(m)
        W = W + np.real(rho[m, m] * w[m])
        for n in range(m + 1, dim):
            nxt = (2.0 * A * w[n - 1] - math.sqrt(m) * prev) / math.sqrt(n)
            prev = w[n].copy()
            w[n] = nxt
            W = W + 2.0 * np.real(rho[m, n] * w[n])
    return W


def wigner_parity(state: QuantumState, xs, ps, pad: int = 30) -> np.ndarray:
    """Literal (1/pi) Tr[D(-a) rho D(a) Pi] evaluation; slow, used as a cross-check."""
    if len(state.dims) != 1:
        raise StateError("wigner_parity() needs a single-mode state")
    rho = state.dm()
    dim = rho.shape[0] + pad
    big = embed(rho, dim)
    par = np.diag(parity(dim))
    out = np.empty((len(ps), len(xs)))
    for j, p in enumerate(ps):
        for i, x in enumerate(xs):
            d = displacement((x + 1j * p) / math.sqrt(2), dim)
            moved = d.conj().T @ big @ d
            out[j, i] = np.real(np.sum(np.diag(moved) * par)) / math.pi
    return out


def save_state(state: QuantumState, path: str | Path) -> None:
    """JSON container: dims header plus row-major real/imag entries."""
    payload = {
        "format": "dualmag-state/1",
        "kind": state.kind,
        "dims": list(state.dims),
        "shape": list(state.data.shape),
        "real": state.data.real.ravel(order="C").tolist(),
        "imag": state.data.imag.ravel(order="C").tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_state(path: str | Path) -> QuantumState:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "dualmag-state/1":
        raise StateError("unrecognized state container")
    data = np.asarray(payload["real"]) + 1j * np.asarray(payload["imag"])
    return QuantumState(data.reshape(payload["shape"]), tuple(payload["dims"]))
