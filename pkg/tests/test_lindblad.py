import math

import numpy as np
import pytest

from dualmag import fock as F, lindblad as L
from dualmag.params import derive, reference_params, with_r

WM = 2 * math.pi * 134e3


def _random_rho(dim, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


@pytest.mark.parametrize("frame", L.FRAMES)
def test_block_kernel_matches_dense_reference(frame):
    p = with_r(reference_params(kappa=0.03 * WM, gamma=0.02 * WM, n_th=2.0, alpha=0.7), 0.4)
    spec = L.LindbladSpec(p, 4, 9, frame)
    rho = _random_rho(36)
    ref = L.rhs_reference(spec, rho)
    fast = L.rhs(spec, rho)
    assert np.max(np.abs(ref - fast)) <= 1e-12 * np.max(np.abs(ref))
    assert abs(np.trace(fast)) < 1e-12 * np.max(np.abs(ref))
    assert np.max(np.abs(fast - fast.conj().T)) < 1e-12 * np.max(np.abs(ref))


def test_squeezed_channels_equal_bath_seen_through_squeeze():
    # D/G channel set == g(n+1) D[c] + g n D[c^dag] with c = cosh r b + sinh r b^dag
    p = with_r(reference_params(gamma=0.05 * WM, n_th=1.5, kappa=0.0, lambda1=0.0, B_z=0.0), 0.5)
    spec = L.LindbladSpec(p, 2, 10, "squeezed")
    r = derive(p).r
    rho = _random_rho(20, 3)
    b = np.kron(np.eye(2), F.destroy(10))
    c = math.cosh(r) * b + math.sinh(r) * b.conj().T
    h = spec.hamiltonian
    direct = -1j * (h @ rho - rho @ h) + p.gamma * (p.n_th + 1) * L.superop_D(c, rho) \
        + p.gamma * p.n_th * L.superop_D(c.conj().T, rho)
    assert np.max(np.abs(direct - L.rhs_reference(spec, rho))) < 1e-9 * np.max(np.abs(direct))


def test_frames_identical_without_squeezing():
    p = reference_params(kappa=0.01 * WM, gamma=0.01 * WM, n_th=1.0)
    lab = L.LindbladSpec(p, 3, 8, "lab")
    sq = L.LindbladSpec(p, 3, 8, "squeezed")
    assert np.allclose(lab.hamiltonian, sq.hamiltonian)
    rho = _random_rho(24, 1)
    assert np.allclose(L.rhs(lab, rho), L.rhs(sq, rho), atol=1e-12 * WM)


def test_von_neumann_limit():
    p = with_r(reference_params(kappa=0.0, gamma=0.0), 0.3)
    spec = L.LindbladSpec(p, 3, 10, "squeezed")
    rho = _random_rho(30, 2)
    h = spec.hamiltonian
    assert np.allclose(L.rhs(spec, rho), -1j * (h @ rho - rho @ h), atol=1e-9 * WM)


def test_cavity_decay_rate():
    kappa = 1234.0
    p = reference_params(kappa=kappa, gamma=0.0, lambda1=0.0, B_z=0.0, omega_m=1.0, lambda2=0.0)
    spec = L.LindbladSpec(p, 3, 3, "lab")
    rho = np.kron(F.fock_state(1, 3).dm(), F.fock_state(0, 3).dm())
    n1 = np.kron(F.number(3), np.eye(3))
    assert np.trace(n1 @ L.rhs(spec, rho)).real == pytest.approx(-kappa)


def test_squeezed_vacuum_block_ground_energy():
    p = with_r(reference_params(), 0.3)
    d = derive(p)
    h = L.build_hamiltonian(p, 2, 60, "squeezed")[:60, :60]
    assert np.linalg.eigvalsh(h)[0] == pytest.approx(-d.f_s**2 / d.omega_s, rel=1e-9)


def test_mechanical_damping():
    g = 0.2 * WM
    p = reference_params(gamma=g, n_th=0.0, kappa=0.0, lambda1=0.0, B_z=0.0)
    spec = L.LindbladSpec(p, 2, 6, "lab")
    rho0 = np.kron(F.fock_state(0, 2).dm(), F.fock_state(3, 6).dm())
    ts = np.array([1.0, 3.0]) / g
    res = L.evolve(spec, rho0, ts)
    nb = np.kron(np.eye(2), F.number(6))
    for k, t in enumerate(ts):
        assert np.trace(nb @ res.state(k).data).real == pytest.approx(3 * math.exp(-g * t), abs=1e-6)


def test_thermal_steady_state():
    g = 0.5 * WM
    p = reference_params(gamma=g, n_th=1.0, kappa=0.0, lambda1=0.0, B_z=0.0)
    spec = L.LindbladSpec(p, 2, 40, "lab")
    rho0 = np.kron(F.fock_state(0, 2).dm(), F.fock_state(0, 40).dm())
    res = L.evolve(spec, rho0, [20 / g])
    nb = np.kron(np.eye(2), F.number(40))
    assert np.trace(nb @ res.state(0).data).real == pytest.approx(1.0, abs=1e-4)


def test_packing_roundtrip():
    lay = L.PackedLayout.of(4, 5)
    rho = _random_rho(20, 5)
    assert np.array_equal(L.unpack(L.pack(rho, lay), lay), rho)
    assert lay.npairs == 10


def test_reduced_cavity_from_packed():
    lay = L.PackedLayout.of(3, 4)
    rho = _random_rho(12, 6)
    ref = F.partial_trace(F.QuantumState(rho, (3, 4)), 0).data
    assert np.allclose(L.reduced_cavity_blocks(L.pack(rho, lay), lay), ref)


def test_conservation_log_and_purity_recovery():
    p = with_r(reference_params(kappa=0.0, gamma=0.0, alpha=1.0), 0.2)
    d = derive(p)
    dc, dm = 12, 24
    res = L.evolve(L.LindbladSpec(p, dc, dm), L.initial_state(p, dc, dm), [d.tau1 / 2, d.tau1])
    for c in res.conservation:
        assert c["trace_defect"] < L.TRACE_TOL
        assert c["hermiticity_defect"] < L.HERMITIAN_TOL
        assert c["min_eigenvalue"] > L.POSITIVITY_WARN
    half = F.partial_trace(res.state(0), 0).purity()
    full = F.partial_trace(res.state(1), 0).purity()
    assert full > half


def test_positivity_abort():
    p = reference_params(gamma=0.1 * WM, n_th=1.0)
    lay = L.PackedLayout.of(2, 3)
    bad = np.diag([0.5, 0.6, -0.1, 0.0, 0.0, 0.0]).astype(complex)
    op = L.block_operator([p], 2, 3, "lab")
    with pytest.raises(L.PositivityError):
        L._evolve_blocks(op, lay, L.pack(bad, lay)[None], [1e-9], 1e-8, 1e-10)


def test_frame_transform_roundtrip():
    rho = F.thermal_dm(0.3, 40).data
    sq = L.to_squeezed_frame(rho, 0.3, 60)
    back = L.unsqueeze(sq, 0.3, 40)
    assert np.max(np.abs(back - rho)) < 1e-9


def test_heating_rule():
    p = with_r(reference_params(gamma=0.01 * WM, n_th=10.0), 0.8)
    tau1 = derive(p).tau1
    assert L.heated_occupation(p) == 10.0
    assert L.heated_occupation(p, tau1) == pytest.approx(10 * (1 - math.exp(-p.gamma * tau1)))
    assert L.mechanical_dim_rule(p) == math.ceil(40 + 8 * math.exp(1.6) + 10)
    assert L.mechanical_dim_rule(p, tau1) < L.mechanical_dim_rule(p)


def test_dissipation_free_cfi_matches_closed_form_pipeline():
    from dualmag import fisher

    p = with_r(reference_params(kappa=0.0, gamma=0.0, alpha=1.0), 0.3)
    d = derive(p)
    rep = L.cfi_dissipative(p, convergence="none")
    ideal = fisher.cfi_numeric(p, d.tau1, math.pi / 2).value
    assert rep.value == pytest.approx(ideal, rel=5e-3)


def test_unknown_convergence_mode():
    with pytest.raises(ValueError):
        L.cfi_time_series(reference_params(), [1e-6], convergence="sometimes")


def test_flatness_metric():
    t = np.linspace(0.8, 1.2, 41)
    f = 1 + 0.5 * (t - 1) ** 2
    assert L.flatness(t, f, 1.0) == pytest.approx(0.5 * 0.05**2, rel=1e-6)


def test_thermal_start_holds_thermal_tail():
    p = reference_params(gamma=0.001 * WM, n_th=2.0, alpha=0.5)
    t = [derive(p).tau1]
    _, hot = L.cfi_time_series(p, t, convergence="none", richardson=False, mechanics="thermal")
    _, cold = L.cfi_time_series(p, t, convergence="none", richardson=False, mechanics="coherent")
    assert hot["dims"][1] == max(L.mechanical_dim_rule(p), F.thermal_tail_dim(2.0) + 10)
    assert cold["dims"][1] == L.mechanical_dim_rule(p, t[0]) < hot["dims"][1]
