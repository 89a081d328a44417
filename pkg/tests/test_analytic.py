import math

import numpy as np
import pytest
from scipy import linalg

from dualmag import analytic as A, fock as F
from dualmag.lindblad import LindbladSpec
from dualmag.params import derive, reference_params, with_r


def _params(r=0.2, **kw):
    return with_r(reference_params(**kw), r)


def test_branch_phase_at_decoupling_matches_closed_form():
    p = _params(0.3, beta=0.4 - 0.2j)
    d = derive(p)
    for n in range(5):
        b = A.branch(n, A.EvolutionSpec(p, d.tau1))
        assert b.phase == pytest.approx(A.phase_at_decoupling(n, 1, d), rel=1e-9, abs=1e-12)
        # mechanics returns to |beta> at tau_1
        assert abs(b.mech_amplitude - p.beta) < 1e-12


def test_pae_from_phase_difference():
    p = _params(0.4)
    d = derive(p)
    for n in (1, 2, 3):
        ratio = (A.phase_at_decoupling(n, 1, d) - A.phase_at_decoupling(0, 1, d)) / d.tau1
        assert A.pae(n, p) == pytest.approx(ratio, rel=1e-10)


def test_pae_scales_with_e4r():
    p0, p1 = _params(0.0), _params(0.5)
    assert A.pae(2, p1) / A.pae(2, p0) == pytest.approx(math.exp(2.0), rel=1e-10)


def test_materialize_matches_exact_propagator():
    # independent route: expm of the dense lab-frame Hamiltonian
    p = _params(0.2, alpha=0.5, beta=0.3 + 0.1j)
    d = derive(p)
    t = 0.37 * d.tau1
    dc, dm = 14, 60
    psi = A.materialize_state(A.EvolutionSpec(p, t), dc, dm)
    h = LindbladSpec(p, dc, dm, "lab").hamiltonian
    psi0 = np.kron(F.coherent(p.alpha, dc).data, F.coherent(p.beta, dm, warn=False).data)
    exact = linalg.expm(-1j * t * h) @ psi0
    # global phase from the dropped constant
    assert 1 - abs(np.vdot(exact, psi.data)) ** 2 < 1e-8


def test_decoupling_fidelity_random_draws():
    rng = np.random.default_rng(1234)
    for _ in range(20):
        r = rng.uniform(0, 0.5)
        alpha = complex(*rng.uniform(-0.7, 0.7, 2))
        beta = complex(*rng.uniform(-0.7, 0.7, 2))
        p = with_r(reference_params(alpha=alpha, beta=beta, B_z=rng.uniform(-2, 2) * reference_params().B_z), r)
        d = derive(p)
        for m in (1, 2):
            st_ = A.materialize_state(A.EvolutionSpec(p, A.decoupling_time(m, d)))
            mech = F.partial_trace(st_, 1)
            target = F.coherent(beta, mech.dims[0], warn=False)
            assert F.fidelity(mech, target) >= 1 - 1e-8


def test_entangled_midway():
    p = _params(0.3, alpha=1.0)
    d = derive(p)
    st_ = A.materialize_state(A.EvolutionSpec(p, d.half_period))
    assert F.partial_trace(st_, 0).purity() < 1 - 1e-6


def test_reduced_cavity_two_routes():
    p = _params(0.3, alpha=0.8 + 0.2j)
    d = derive(p)
    spec = A.EvolutionSpec(p, 0.41 * d.tau1)
    st_ = A.materialize_state(spec)
    from_joint = F.partial_trace(st_, 0).data
    closed = A.reduced_cavity_rho(spec, st_.dims[0]).data
    assert np.max(np.abs(from_joint - closed)) < 1e-8


def test_tomography_two_routes():
    p = _params(0.4)
    d = derive(p)
    rho = A.reduced_cavity_rho(A.EvolutionSpec(p, d.tau1)).data
    for l in (1, 2, 3):
        t = A.tomography(l, p)
        m = A.project_two_level(rho, l)
        assert m[0, 0].real == pytest.approx(t.rho_dd, abs=1e-12)
        assert m[1, 1].real == pytest.approx(t.rho_uu, abs=1e-12)
        assert m[0, 1] == pytest.approx(t.rho_du, abs=1e-12)
        assert m[1, 0] == pytest.approx(t.rho_ud, abs=1e-12)


def test_squeezing_extrema():
    for r in (0.2, 0.4021, 0.5756):
        d = derive(_params(r))
        ts = np.array([0.0, 0.5, 1.0, 1.5, 2.0]) * d.half_period
        v = A.variance_x(ts, d)
        assert np.max(np.abs(v[::2] - 0.5)) < 1e-10
        assert v[1] == pytest.approx(math.exp(4 * r) / 2, rel=1e-10)
        assert A.squeezing_degree(ts[1], d) == pytest.approx(A.max_squeezing_db(r), rel=1e-10)


def test_variance_matches_state():
    p = _params(0.3)
    d = derive(p)
    t = 0.21 * d.tau1
    st_ = A.mechanical_state(A.EvolutionSpec(p, t), 80)
    x = F.quadrature(80, 0.0)
    mean = F.expect(x, st_).real
    var = F.expect(x @ x, st_).real - mean**2
    assert var == pytest.approx(float(A.variance_x(t, d)), rel=1e-8)


def test_no_squeezing_gives_zero_db():
    d = derive(_params(0.0))
    ts = np.linspace(0, 2 * d.tau1, 17)
    assert np.all(np.abs(A.squeezing_degree(ts, d)) < 1e-12)


def test_truncation_error_raised():
    p = _params(0.3, alpha=1.0)
    with pytest.raises(F.TruncationError):
        A.materialize_state(A.EvolutionSpec(p, 0.5 * derive(p).tau1), 17, 4)
