"""Acceptance suite: one group of tests per criterion, summarized at the end of the run."""
import math
import time

import numpy as np
import pytest

from dualmag import analytic as A, cli, fisher as FI, fock, lindblad as L, spectra as S
from dualmag.params import KB, actuation_constant, derive, reference_params, with_r

WM = 2 * math.pi * 134e3


@pytest.fixture(autouse=True)
def _criterion_tag(request, record_property):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        record_property("criterion", m.args[0])
        record_property("title", m.args[1])


def _ideal(r, **kw):
    return with_r(reference_params(kappa=0.0, gamma=0.0, alpha=1.0, N1=1.0, **kw), r)


# --- 1 --------------------------------------------------------------------------

@pytest.mark.criterion(1, "actuation constant and spring constant")
def test_actuation_constant(record_property):
    p = reference_params()
    c = actuation_constant(p)
    # second route: m w_m^2 L a_mag / E written out from the reference inputs
    direct = 4e-11 * WM**2 * 630e-6 * 5e8 / 30e9
    assert c == pytest.approx(direct, rel=1e-12)
    assert c == pytest.approx(2.98e-4, rel=1e-2)
    record_property("detail", f"c_act = {c:.4e} N/T")


@pytest.mark.criterion(1, "actuation constant and spring constant")
@pytest.mark.xfail(strict=True, reason="m w_m^2 = 28.36 N/m from the reference mass and frequency; "
                                       "28 N/m is a two-figure rounding, 1.3% away")
def test_spring_constant_within_one_percent(record_property):
    p = reference_params()
    k = p.mass * p.omega_m**2
    record_property("detail", f"k = m w_m^2 = {k:.3f} N/m (28 at two significant figures)")
    assert round(k, 0) == 28.0
    assert k == pytest.approx(28.0, rel=1e-2)


# --- 2 --------------------------------------------------------------------------

@pytest.mark.criterion(2, "periodic squeezing extrema")
@pytest.mark.parametrize("r", [0.2, 0.4021, 0.5756])
def test_squeezing_extrema(r):
    d = derive(with_r(reference_params(), r))
    # two periods: minima at m pi / w_s, maxima halfway between
    tmin = np.arange(0, 3) * math.pi / d.omega_s
    tmax = (np.arange(0, 2) + 0.5) * math.pi / d.omega_s
    assert np.max(np.abs(A.variance_x(tmin, d) - 0.5)) < 1e-10
    assert np.allclose(A.variance_x(tmax, d), math.exp(4 * r) / 2, rtol=1e-10, atol=0)
    # sampled extremes over two periods from a dense grid
    grid = np.linspace(0, 2 * math.pi / d.omega_s, 4001)
    v = A.variance_x(grid, d)
    assert v.min() == pytest.approx(0.5, abs=1e-10)
    assert v.max() == pytest.approx(math.exp(4 * r) / 2, rel=1e-10)
    smax = A.squeezing_degree(tmax[0], d)
    assert smax == pytest.approx(10 * math.log10(math.exp(4 * r)), rel=1e-10)
    assert smax == pytest.approx(A.max_squeezing_db(r), rel=1e-10)


# --- 3 --------------------------------------------------------------------------

@pytest.mark.criterion(3, "decoupling at tau_1 and tau_2")
def test_decoupling_random_draws():
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(20):
        r = rng.uniform(0, 0.5)
        alpha = complex(*rng.uniform(-0.8, 0.8, 2))
        beta = complex(*rng.uniform(-0.8, 0.8, 2))
        p = with_r(reference_params(alpha=alpha, beta=beta, B_z=rng.uniform(-2, 2) * reference_params().B_z), r)
        d = derive(p)
        for m in (1, 2):
            st = A.materialize_state(A.EvolutionSpec(p, A.decoupling_time(m, d)))
            mech = fock.partial_trace(st, 1)
            f = fock.fidelity(mech, fock.coherent(beta, mech.dims[0], warn=False))
            worst = max(worst, 1 - f)
    assert worst <= 1e-8


@pytest.mark.criterion(3, "decoupling at tau_1 and tau_2")
def test_decoupling_master_equation(record_property, conservation_logs):
    r, beta = 0.2, 0.3 + 0.2j
    p = _ideal(r, beta=beta)
    d = derive(p)
    dc, dm = 16, 24
    res = L.evolve(L.LindbladSpec(p, dc, dm, "squeezed"), L.initial_state(p, dc, dm, "squeezed"),
                   [A.decoupling_time(1, d), A.decoupling_time(2, d)])
    conservation_logs.extend(res.conservation)
    target = fock.QuantumState(L.to_squeezed_frame(fock.coherent(beta, 4 * dm, warn=False).dm(), r, dm), (dm,))
    infid = [1 - fock.fidelity(fock.partial_trace(res.state(k), 1), target) for k in range(2)]
    record_property("detail", f"master equation 16x24: 1 - fidelity = {max(infid):.2e}")
    assert max(infid) <= 1e-6


# --- 4 --------------------------------------------------------------------------

@pytest.mark.criterion(4, "QFI closed form and e^{12 r} law")
def test_qfi_numeric_matches_closed_form(record_property):
    rs = [0.0, 0.2, 0.4]
    num = []
    for r in rs:
        p = _ideal(r)
        v = FI.qfi_numeric(A.EvolutionSpec(p, derive(p).tau1), method="fidelity").value
        assert v == pytest.approx(FI.qfi_analytic_tau1(p).value, rel=1e-3)
        num.append(v)
    slope = np.polyfit(rs, np.log(num), 1)[0]
    record_property("detail", f"numeric slope of ln F_q vs r = {slope:.5f}")
    assert slope == pytest.approx(12.0, rel=2e-2)


@pytest.mark.criterion(4, "QFI closed form and e^{12 r} law")
def test_qfi_analytic_slope():
    rs = np.linspace(0, 0.9, 19)
    vals = [FI.qfi_analytic_tau1(with_r(reference_params(), r)).value for r in rs]
    assert np.polyfit(rs, np.log(vals), 1)[0] == pytest.approx(12.0, rel=1e-10)


# --- 5 --------------------------------------------------------------------------

@pytest.mark.criterion(5, "homodyne CFI saturates the QFI")
@pytest.mark.parametrize("r", [0.0, 0.2, 0.4])
def test_cfi_saturation(r):
    p = _ideal(r)
    d = derive(p)
    fc = FI.cfi_numeric(p, d.tau1, math.pi / 2).value
    assert fc == pytest.approx(FI.cfi_analytic_tau1(p, math.pi / 2).value, rel=1e-2)
    assert fc == pytest.approx(FI.qfi_analytic_tau1(p).value, rel=1e-2)
    assert fc == pytest.approx(FI.qfi_numeric(A.EvolutionSpec(p, d.tau1)).value, rel=1e-2)


# --- 6 --------------------------------------------------------------------------

@pytest.mark.criterion(6, "sensitivity range per root hertz")
@pytest.mark.parametrize("r, expected", [(0.0, 2.6e-15), (0.9, 2.9e-17)])
def test_sensitivity_values(r, expected, record_property):
    p = with_r(reference_params(N1=1e6), r)
    from_qfi = FI.sensitivity(FI.qfi_analytic_tau1(p), "per_sqrt_hz")
    closed = FI.sensitivity_bound_closed_form(p)
    assert from_qfi == pytest.approx(closed, rel=1e-10)
    assert from_qfi == pytest.approx(expected, rel=5e-2)
    assert 1e-17 <= from_qfi <= 1e-14
    record_property("detail", f"r = {r}: {from_qfi:.3e} T/sqrt(Hz)")


# --- 7 and 8: dissipative runs ---------------------------------------------------

@pytest.fixture(scope="module")
def conservation_logs():
    return []


@pytest.fixture(scope="module")
def timing():
    return {"dissipative_s": 0.0}


def _cfi_point(timing, logs, kappa, gamma, n_th):
    p = with_r(reference_params(alpha=1.0, kappa=kappa * WM, gamma=gamma * WM, n_th=n_th), 0.3)
    start = time.perf_counter()
    rep = L.cfi_dissipative(p, convergence="reduce", richardson=True)
    timing["dissipative_s"] += time.perf_counter() - start
    logs.extend(rep.diagnostics["conservation"])
    return rep.value


@pytest.fixture(scope="module")
def trend_values(timing, conservation_logs):
    cache = {}

    def get(**kw):
        key = (kw.get("kappa", 0.01), kw.get("gamma", 0.001), kw.get("n_th", 10.0))
        if key not in cache:
            cache[key] = _cfi_point(timing, conservation_logs, *key)
        return cache[key]

    return get


@pytest.mark.criterion(7, "dissipative trends, window flatness, frame equivalence")
@pytest.mark.parametrize("name, values", [("n_th", (0.1, 1.0, 10.0)), ("kappa", (0.01, 0.05, 0.1)),
                                          ("gamma", (0.001, 0.003, 0.01))])
def test_cfi_decreases_with_loss(name, values, trend_values, record_property):
    fc = [trend_values(**{name: v}) for v in values]
    record_property("detail", f"F_c vs {name} {values}: " + ", ".join(f"{v:.5e}" for v in fc))
    assert all(b < a for a, b in zip(fc, fc[1:]))


@pytest.mark.criterion(7, "dissipative trends, window flatness, frame equivalence")
def test_cfi_window_flat(timing, conservation_logs, record_property):
    p = with_r(reference_params(alpha=1.0, kappa=0.01 * WM, gamma=0.01 * WM, n_th=10.0), 0.8)
    tau1 = derive(p).tau1
    start = time.perf_counter()
    ws = L.cfi_time_window(p, tau1 * np.linspace(0.95, 1.05, 11), convergence="reduce", richardson=False,
                           drift_tol=0.02)
    timing["dissipative_s"] += time.perf_counter() - start
    conservation_logs.extend(ws.diagnostics["conservation"])
    record_property("detail", f"window flatness {ws.flatness:.2%} at dims {ws.diagnostics['dims']}, "
                              f"truncation drift {ws.diagnostics['drift']:.2%}")
    assert ws.flatness < 0.10


@pytest.mark.criterion(7, "dissipative trends, window flatness, frame equivalence")
@pytest.mark.parametrize("r, lab_dim, sq_dim", [(0.3, 60, 40), (0.6, 130, 60)])
def test_frame_equivalence(r, lab_dim, sq_dim, timing, conservation_logs, record_property):
    p = with_r(reference_params(kappa=0.02 * WM, gamma=0.01 * WM, n_th=0.5, alpha=1.0, beta=0.3), r)
    d = derive(p)
    cav = np.full((2, 2), 0.5, complex)  # (|0> + |1>)/sqrt 2

    def mech0(dm, frame):
        rho = fock.coherent(p.beta, 2 * dm + 20, warn=False).dm()
        return L.to_squeezed_frame(rho, r, dm) if frame == "squeezed" else rho[:dm, :dm]

    times = d.tau1 * np.array([0.25, 0.5, 1.0])
    start = time.perf_counter()
    lab = L.evolve(L.LindbladSpec(p, 2, lab_dim, "lab"), np.kron(cav, mech0(lab_dim, "lab")), times)
    sq = L.evolve(L.LindbladSpec(p, 2, sq_dim, "squeezed"), np.kron(cav, mech0(sq_dim, "squeezed")), times)
    timing["dissipative_s"] += time.perf_counter() - start
    conservation_logs.extend(lab.conservation + sq.conservation)
    k = 32
    worst = 0.0
    for i in range(len(times)):
        a = lab.state(i).data.reshape(2, lab_dim, 2, lab_dim)[:, :k, :, :k]
        b = L.unsqueeze_joint(sq.state(i).data, 2, sq_dim, r, k, tol=1.0).reshape(2, k, 2, k)
        worst = max(worst, float(np.max(np.abs(a - b))))
    record_property("detail", f"r = {r}: max entrywise lab vs squeezed difference {worst:.1e}")
    assert worst < 1e-6


@pytest.mark.criterion(7, "dissipative trends, window flatness, frame equivalence")
def test_dissipative_runtime_budget(timing, record_property):
    record_property("detail", f"dissipative runs took {timing['dissipative_s']:.0f} s")
    assert 0 < timing["dissipative_s"] < 20 * 60


@pytest.mark.criterion(8, "trace, Hermiticity and positivity conservation")
def test_conservation(conservation_logs, record_property):
    assert len(conservation_logs) > 50
    tr = max(c["trace_defect"] for c in conservation_logs)
    herm = max(c["hermiticity_defect"] for c in conservation_logs)
    eig = min(c["min_eigenvalue"] for c in conservation_logs)
    record_property("detail", f"{len(conservation_logs)} checkpoints: trace {tr:.1e}, "
                              f"Hermiticity {herm:.1e}, min eigenvalue {eig:.1e}")
    assert tr < 1e-7
    assert herm < 1e-10
    assert eig > -1e-6


# --- 9 --------------------------------------------------------------------------

@pytest.mark.criterion(9, "force-noise floor and bandwidth")
def test_thermal_floor(record_property):
    sp = S.SpectraParams()
    floor = S.thermal_force_floor(sp)
    assert floor == pytest.approx(math.sqrt(2 * sp.mass * sp.gamma * KB * sp.temperature), rel=1e-12)
    assert floor == pytest.approx(5.0e-16, rel=1e-2)
    # the thermal-only sensitivity equals the floor at every frequency
    w = np.linspace(0, 5 * sp.omega_res, 501)
    assert np.allclose(S.force_sensitivity(sp, w, shot=False), floor, rtol=1e-10)
    record_property("detail", f"floor {floor:.4e} N/sqrt(Hz)")


@pytest.mark.criterion(9, "force-noise floor and bandwidth")
def test_bandwidth_widens(record_property):
    sp = S.SpectraParams()
    grid = S.default_grid(sp)
    widths = []
    for pw in (20e-12, 200e-12, 2e-9, 20e-9):
        lo, hi = S.bandwidth(sp.replace(probe_power=pw), grid)
        widths.append((hi - lo) / (2 * math.pi))
    record_property("detail", "bandwidths (kHz): " + ", ".join(f"{w / 1e3:.1f}" for w in widths))
    assert all(b > a for a, b in zip(widths, widths[1:]))


# --- 10 -------------------------------------------------------------------------

DETERMINISM_CONFIGS = {
    "qfi": "",
    "pae": "[pae]\nsqrt_N2 = lin(0, 1500, 8)\n",
    "sensitivity-surface": "[sensitivity-surface]\nN1 = log(1e4, 1e8, 5)\nN2 = lin(0, 2.4e6, 4)\n",
    "spectra": "[spectra]\ncount = 301\n",
    "cfi-vs-nth": "[cfi-vs-nth]\nr = 0.1\nn_th = list(0.1, 1)\nrichardson = false\nconvergence = none\n",
}


@pytest.mark.criterion(10, "byte-identical output, sequential and parallel")
@pytest.mark.parametrize("scenario", sorted(DETERMINISM_CONFIGS))
def test_determinism(scenario, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(DETERMINISM_CONFIGS[scenario])
    runs = {"seq": 1, "again": 1, "par": 2}
    for name, threads in runs.items():
        argv = [scenario, "--config", str(cfg), "--out", str(tmp_path / name), "--threads", str(threads)]
        assert cli.main(argv) == 0
    for table in cli.SCENARIOS[scenario].tables:
        ref = (tmp_path / "seq" / f"{table}.csv").read_bytes()
        assert len(ref) > 0
        for name in ("again", "par"):
            assert (tmp_path / name / f"{table}.csv").read_bytes() == ref
