"""Acceptance suite: one PASS/FAIL line per criterion, printed in the terminal summary.

Criterion 7 runs the desk-scale ARISE configuration (several minutes on one core).
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm

from arise.buildup import BuildupFit, absolute_polarization, time_to_threshold, time_to_threshold_bisect
from arise.cavity import CavityParams, FieldTrace, calibrate_gamma, simulate_rabi_grid
from arise.cli import EnsembleFom, load_config, main
from arise.optimizer import DcrabConfig, EvalLog, dcrab_optimize, nelder_mead
from arise.pulses import (
    MultiSweepSpec,
    SweepSpec,
    constant_pulse,
    fitted_optimal,
    linear_sweep,
    sinusoidal_sweep,
)
from arise.solver import DensityState, initial_state, plateau_ratio, propagate
from arise.spinsys import (
    TWO_PI,
    DissipationRates,
    HyperfineTensor,
    SystemParams,
    build_hamiltonian,
    build_lindblad_ops,
)

ROOT = Path(__file__).resolve().parents[1]
RESULTS: dict[int, tuple[bool, str]] = {}


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def liouvillian(H, ops):
    d = H.shape[0]
    eye = np.eye(d)
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    for r in ops:
        K = r.conj().T @ r
        L += np.kron(r, r.conj()) - 0.5 * np.kron(K, eye) - 0.5 * np.kron(eye, K.T)
    return L


def test_criterion_1_oracle_equivalence():
    wl = TWO_PI * 9.2
    # Rabi splitting sqrt(0.6^2 + 0.8^2) wl meets the Hartmann-Hahn condition
    p = SystemParams().with_(
        couplings=(HyperfineTensor(*(TWO_PI * np.array([0.9, 0.3, -1.2]))),), delta_es=0.8 * wl
    )
    T, dt = 100.0, 1e-3
    t = np.linspace(0, T, int(round(T / dt)) + 1)
    field = FieldTrace(t, np.full(t.size, 0.6 * wl + 0j))
    t0 = time.perf_counter()
    tr, _ = propagate(initial_state(p), None, p, field=field, n_out=201)
    runtime = time.perf_counter() - t0
    P = expm(liouvillian(build_hamiltonian(p, 0.6 * wl), build_lindblad_ops(p.rates, 1)) * dt)
    y = initial_state(p).rho.ravel()
    worst = 0.0
    for k in range(1, 201):
        for _ in range(500):
            y = P @ y
        worst = max(worst, float(np.abs(y.reshape(6, 6) - tr.states[k].rho).max()))
    transfer = float(np.abs(tr.p_nuc[:, 0]).max())
    record(1, worst < 1e-5 and runtime < 10 and transfer > 0.05,
           f"max deviation {worst:.2e} over 100 us, runtime {runtime:.1f} s, peak |p_nuc| {transfer:.3f}")


def test_criterion_2_conservation():
    p, cav = SystemParams(), CavityParams()
    families = {
        "linear": linear_sweep(SweepSpec(TWO_PI * 20, 200.0, TWO_PI * 5)),
        "sinusoidal": sinusoidal_sweep(MultiSweepSpec(TWO_PI * 20, 10, 40.0, TWO_PI * 5)),
        "fitted": fitted_optimal(TWO_PI * 20, 50.0, n_segments=4),
    }
    t0 = time.perf_counter()
    worst = {"trace": 0.0, "hermiticity": 0.0, "min_eigenvalue": 0.0, "purity": 0.0}
    for pulse in families.values():
        assert pulse.duration == pytest.approx(200.0)
        tr, _ = propagate(initial_state(p), pulse, p, cav, n_out=201, check=False)
        for s in tr.states:
            v = s.violations()
            worst["trace"] = max(worst["trace"], v["trace"])
            worst["hermiticity"] = max(worst["hermiticity"], v["hermiticity"])
            worst["min_eigenvalue"] = min(worst["min_eigenvalue"], v["min_eigenvalue"])
            worst["purity"] = max(worst["purity"], s.purity())
    runtime = time.perf_counter() - t0
    ok = (worst["trace"] <= 1e-9 and worst["hermiticity"] <= 1e-10 and worst["min_eigenvalue"] > -1e-8
          and worst["purity"] <= 1 + 1e-8 and runtime < 120)
    record(2, ok, f"trace {worst['trace']:.1e}, herm {worst['hermiticity']:.1e}, "
                  f"min eig {worst['min_eigenvalue']:.1e}, purity {worst['purity']:.6f}, {runtime:.0f} s")


def test_criterion_3_rates():
    p = SystemParams(electron_init=(0.6, 0.4, 0.0))
    t = np.linspace(0, 200.0, 201)
    tr, _ = propagate(initial_state(p), None, p, field=FieldTrace(t, np.zeros(t.size, complex)), n_out=11)
    e0 = np.max(np.abs(tr.pop_electron[:, 0] / (0.6 * np.exp(-tr.t / 80.0)) - 1))
    e1 = np.max(np.abs(tr.pop_electron[:, 1] / (0.4 * np.exp(-tr.t / 180.0)) - 1))
    q = SystemParams(couplings=(HyperfineTensor(0, 0, 0),), omega_L=0.0, rates=DissipationRates(0.1, 0.0, 0.0))
    psi = np.zeros(6, complex)
    psi[0] = psi[2] = 1 / math.sqrt(2)
    rho = np.outer(psi, psi.conj())
    t2 = np.linspace(0, 40.0, 401)
    tr2, _ = propagate(DensityState(rho, 0.0), None, q, field=FieldTrace(t2, np.zeros(t2.size, complex)), n_out=9)
    coh = np.array([abs(s.rho[0, 2]) for s in tr2.states])
    rate = -np.polyfit(tr2.t, np.log(coh), 1)[0]
    e2 = abs(rate / (0.1 / 4) - 1)
    record(3, e0 < 1e-4 and e1 < 1e-4 and e2 < 1e-2,
           f"T1 rel err {e0:.1e} (80 us), {e1:.1e} (180 us); coherence rate rel err {e2:.1e}")


def test_criterion_4_calibration():
    dets = TWO_PI * np.linspace(-25, 25, 51)
    t0 = time.perf_counter()
    measured = simulate_rabi_grid(CavityParams(TWO_PI * 9.24), dets, n_samples=256)
    cal = calibrate_gamma(measured, TWO_PI * np.linspace(5, 14, 10))
    runtime = time.perf_counter() - t0
    g = cal.gamma_cav / TWO_PI
    record(4, abs(g - 9.24) <= 0.5 and runtime < 300, f"recovered {g:.3f} MHz for 9.24 MHz in {runtime:.1f} s")


def test_criterion_5_buildup_numbers():
    lin = BuildupFit(0.0061, 14140.0, np.zeros((2, 2)))
    opt = BuildupFit(0.0071, 17850.0, np.zeros((2, 2)))
    pl = absolute_polarization(lin, 1 / 223)[0] * 100
    po = absolute_polarization(opt, 1 / 223)[0] * 100
    s200 = absolute_polarization(opt, 1 / 200)[0] * 100
    s180 = absolute_polarization(opt, 1 / 180)[0] * 100
    level = 0.98 * lin.p_max
    t_lin, t_opt = time_to_threshold(lin, level), time_to_threshold(opt, level)
    bisect_ok = all(
        abs(time_to_threshold_bisect(f, level) / time_to_threshold(f, level) - 1) < 1e-6 for f in (lin, opt)
    )
    main_ok = abs(pl - 27.8) <= 2 and abs(po - 35.1) <= 2
    sens_ok = abs(s200 - 26.2) <= 2 and abs(s180 - 16.5) <= 2
    ratio_ok = 2.5 <= t_lin / t_opt <= 3.2 and bisect_ok
    record(5, main_ok and sens_ok and ratio_ok,
           f"p_max {pl:.1f}% / {po:.1f}% (main {'ok' if main_ok else 'off'}); "
           f"1/gamma 200, 180 min -> {s200:.1f}%, {s180:.1f}% vs 26.2%, 16.5% (sensitivity {'ok' if sens_ok else 'off'}); "
           f"t98 {t_lin:.0f}/{t_opt:.0f} min ratio {t_lin / t_opt:.2f}")


def test_criterion_6_optimizer():
    r1 = nelder_mead(lambda x: -((x[0] - 2.5) ** 2), [0.0], budget=300, xtol=1e-8)
    e1 = abs(r1.x[0] - 2.5)
    r2 = nelder_mead(lambda x: -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2), [-1.2, 1.0],
                     scale=0.5, budget=3000, xtol=1e-10)
    e2 = float(np.abs(r2.x - 1).max())
    w0, a_star = 1.3, 0.37
    base = constant_pulse(TWO_PI * 2, 10.0, dt=1e-2)
    target = a_star * np.sin(w0 * base.t)
    cfg = DcrabConfig(n_super=2, n_basis=1, freq_interval=(w0, w0 * (1 + 1e-12)), max_fom_evals=150,
                      simplex_init_scale=0.2)
    rec = dcrab_optimize(base, lambda p: (-float(np.mean((p.phi_ext - target) ** 2)), 0.0), cfg)
    # recovered coefficient: projection of the best phase onto the basis function
    s = np.sin(w0 * base.t)
    a_hat = float(np.dot(rec.best_pulse.phi_ext - base.phi_ext, s) / np.dot(s, s))
    e3 = abs(a_hat - a_star)
    mono = bool(np.all(np.diff(rec.best_so_far()) >= 0))
    record(6, e1 < 1e-4 and e2 < 1e-3 and e3 < 1e-2 and mono,
           f"1-D err {e1:.1e}, Rosenbrock err {e2:.1e}, dCRAB coefficient err {e3:.1e}, monotone {mono}")


@pytest.mark.slow
def test_criterion_7_arise_desk(tmp_path):
    cfg_path = ROOT / "configs" / "desk.ini"
    out = tmp_path / "desk"
    t0 = time.perf_counter()
    rc = main(["arise", "--config", str(cfg_path), "--out", str(out), "--fresh"])
    runtime = time.perf_counter() - t0
    assert rc == 0
    summ = json.loads((out / "arise_summary.json").read_text())
    lin_fom, final = summ["step1"]["fom"], summ["dcrab"]["best_fom"]
    log = [json.loads(x) for x in (out / "arise_log.jsonl").read_text().splitlines()]
    best = [e["best"] for e in log if "best" in e]
    mono = all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
    fom = EnsembleFom(load_config(str(cfg_path)))
    single = fom.result(linear_sweep(SweepSpec(TWO_PI * 20, 20.0, TWO_PI * 5))).mean
    multi = fom.result(sinusoidal_sweep(MultiSweepSpec(TWO_PI * 20, 8, 40.0, TWO_PI * 5))).mean
    record(7, final >= lin_fom and mono and multi >= single and runtime <= 1800,
           f"linear {lin_fom:.4f} -> dCRAB {final:.4f} (monotone {mono}, {runtime:.0f} s); "
           f"multi-sweep (tau/2 20 us, n_osc 8) {multi:.4f} vs single sweep {single:.4f}")


def test_criterion_8_plateaus():
    p = SystemParams()
    pulse = linear_sweep(SweepSpec(TWO_PI * 20, 50.0, TWO_PI * 5))
    tr, _ = propagate(initial_state(p), pulse, p, n_out=1001)
    r = plateau_ratio(tr, pulse, p)
    record(8, r <= 0.2, f"mean |dp/dt| outside / inside the window = {r:.3f} (needs <= 0.2)")


DETERMINISM_CFG = """
[ensemble]
n_instances = 10
seed = 3

[arise]
delta_max = 10, 20
duration = 10, 20
amplitude = 5
n_osc = 1, 2
half_period = lin

[dcrab]
n_super = 2
n_basis = 2
max_fom_evals = 12
seed = 5
"""


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text(DETERMINISM_CFG)
    logs = []
    for name in ("run1", "run2"):
        assert main(["arise", "--config", str(cfg), "--out", str(tmp_path / name), "--fresh"]) == 0
        logs.append((tmp_path / name / "arise_log.jsonl").read_bytes())
    n = len(logs[0].splitlines())
    record(9, logs[0] == logs[1] and n == 4 + 2 + 24, f"two runs, {n} JSONL records each, byte-identical {logs[0] == logs[1]}")
