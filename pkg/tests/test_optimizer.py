import json
import math

import numpy as np
import pytest

from arise.optimizer import (
    BudgetExhausted,
    DcrabAborted,
    DcrabConfig,
    EvalLog,
    MultiSweepCandidate,
    OptimizerError,
    arise,
    dcrab_optimize,
    nelder_mead,
)
from arise.pulses import SweepSpec, constant_pulse
from arise.spinsys import TWO_PI


# ------------------------------------------------------------- Nelder-Mead


def test_nm_quadratic():
    r = nelder_mead(lambda x: -np.sum((x - [1.0, -2.0]) ** 2), [0.0, 0.0], budget=400, xtol=1e-8)
    np.testing.assert_allclose(r.x, [1.0, -2.0], atol=1e-6)
    assert r.converged


def test_nm_one_dimensional():
    r = nelder_mead(lambda x: -((x[0] - 3.0) ** 2), [0.0], scale=0.5, budget=200)
    assert r.x[0] == pytest.approx(3.0, abs=1e-5)


def test_nm_rosenbrock():
    def f(x):
        return -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    r = nelder_mead(f, [-1.2, 1.0], scale=0.5, budget=2000, xtol=1e-10)
    np.testing.assert_allclose(r.x, [1.0, 1.0], atol=1e-4)


def test_nm_budget_is_hard_cap():
    calls = []
    r = nelder_mead(lambda x: calls.append(1) or -np.sum(x**2), [5.0, 5.0, 5.0], budget=7)
    assert len(calls) == 7 == r.n_evals
    assert not r.converged


def test_nm_rejects_non_finite():
    with pytest.raises(OptimizerError):
        nelder_mead(lambda x: math.nan, [0.0])
    with pytest.raises(ValueError):
        nelder_mead(lambda x: 0.0, [0.0], scale=0.0)


# ------------------------------------------------------------------ dCRAB

TARGET = 0.4


def bowl(pulse):
    """Best when the rms phase deviation from the start is 0.4 rad."""
    dev = pulse.phi_ext - pulse.phi_ext[0]
    rms = float(np.sqrt(np.mean(dev**2)))
    return -((rms - TARGET) ** 2), 0.0


def guess():
    return constant_pulse(TWO_PI * 2, 10.0, dt=1e-2)


def config(**kw):
    base = dict(n_super=2, n_basis=2, freq_interval=(0.2, 3.0), max_fom_evals=25, seed=3)
    base.update(kw)
    return DcrabConfig(**base)


def test_dcrab_monotone_and_within_budget():
    rec = dcrab_optimize(guess(), bowl, config())
    best = rec.best_so_far()
    assert np.all(np.diff(best) >= 0)
    assert len(rec.iterations) <= 2 * 25
    assert rec.best_fom > bowl(guess())[0]
    assert rec.best_fom == max(it["fom"] for it in rec.iterations)
    assert rec.best_pulse.duration == guess().duration


def test_dcrab_first_eval_is_guess():
    rec = dcrab_optimize(guess(), bowl, config(n_super=1))
    first = rec.iterations[0]
    assert first["coeffs"] == [0.0] * 4 and first["accepted"]


def test_dcrab_frequencies_in_interval():
    rec = dcrab_optimize(guess(), bowl, config(n_super=3))
    f = np.array(rec.frequencies_per_si)
    assert f.shape == (3, 1, 2)
    assert np.all((f >= 0.2) & (f <= 3.0))


def test_phase_only_keeps_amplitude():
    rec = dcrab_optimize(guess(), bowl, config())
    np.testing.assert_array_equal(rec.best_pulse.omega_ext, guess().omega_ext)


def test_amplitude_only_keeps_phase():
    def amp_fom(p):
        return -float(np.mean((p.omega_ext - TWO_PI * 3) ** 2)), 0.0

    rec = dcrab_optimize(guess(), amp_fom, config(channels=("amplitude",)))
    np.testing.assert_array_equal(rec.best_pulse.phi_ext, guess().phi_ext)
    assert rec.best_fom > amp_fom(guess())[0]


def test_noisy_acceptance_needs_margin():
    calls = iter(range(1000))

    def noisy(p):
        return bowl(p)[0] + 1e-3 * (next(calls) % 2), 0.5

    rec = dcrab_optimize(guess(), noisy, config(accept_k=1.0))
    assert sum(it["accepted"] for it in rec.iterations) == 1


def test_dcrab_validation():
    with pytest.raises(ValueError):
        DcrabConfig(n_basis=3, max_fom_evals=7)
    with pytest.raises(ValueError):
        DcrabConfig(freq_interval=(2.0, 1.0))
    with pytest.raises(ValueError):
        DcrabConfig(channels=("frequency",))
    with pytest.raises(ValueError):
        dcrab_optimize(guess(), bowl, config(freq_interval=(0.1, 100.0)))


def test_dcrab_abort_keeps_progress():
    n = [0]

    def flaky(p):
        n[0] += 1
        if n[0] > 5:
            raise RuntimeError("hardware fault")
        return bowl(p)

    with pytest.raises(DcrabAborted) as info:
        dcrab_optimize(guess(), flaky, config())
    assert len(info.value.record.iterations) == 5


def test_dcrab_nan_aborts():
    with pytest.raises(DcrabAborted):
        dcrab_optimize(guess(), lambda p: (math.nan, 0.0), config())


# ------------------------------------------------------------------ resume


def test_resume_replays_and_matches(tmp_path):
    full = tmp_path / "full.jsonl"
    ref = dcrab_optimize(guess(), bowl, config(), EvalLog(full))
    part = tmp_path / "part.jsonl"
    n = [0]

    def dies(p):
        n[0] += 1
        if n[0] > 17:
            raise KeyboardInterrupt
        return bowl(p)

    with pytest.raises(KeyboardInterrupt):
        dcrab_optimize(guess(), dies, config(), EvalLog(part))
    with part.open("a") as fh:
        fh.write('{"super": 0, "ev')  # torn write
    live = [0]

    def counting(p):
        live[0] += 1
        return bowl(p)

    rec = dcrab_optimize(guess(), counting, config(), EvalLog(part))
    assert live[0] == len(ref.iterations) - 17
    assert part.read_text() == full.read_text()
    assert rec.best_fom == ref.best_fom


def test_resume_mismatch_raises(tmp_path):
    path = tmp_path / "log.jsonl"
    dcrab_optimize(guess(), bowl, config(), EvalLog(path))
    with pytest.raises(OptimizerError):
        dcrab_optimize(guess(), bowl, config(seed=99), EvalLog(path))


def test_fresh_log_truncates(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text('{"junk": 1}\n')
    log = EvalLog(path, resume=False)
    assert path.read_text() == "" and not log.replaying


# ------------------------------------------------------------------ ARISE


def sweep_fom(p):
    """Favors long pulses with many sweeps, independent of physics."""
    return float(p.duration / 100 + np.mean(np.abs(p.delta)) / 1000), 0.0


def test_arise_single_point_grids():
    s1 = [SweepSpec(TWO_PI * 10, 5.0, TWO_PI * 2)]
    s2 = [MultiSweepCandidate(2)]
    res = arise(s1, s2, config(n_super=1, max_fom_evals=10), sweep_fom, dt=1e-2)
    a, b, c = res.chain()
    assert a <= b <= c
    assert res.step2.pulse.duration == pytest.approx(2 * 5.0, rel=1e-9)


def test_arise_keeps_linear_when_multi_is_worse():
    def prefers_short(p):
        return -p.duration, 0.0

    s1 = [SweepSpec(TWO_PI * 10, d, TWO_PI * 2) for d in (5.0, 10.0)]
    res = arise(s1, [MultiSweepCandidate(4, 10.0)], config(n_super=1, max_fom_evals=10), prefers_short, dt=1e-2)
    assert res.step1.params["duration"] == 5.0
    assert res.step2.fom == res.step1.fom
    assert res.record.best_fom >= res.step2.fom


def test_arise_empty_grid():
    with pytest.raises(ValueError):
        arise([], [MultiSweepCandidate(1)], config(), sweep_fom)


def test_arise_log_entries(tmp_path):
    path = tmp_path / "arise.jsonl"
    s1 = [SweepSpec(TWO_PI * 10, 5.0, TWO_PI * 2), SweepSpec(TWO_PI * 20, 5.0, TWO_PI * 2)]
    s2 = [MultiSweepCandidate(1), MultiSweepCandidate(2, 3.0)]
    arise(s1, s2, config(n_super=1, max_fom_evals=8), sweep_fom, dt=1e-2, log=EvalLog(path))
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert [e.get("step") for e in lines[:4]] == [1, 1, 2, 2]
    assert len(lines) == 4 + 8


def test_budget_exhausted_on_all_nan_grid():
    with pytest.raises(BudgetExhausted):
        arise([SweepSpec(TWO_PI * 10, 5.0, TWO_PI * 2)], [MultiSweepCandidate(1)], config(),
              lambda p: (math.nan, 0.0), dt=1e-2)


def test_dcrab_recovers_single_coefficient():
    w0, a_star = 1.3, 0.37
    base = constant_pulse(TWO_PI * 2, 10.0, dt=1e-2)
    target = a_star * np.sin(w0 * base.t)

    def fom(p):
        return -float(np.mean((p.phi_ext - target) ** 2)), 0.0

    cfg = DcrabConfig(n_super=1, n_basis=1, freq_interval=(w0, w0 * (1 + 1e-12)), max_fom_evals=150,
                      simplex_init_scale=0.2)
    rec = dcrab_optimize(base, fom, cfg)
    best = max(rec.iterations, key=lambda e: e["fom"])
    a, b = best["coeffs"]
    assert abs(a - a_star) < 1e-2 and abs(b) < 1e-2
