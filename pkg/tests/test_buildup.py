import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arise.buildup import (
    BuildupFit,
    BuildupParams,
    FitError,
    absolute_polarization,
    buildup_curve,
    fit_buildup,
    fit_report,
    samples_from_csv,
    samples_to_csv,
    saturating,
    time_to_threshold,
    time_to_threshold_bisect,
)

LINEAR = BuildupFit(0.0061, 14140.0, np.zeros((2, 2)))
OPTIMAL = BuildupFit(0.0071, 17850.0, np.zeros((2, 2)))


def test_curve_trivial_cases():
    assert buildup_curve(BuildupParams(0.0, 1.0), [0.0, 5.0, 50.0]).tolist() == [0.0, 0.0, 0.0]
    p = BuildupParams(0.2, 0.0)
    np.testing.assert_allclose(buildup_curve(p, [0.0, 1e6]), [0.0, 1.0])
    p = BuildupParams(0.3, 0.1)
    assert buildup_curve(p, 1e6) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        BuildupParams(-0.1, 1.0)
    with pytest.raises(ValueError):
        BuildupParams(0.0, 0.0)


@given(st.floats(1e-4, 1.0), st.floats(0.0, 1.0))
def test_curve_monotone_and_bounded(alpha, gamma):
    p = BuildupParams(alpha, gamma)
    t = np.linspace(0, 50 / (alpha + gamma), 300)
    y = buildup_curve(p, t)
    assert np.all(np.diff(y) >= -1e-15)
    assert np.all(y <= alpha / (alpha + gamma) + 1e-12)


@given(st.floats(1e-3, 1e-1), st.floats(1.0, 1e5))
def test_fit_round_trip(g, pmax):
    t = np.linspace(0, 5 / g, 40)
    fit = fit_buildup(t, saturating(t, pmax, g))
    assert fit.gamma_tilde == pytest.approx(g, rel=1e-6)
    assert fit.p_max == pytest.approx(pmax, rel=1e-6)


def test_fit_with_noise(rng):
    t = np.arange(0, 800, 20.0)
    y = saturating(t, 14140, 0.0061) * (1 + 0.02 * rng.standard_normal(t.size))
    fit = fit_buildup(t, y)
    assert abs(fit.gamma_tilde - 0.0061) < 3 * math.sqrt(fit.covariance[0, 0]) + 1e-4
    assert fit.covariance[0, 0] > 0 and fit.covariance[1, 1] > 0


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_buildup([0, 1], [0, 1])
    with pytest.raises(ValueError):
        fit_buildup([0, 2, 1], [0, 1, 2])
    with pytest.raises(FitError):
        fit_buildup(np.arange(10.0), -np.arange(10.0))


def test_absolute_polarization_values():
    assert absolute_polarization(LINEAR, 1 / 223)[0] == pytest.approx(0.2649, abs=1e-3)
    assert absolute_polarization(OPTIMAL, 1 / 223)[0] == pytest.approx(0.3684, abs=1e-3)
    assert absolute_polarization(OPTIMAL, 0.0) == (1.0, 0.0)
    with pytest.raises(ValueError):
        absolute_polarization(LINEAR, 0.01)


def test_absolute_polarization_error_propagation():
    cov = np.diag([1e-8, 0.0])
    frac, err = absolute_polarization(BuildupFit(0.0061, 1.0, cov), 1 / 223, gamma_err=0.0)
    assert err == pytest.approx((1 / 223) / 0.0061**2 * 1e-4, rel=1e-12)
    _, err2 = absolute_polarization(BuildupFit(0.0061, 1.0, cov), 1 / 223, gamma_err=1e-4)
    assert err2 == pytest.approx(math.hypot(err, 1e-4 / 0.0061))


def test_threshold_times():
    f = BuildupFit(0.01, 5.0, np.zeros((2, 2)))
    assert time_to_threshold(f, 5.0 * (1 - math.exp(-1))) == pytest.approx(100.0)
    assert time_to_threshold(f, 0.0) == 0.0
    with pytest.raises(ValueError):
        time_to_threshold(f, 5.0)
    level = 0.98 * 14140
    t_lin, t_opt = time_to_threshold(LINEAR, level), time_to_threshold(OPTIMAL, level)
    assert t_lin == pytest.approx(641.3, abs=0.5)
    assert t_opt == pytest.approx(210.9, abs=0.5)
    assert 2.5 <= t_lin / t_opt <= 3.2


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_threshold_monotone_and_matches_bisection(a, b):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    assert time_to_threshold(OPTIMAL, lo * OPTIMAL.p_max) < time_to_threshold(OPTIMAL, hi * OPTIMAL.p_max)
    level = hi * OPTIMAL.p_max
    assert time_to_threshold_bisect(OPTIMAL, level) == pytest.approx(time_to_threshold(OPTIMAL, level), rel=1e-6)


def test_samples_csv():
    t = np.array([0.0, 10.0, 20.0])
    y = np.array([0.0, 1.5, 2.25])
    d = samples_from_csv(samples_to_csv(t, y))
    np.testing.assert_array_equal(d["data"][0], t)
    np.testing.assert_array_equal(d["data"][1], y)
    two = samples_from_csv("label,t_min,signal\na,0,0\na,1,1\nb,0,0\n")
    assert sorted(two) == ["a", "b"] and two["a"][0].tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        samples_from_csv("x,y\n1,2\n")


def test_fit_report():
    rep = fit_report(OPTIMAL, 1 / 223, 0.98 * 14140)
    assert set(rep) >= {"gamma_tilde", "p_max", "covariance", "p_max_frac", "t_to_98pct"}
    assert rep["t_to_98pct"] == pytest.approx(210.9, abs=0.5)
    assert fit_report(LINEAR, None, 20000.0)["t_to_98pct"] == "never reached"
