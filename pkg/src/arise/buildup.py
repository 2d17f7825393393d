"""Macroscopic polarization build-up over many shots.

Each shot converts a fraction ``alpha`` of the remaining unpolarized spins
while polarized spins relax at rate ``gamma``:

    dp/dt = alpha (1 - p) - gamma p,   p(0) = 0

so ``p(t) = alpha / (alpha + gamma) (1 - exp(-(alpha + gamma) t))``. A
measured build-up (in arbitrary signal units) is fitted with
``p_max (1 - exp(-gamma_tilde t))``; knowing ``gamma`` independently then gives
the absolute saturation level ``alpha / gamma_tilde``. Times are in minutes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, curve_fit


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class BuildupParams:
    alpha: float
    gamma: float

    def __post_init__(self):
        if not (self.alpha >= 0 and self.gamma >= 0 and self.alpha + self.gamma > 0):
            raise ValueError("need alpha >= 0, gamma >= 0 and alpha + gamma > 0")


def buildup_curve(params: BuildupParams, t) -> np.ndarray:
    k = params.alpha + params.gamma
    return params.alpha / k * -np.expm1(-k * np.asarray(t, dtype=float))


def saturating(t, p_max, gamma_tilde):
    return p_max * -np.expm1(-gamma_tilde * t)


@dataclass(frozen=True)
class BuildupFit:
    gamma_tilde: float
    p_max: float
    covariance: np.ndarray  # over (gamma_tilde, p_max)

    def __post_init__(self):
        if not (self.gamma_tilde > 0 and self.p_max > 0):
            raise ValueError("gamma_tilde and p_max must be positive")
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float).reshape(2, 2))

    def __call__(self, t) -> np.ndarray:
        return saturating(np.asarray(t, dtype=float), self.p_max, self.gamma_tilde)


def _initial_guess(t: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    """p_max from the last sample, rate from the log-linearized early data."""
    p_max = float(p[-1]) if p[-1] > 0 else float(np.max(np.abs(p))) or 1.0
    frac = np.clip(p / (1.05 * p_max) if p_max > 0 else p, -0.999, 0.999)
    early = slice(0, max(3, len(t) // 3))
    y = -np.log1p(-frac[early])
    tt = t[early]
    denom = float(np.dot(tt, tt))
    rate = float(np.dot(tt, y) / denom) if denom > 0 else 0.0
    if not (rate > 0 and math.isfinite(rate)):
        rate = 1.0 / max(float(np.ptp(t)), 1e-12)
    return p_max, rate


def fit_buildup(t, p) -> BuildupFit:
    """Least-squares fit of ``p_max (1 - exp(-gamma_tilde t))``."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    if t.shape != p.shape or t.size < 3:
        raise ValueError("need at least 3 (t, p) samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be increasing")
    p0 = _initial_guess(t, p)
    try:
        popt, pcov = curve_fit(saturating, t, p, p0=p0, maxfev=500, xtol=1e-14, ftol=1e-14)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"build-up fit did not converge: {exc}") from exc
    p_max, g = (float(v) for v in popt)
    if not (g > 0 and p_max > 0):
        raise FitError(f"build-up fit gave unphysical gamma_tilde={g:.4g}, p_max={p_max:.4g}")
    cov = np.asarray(pcov, dtype=float)[::-1, ::-1]
    if not np.all(np.isfinite(cov)):
        cov = np.zeros((2, 2))
    return BuildupFit(g, p_max, cov)


def absolute_polarization(fit: BuildupFit, gamma: float, gamma_err: float = 0.0) -> tuple[float, float]:
    """Saturation fraction ``(gamma_tilde - gamma) / gamma_tilde`` and its 1-sigma error."""
    g_t = fit.gamma_tilde
    if not g_t > gamma:
        raise ValueError("gamma_tilde must exceed the decay rate gamma (no polarization power otherwise)")
    frac = (g_t - gamma) / g_t
    # d frac / d gamma_tilde = gamma / g_t^2, d frac / d gamma = -1 / g_t
    var = (gamma / g_t**2) ** 2 * fit.covariance[0, 0] + (gamma_err / g_t) ** 2
    return frac, math.sqrt(max(var, 0.0))


def time_to_threshold(fit: BuildupFit, level: float) -> float:
    """Time at which the fitted curve first reaches ``level``, closed form."""
    if level >= fit.p_max:
        raise ValueError("level is never reached: at or above p_max")
    if level <= 0:
        return 0.0
    return -math.log1p(-level / fit.p_max) / fit.gamma_tilde


def time_to_threshold_bisect(fit: BuildupFit, level: float) -> float:
    """Root-finding cross-check of :func:`time_to_threshold`."""
    if level >= fit.p_max:
        raise ValueError("level is never reached: at or above p_max")
    hi = 1.0 / fit.gamma_tilde
    while fit(hi) < level:
        hi *= 2.0
    return brentq(lambda t: float(fit(t)) - level, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


# ---------------------------------------------------------------------- I/O


def samples_to_csv(t, p) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_min", "signal"])
    for a, b in zip(t, p):
        w.writerow([repr(float(a)), repr(float(b))])
    return buf.getvalue()


def samples_from_csv(text: str) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Read ``t_min,signal`` samples; an optional ``label`` column splits curves."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise ValueError("empty samples file")
    header = [h.strip() for h in rows[0]]
    if "t_min" not in header or "signal" not in header:
        raise ValueError("samples CSV needs t_min and signal columns")
    it, ip = header.index("t_min"), header.index("signal")
    il = header.index("label") if "label" in header else None
    curves: dict[str, tuple[list, list]] = {}
    for r in rows[1:]:
        name = r[il] if il is not None else "data"
        ts, ps = curves.setdefault(name, ([], []))
        ts.append(float(r[it]))
        ps.append(float(r[ip]))
    return {k: (np.array(a), np.array(b)) for k, (a, b) in curves.items()}


def fit_report(fit: BuildupFit, gamma: float | None = None, level: float | None = None,
               gamma_err: float = 0.0) -> dict:
    """JSON-ready summary with the fractional saturation and the threshold time."""
    rep = {
        "gamma_tilde": fit.gamma_tilde,
        "p_max": fit.p_max,
        "covariance": fit.covariance.tolist(),
        "p_max_frac": None,
        "p_max_frac_err": None,
        "t_to_98pct": None,
    }
    if gamma is not None:
        frac, err = absolute_polarization(fit, gamma, gamma_err)
        rep["p_max_frac"], rep["p_max_frac_err"] = frac, err
    if level is not None:
        rep["t_to_98pct"] = time_to_threshold(fit, level) if level < fit.p_max else "never reached"
    return rep


def report_to_json(rep: dict) -> str:
    return json.dumps(rep, indent=2)
