"""First-order cavity response and response-factor calibration.

The intracavity field obeys

    d/dt W_int = g (W_ext exp(-i phi_ext) - W_int) - i delta_cs W_int

which is linear in the drive, so it is integrated independently of the spin
dynamics with an exact first-order-hold (piecewise-linear input) scheme.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import lfilter

from .pulses import OMEGA_MAX, Pulse, constant_pulse
from .spinsys import TWO_PI, HyperfineTensor, SystemParams


@dataclass(frozen=True)
class CavityParams:
    gamma_cav: float = TWO_PI * 9.24
    delta_cs: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.gamma_cav) and self.gamma_cav > 0):
            raise ValueError("gamma_cav must be positive")
        if not np.isfinite(self.delta_cs):
            raise ValueError("delta_cs must be finite")


@dataclass(frozen=True, eq=False)
class FieldTrace:
    t: np.ndarray
    omega_int: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        w = np.asarray(self.omega_int, dtype=complex)
        if t.shape != w.shape or t.size < 2:
            raise ValueError("field trace needs matching t and omega_int")
        d = np.diff(t)
        if np.any(d <= 0) or np.ptp(d) > 1e-9 * max(1.0, t[-1]):
            raise ValueError("field trace grid must be uniform and increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omega_int", w)

    @property
    def dt(self) -> float:
        return (self.t[-1] - self.t[0]) / (self.t.size - 1)


def _foh_filter(u: np.ndarray, h: float, cav: CavityParams) -> np.ndarray:
    """Exact response to an input that is linear between samples, x(0) = 0."""
    g = cav.gamma_cav
    a = g + 1j * cav.delta_cs
    ah = a * h
    em = np.exp(-ah)
    i0 = -np.expm1(-ah) / a
    i1 = (-np.expm1(-ah) - ah * em) / a**2
    drive = g * (u[:-1] * i0 + (u[1:] - u[:-1]) * (i0 - i1 / h))
    out = np.empty_like(u, dtype=complex)
    out[0] = 0.0
    out[1:] = lfilter([1.0], [1.0, -em], drive)
    return out


def filter_pulse(pulse: Pulse, cav: CavityParams, dt_out: float | None = None) -> FieldTrace:
    """Integrate the cavity response to ``pulse``, starting from an empty cavity."""
    u = pulse.complex_drive()
    if not np.all(np.isfinite(u)):
        raise ValueError("pulse contains non-finite samples")
    dt = pulse.dt
    if dt_out is None or np.isclose(dt_out, dt, rtol=1e-9):
        return FieldTrace(pulse.t, _foh_filter(u, dt, cav))
    ratio = dt / dt_out
    if ratio > 1 and np.isclose(ratio, round(ratio), rtol=1e-9):
        # refine: the piecewise-linear input keeps its knots on the finer grid
        m = int(round(ratio))
        n = (pulse.t.size - 1) * m + 1
        t_f = np.linspace(pulse.t[0], pulse.t[-1], n)
        u_f = np.interp(t_f, pulse.t, u.real) + 1j * np.interp(t_f, pulse.t, u.imag)
        return FieldTrace(t_f, _foh_filter(u_f, dt / m, cav))
    w = _foh_filter(u, dt, cav)
    n_out = int(np.floor(pulse.duration / dt_out + 1e-9)) + 1
    t_o = pulse.t[0] + dt_out * np.arange(n_out)
    return FieldTrace(t_o, np.interp(t_o, pulse.t, w.real) + 1j * np.interp(t_o, pulse.t, w.imag))


def steady_state(omega_ext: float, phi: float, cav: CavityParams) -> complex:
    """Long-time intracavity field for a constant drive."""
    g = cav.gamma_cav
    return complex(g * omega_ext * np.exp(-1j * phi) / (g + 1j * cav.delta_cs))


# ------------------------------------------------------------- calibration


@dataclass(frozen=True, eq=False)
class SpectrumGrid:
    """|DFT| of the driven population signal: one row per cavity detuning.

    Both axes are linear MHz since this object is what goes to and from disk.
    """

    freqs: np.ndarray
    detunings_mhz: np.ndarray
    magnitude: np.ndarray

    def __post_init__(self):
        if self.magnitude.shape != (len(self.detunings_mhz), len(self.freqs)):
            raise ValueError("magnitude must be (n_detunings, n_freqs)")

    @property
    def detunings(self) -> np.ndarray:
        return TWO_PI * np.asarray(self.detunings_mhz)


def default_detunings(n: int = 51, span_mhz: float = 25.0) -> np.ndarray:
    return TWO_PI * np.linspace(-span_mhz, span_mhz, n)


def simulate_rabi_grid(
    cav_candidate: CavityParams,
    detunings: Sequence[float] | None = None,
    t_max: float = 0.6,
    params: SystemParams | None = None,
    omega_ext: float = OMEGA_MAX,
    n_samples: int = 256,
    dt: float = 1e-3,
) -> SpectrumGrid:
    """Rabi spectra of a constant drive seen through the cavity at each detuning.

    The spin is kept resonant with the drive and nuclei are decoupled; the
    population of ``|0>`` stands in for the photon-count readout.
    """
    from .solver import Drive, evolve_batch

    if detunings is None:
        detunings = default_detunings()
    detunings = np.asarray(detunings, dtype=float)
    if detunings.size == 0:
        raise ValueError("need at least one cavity detuning")
    params = params or SystemParams()
    params = params.with_(
        couplings=(HyperfineTensor(0.0, 0.0, 0.0),), delta_es=0.0, nuclear_init=()
    )
    pulse = constant_pulse(omega_ext, t_max, dt)
    fields = np.array(
        [filter_pulse(pulse, CavityParams(cav_candidate.gamma_cav, d)).omega_int for d in detunings]
    )
    drive = Drive(t0=0.0, dt=pulse.dt, c=fields, det=np.zeros((1, pulse.t.size)), theta=np.zeros((1, pulse.t.size)))
    # steps chosen so each output sample sits on a step boundary
    k = max(1, int(np.ceil(t_max / (n_samples - 1) / dt)))
    res = evolve_batch([params] * detunings.size, drive, t_max, n_out=n_samples, substeps=k)
    signal = res.pop_electron[:, :, 0]
    signal = signal - signal.mean(axis=1, keepdims=True)
    mag = np.abs(np.fft.rfft(signal, axis=1))
    freqs = np.fft.rfftfreq(n_samples, d=t_max / (n_samples - 1))
    return SpectrumGrid(freqs, detunings / TWO_PI, mag)


def _normalized(m: np.ndarray) -> np.ndarray:
    s = np.sum(np.abs(m))
    return m / s if s > 0 else m


def grid_error(measured: SpectrumGrid, simulated: SpectrumGrid) -> float:
    """Summed absolute difference of the two normalized grids."""
    if measured.magnitude.shape != simulated.magnitude.shape:
        raise ValueError("grid shapes differ")
    return float(np.sum(np.abs(_normalized(measured.magnitude) - _normalized(simulated.magnitude))))


def _inverted_gaussian(g, c0, c1, mu, s):
    return c0 - c1 * np.exp(-((g - mu) ** 2) / (2 * s**2))


@dataclass(frozen=True, eq=False)
class Calibration:
    gamma_cav: float
    candidates: np.ndarray
    errors: np.ndarray
    fit_params: np.ndarray  # c0, c1, mu, s
    fit_cov: np.ndarray


def calibrate_gamma(
    measured: SpectrumGrid,
    candidates: Sequence[float],
    params: SystemParams | None = None,
    t_max: float = 0.6,
    omega_ext: float = OMEGA_MAX,
) -> Calibration:
    """Fit the cavity response factor by matching simulated spectrum grids.

    ``candidates`` are angular rad/us. The minimum of the error-vs-gamma
    curve is located with an inverted-Gaussian least-squares fit.
    """
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size < 4:
        raise ValueError("need at least 4 candidate gamma values for the Gaussian fit")
    n_samples = 2 * (measured.freqs.size - 1)
    errors = np.empty(candidates.size)
    for i, g in enumerate(candidates):
        sim = simulate_rabi_grid(
            CavityParams(g), measured.detunings, t_max, params, omega_ext, n_samples
        )
        errors[i] = grid_error(measured, sim)
    j = int(np.argmin(errors))
    span = np.ptp(candidates)
    p0 = [errors.max(), max(errors.max() - errors.min(), 1e-12), candidates[j], span / 4]
    try:
        popt, pcov = curve_fit(_inverted_gaussian, candidates, errors, p0=p0, maxfev=5000)
    except RuntimeError as exc:
        raise RuntimeError(f"Gaussian fit of the error curve failed: {exc}") from exc
    return Calibration(float(popt[2]), candidates, errors, popt, pcov)


def grid_to_csv(grid: SpectrumGrid) -> str:
    """First row: frequency axis (MHz). First column: detuning (MHz)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["detuning_MHz"] + [repr(float(f)) for f in grid.freqs])
    for d, row in zip(grid.detunings_mhz, grid.magnitude):
        w.writerow([repr(float(d))] + [repr(float(v)) for v in row])
    return buf.getvalue()


def grid_from_csv(text: str) -> SpectrumGrid:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise ValueError("grid CSV needs a frequency header row and data rows")
    freqs = np.array([float(v) for v in rows[0][1:]])
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    if body.shape[1] != freqs.size + 1:
        raise ValueError("grid CSV rows do not match the frequency axis")
    return SpectrumGrid(freqs, body[:, 0], body[:, 1:])


def write_grid(grid: SpectrumGrid, path: str | Path) -> None:
    Path(path).write_text(grid_to_csv(grid))


def read_grid(path: str | Path) -> SpectrumGrid:
    return grid_from_csv(Path(path).read_text())
