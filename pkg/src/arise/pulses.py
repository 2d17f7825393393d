"""Pulse data model and the pulse families used by the ARISE protocol.

A pulse is the externally applied microwave drive on a uniform time grid:
an amplitude envelope ``omega_ext`` (rad/us) and a phase ``phi_ext`` (rad).
The drive detuning is the phase derivative; constructors that know it
analytically store it in ``delta`` so no numerical differentiation is needed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Literal, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .spinsys import TWO_PI

if TYPE_CHECKING:
    from .cavity import CavityParams

# Maximum Rabi frequency of the set-up, rad/us.
OMEGA_MAX = TWO_PI * 19.3
DEFAULT_DT = 1e-3  # us


def _uniform_step(t: np.ndarray) -> float:
    if t.ndim != 1 or t.size < 2:
        raise ValueError("time grid needs at least two samples")
    d = np.diff(t)
    dt = (t[-1] - t[0]) / (t.size - 1)
    if dt <= 0 or np.max(np.abs(d - dt)) > 1e-9 * max(1.0, abs(t[-1])):
        raise ValueError("time grid must be uniform and strictly increasing")
    return float(dt)


def detuning_to_phase(delta: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoidal integral of the detuning, phase 0 at t=0."""
    return cumulative_trapezoid(np.asarray(delta, dtype=float), dx=dt, initial=0.0)


def phase_to_detuning(phi: np.ndarray, dt: float) -> np.ndarray:
    """Second-order finite-difference derivative of the phase."""
    phi = np.asarray(phi, dtype=float)
    return np.gradient(phi, dt, edge_order=2 if phi.size > 2 else 1)


@dataclass(frozen=True, eq=False)
class Pulse:
    t: np.ndarray
    omega_ext: np.ndarray
    phi_ext: np.ndarray
    delta: np.ndarray | None = None
    omega_max: float = OMEGA_MAX

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        amp = np.asarray(self.omega_ext, dtype=float)
        phi = np.asarray(self.phi_ext, dtype=float)
        _uniform_step(t)
        if amp.shape != t.shape or phi.shape != t.shape:
            raise ValueError("amplitude and phase must match the time grid")
        if not (np.all(np.isfinite(amp)) and np.all(np.isfinite(phi))):
            raise ValueError("pulse samples must be finite")
        if np.any(amp < 0) or np.any(amp > self.omega_max * (1 + 1e-12)):
            raise ValueError("amplitude outside [0, omega_max]")
        if np.any(np.abs(np.diff(phi)) >= math.pi):
            raise ValueError("phase jumps by pi or more between samples")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omega_ext", amp)
        object.__setattr__(self, "phi_ext", phi)
        if self.delta is None:
            object.__setattr__(self, "delta", phase_to_detuning(phi, self.dt))
        else:
            d = np.asarray(self.delta, dtype=float)
            if d.shape != t.shape:
                raise ValueError("detuning must match the time grid")
            object.__setattr__(self, "delta", d)
        for a in (self.t, self.omega_ext, self.phi_ext, self.delta):
            a.setflags(write=False)

    @property
    def dt(self) -> float:
        return (self.t[-1] - self.t[0]) / (self.t.size - 1)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def complex_drive(self) -> np.ndarray:
        """``omega_ext * exp(-i phi_ext)``, the cavity input."""
        return self.omega_ext * np.exp(-1j * self.phi_ext)

    def same_grid(self, other: "Pulse") -> bool:
        return self.t.shape == other.t.shape and np.allclose(self.t, other.t, rtol=1e-12, atol=1e-12)

    def __eq__(self, other):
        if not isinstance(other, Pulse):
            return NotImplemented
        return (
            self.same_grid(other)
            and np.array_equal(self.omega_ext, other.omega_ext)
            and np.array_equal(self.phi_ext, other.phi_ext)
        )


def _grid(duration: float, dt: float) -> np.ndarray:
    if duration <= 0 or dt <= 0:
        raise ValueError("duration and dt must be positive")
    n = max(int(round(duration / dt)), 1) + 1
    return np.linspace(0.0, duration, n)


def _from_detuning(t, amplitude, delta, omega_max=OMEGA_MAX) -> Pulse:
    dt = (t[-1] - t[0]) / (t.size - 1)
    amp = np.full_like(t, float(amplitude)) if np.ndim(amplitude) == 0 else np.asarray(amplitude)
    return Pulse(t, amp, detuning_to_phase(delta, dt), delta=delta, omega_max=omega_max)


def constant_pulse(amplitude: float, duration: float, dt: float = DEFAULT_DT, phase: float = 0.0) -> Pulse:
    t = _grid(duration, dt)
    return Pulse(t, np.full_like(t, amplitude), np.full_like(t, phase), delta=np.zeros_like(t))


@dataclass(frozen=True)
class SweepSpec:
    delta_max: float
    duration: float
    amplitude: float

    def __post_init__(self):
        if self.delta_max <= 0 or self.duration <= 0:
            raise ValueError("delta_max and duration must be positive")


@dataclass(frozen=True)
class MultiSweepSpec:
    delta_max: float
    n_osc: int
    tau: float
    amplitude: float

    def __post_init__(self):
        if self.n_osc < 1 or self.tau <= 0 or self.delta_max <= 0:
            raise ValueError("need n_osc >= 1, tau > 0, delta_max > 0")

    @property
    def duration(self) -> float:
        return self.n_osc * self.tau / 2.0


def linear_sweep(spec: SweepSpec, dt: float = DEFAULT_DT) -> Pulse:
    t = _grid(spec.duration, dt)
    delta = spec.delta_max * (2.0 * t / spec.duration - 1.0)
    return _from_detuning(t, spec.amplitude, delta)


def sinusoidal_sweep(spec: MultiSweepSpec, dt: float = DEFAULT_DT) -> Pulse:
    """Detuning ``-delta_max * cos(2 pi t / tau)`` over ``n_osc`` half periods."""
    t = _grid(spec.duration, dt)
    delta = -spec.delta_max * np.cos(TWO_PI * t / spec.tau)
    return _from_detuning(t, spec.amplitude, delta)


def fitted_optimal(
    delta_max: float,
    segment: float,
    poly_order: int = 3,
    slowdown_frac: float = 0.25,
    n_segments: int = 4,
    amplitude: float = TWO_PI * 5.0,
    dt: float = DEFAULT_DT,
) -> Pulse:
    """Mirrored odd-polynomial sweeps that slow down around resonance.

    Within a segment the normalized time ``x`` runs over [-1, 1] and the
    detuning is ``delta_max * (f x + (1 - f) sign(x) |x|**p)``: the slope at
    the zero crossing is ``f`` times the linear-sweep slope while the
    endpoints stay at ``+-delta_max``. Odd-numbered segments run backwards.
    """
    if not (0 < slowdown_frac <= 1):
        raise ValueError("slowdown_frac must lie in (0, 1]")
    if poly_order < 1 or poly_order % 2 == 0:
        raise ValueError("poly_order must be odd")
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    t = _grid(segment * n_segments, dt)
    k = np.minimum((t // segment).astype(int), n_segments - 1)
    x = 2.0 * (t - k * segment) / segment - 1.0
    shape = slowdown_frac * x + (1.0 - slowdown_frac) * np.sign(x) * np.abs(x) ** poly_order
    direction = np.where(k % 2 == 0, 1.0, -1.0)
    return _from_detuning(t, amplitude, delta_max * direction * shape)


Channel = Literal["amplitude", "phase"]


def bandwidth_cap(dt: float) -> float:
    """Highest admissible modulation frequency: 25 samples per period."""
    return TWO_PI / (25.0 * dt)


def fourier_pulse(
    base: Pulse,
    coeffs: Iterable[tuple[float, float, float]],
    target: Channel = "phase",
    omega_cap: float | None = None,
) -> Pulse:
    """Superimpose ``sum A sin(w t) + B cos(w t)`` on one control channel."""
    coeffs = list(coeffs)
    if not coeffs:
        return base
    cap = bandwidth_cap(base.dt) if omega_cap is None else omega_cap
    t = base.t
    add = np.zeros_like(t)
    dadd = np.zeros_like(t)
    for A, B, w in coeffs:
        if not (0 <= w <= cap):
            raise ValueError(f"basis frequency {w} outside [0, {cap}]")
        s, c = np.sin(w * t), np.cos(w * t)
        add += A * s + B * c
        dadd += w * (A * c - B * s)
    if target == "phase":
        return Pulse(t, base.omega_ext, base.phi_ext + add, delta=base.delta + dadd, omega_max=base.omega_max)
    if target == "amplitude":
        amp = np.clip(base.omega_ext + add, 0.0, base.omega_max)
        return Pulse(t, amp, base.phi_ext, delta=base.delta, omega_max=base.omega_max)
    raise ValueError(f"unknown channel {target!r}")


def recombine(amp_from: Pulse, phase_from: Pulse) -> Pulse:
    """Amplitude of the first pulse with the phase of the second."""
    if not amp_from.same_grid(phase_from):
        raise ValueError("pulses are defined on different grids")
    return Pulse(
        amp_from.t, amp_from.omega_ext, phase_from.phi_ext,
        delta=phase_from.delta, omega_max=amp_from.omega_max,
    )


def precompensate(pulse: Pulse, cav: "CavityParams") -> Pulse:
    """Invert the quasi-static cavity magnitude response sample by sample.

    A drive rotating at ``delta(t)`` sits ``delta_cs - delta(t)`` away from the
    cavity, where the steady-state transmission is
    ``gamma / |gamma + i (delta_cs - delta)|``.
    """
    g = cav.gamma_cav
    if g <= 0:
        raise ValueError("gamma_cav must be positive")
    gain = np.abs(g + 1j * (cav.delta_cs - pulse.delta)) / g
    amp = np.minimum(pulse.omega_ext * gain, pulse.omega_max)
    return Pulse(pulse.t, amp, pulse.phi_ext, delta=pulse.delta, omega_max=pulse.omega_max)


# ------------------------------------------------------------------ CSV I/O

PULSE_COLUMNS = ("t_us", "omega_ext_MHz", "phi_rad", "delta_MHz")


def _g12(x: float) -> str:
    return f"{x:.12g}"


def pulse_to_csv(pulse: Pulse) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PULSE_COLUMNS)
    for row in zip(pulse.t, pulse.omega_ext / TWO_PI, pulse.phi_ext, pulse.delta / TWO_PI):
        w.writerow([_g12(v) for v in row])
    return buf.getvalue()


def pulse_from_csv(text: str, omega_max: float = OMEGA_MAX) -> Pulse:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != PULSE_COLUMNS:
        raise ValueError(f"pulse CSV header must be {','.join(PULSE_COLUMNS)}")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return Pulse(
        data[:, 0], data[:, 1] * TWO_PI, data[:, 2],
        delta=data[:, 3] * TWO_PI, omega_max=omega_max,
    )


def write_pulse(pulse: Pulse, path: str | Path) -> None:
    Path(path).write_text(pulse_to_csv(pulse))


def read_pulse(path: str | Path, omega_max: float = OMEGA_MAX) -> Pulse:
    return pulse_from_csv(Path(path).read_text(), omega_max=omega_max)
