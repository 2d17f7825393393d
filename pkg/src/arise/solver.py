"""Lindblad propagation of the electron(+shelf) x nuclei density matrix.

Two integrators share one drive representation:

* ``method="rk"`` integrates the full master equation with an adaptive
  explicit Runge-Kutta scheme (DOP853 from scipy).
* ``method="expm"`` is a batched, fixed-step exponential integrator: exact
  propagators of the instantaneous Hamiltonian (midpoint or fourth-order
  commutator-free Magnus) Strang-split with the exactly solvable dissipator.
  Every sub-step is completely positive and trace preserving. This is the
  workhorse for ensemble evaluation, where hundreds of instances share one
  drive.

Both work in the frame co-rotating with the external pulse phase,
``W = exp(-i theta S_z)`` with ``theta = -phi_ext``. The intracavity field
seen there, ``c = Omega_int exp(i phi_ext)``, and the extra detuning
``phi_ext'`` vary slowly, which keeps interpolation kinks small. States
handed in and out are always in the lab (drive carrier) frame.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .cavity import CavityParams, FieldTrace, filter_pulse
from .pulses import Pulse
from .spinsys import (
    SystemParams,
    build_lindblad_ops,
    nuclear_z_signs,
    spin_operators,
    static_hamiltonian,
)

TRACE_TOL = 1e-9
HERMITIAN_TOL = 1e-10
POSITIVITY_TOL = 1e-8
# fixed step of the exponential integrator, us
DEFAULT_STEP = 4e-3


class SolverError(RuntimeError):
    """Integration failed or produced a state violating the density-matrix invariants."""


# ------------------------------------------------------------------ states


@dataclass(frozen=True, eq=False)
class DensityState:
    rho: np.ndarray
    t: float = 0.0

    @property
    def n_nuc(self) -> int:
        return int(round(math.log2(self.rho.shape[0] // 3)))

    def violations(self) -> dict[str, float]:
        rho = self.rho
        herm = float(np.max(np.abs(rho - rho.conj().T)))
        tr = abs(np.trace(rho).real - 1.0) + abs(np.trace(rho).imag)
        mineig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0])
        return {"hermiticity": herm, "trace": tr, "min_eigenvalue": mineig}

    def check(self) -> None:
        v = self.violations()
        problems = []
        if v["hermiticity"] > HERMITIAN_TOL:
            problems.append(f"non-Hermitian by {v['hermiticity']:.3g}")
        if v["trace"] > TRACE_TOL:
            problems.append(f"trace off by {v['trace']:.3g}")
        if v["min_eigenvalue"] < -POSITIVITY_TOL:
            problems.append(f"negative eigenvalue {v['min_eigenvalue']:.3g}")
        if problems:
            raise SolverError(f"invalid density matrix at t={self.t}: " + "; ".join(problems))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.rho, self.rho)))


def nuclear_state(params: SystemParams) -> np.ndarray:
    """Product state of the nuclei with the configured initial polarizations."""
    pols = params.nuclear_init or (0.0,) * params.n_nuc
    out = np.ones((1, 1), dtype=complex)
    for p in pols:
        out = np.kron(out, np.diag([(1 + p) / 2, (1 - p) / 2]).astype(complex))
    return out


def initial_state(params: SystemParams) -> DensityState:
    """Electron populations (p0, p1, ps) times the nuclear product state."""
    return DensityState(np.kron(np.diag(params.electron_init).astype(complex), nuclear_state(params)), 0.0)


@dataclass(frozen=True, eq=False)
class PolarizationTrace:
    t: np.ndarray
    p_nuc: np.ndarray  # (n_t, n_nuc), <2 I_z^i>
    pop_electron: np.ndarray  # (n_t, 3): p0, p1, p_shelf
    states: list[DensityState] | None = None  # lab-frame states at each sample, when kept

    @property
    def p_mean(self) -> np.ndarray:
        return self.p_nuc.mean(axis=1)

    def to_csv(self) -> str:
        n = self.p_nuc.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "p_mean"] + [f"p_nuc_{i + 1}" for i in range(n)] + ["pop0", "pop1", "pop_shelf"])
        for k in range(self.t.size):
            row = [self.t[k], self.p_mean[k], *self.p_nuc[k], *self.pop_electron[k]]
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PolarizationTrace":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        header = rows[0]
        n = sum(h.startswith("p_nuc_") for h in header)
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(data[:, 0], data[:, 2 : 2 + n], data[:, 2 + n : 5 + n])


# ------------------------------------------------------------------- drive


@dataclass(frozen=True, eq=False)
class Drive:
    """Rotating-frame drive on a uniform grid, arrays shaped (B or 1, n).

    ``c`` is the intracavity field in the co-rotating frame, ``det`` the
    frame detuning ``-theta'`` added to ``delta_es``, ``theta`` the frame angle.
    """

    t0: float
    dt: float
    c: np.ndarray
    det: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        for name in ("c", "det", "theta"):
            a = np.atleast_2d(np.asarray(getattr(self, name)))
            object.__setattr__(self, name, a)

    @property
    def n(self) -> int:
        return self.c.shape[1]

    @property
    def duration(self) -> float:
        return self.dt * (self.n - 1)

    def _weights(self, times):
        x = (np.asarray(times, dtype=float) - self.t0) / self.dt
        i = np.clip(np.floor(x).astype(int), 0, self.n - 2)
        w = np.clip(x - i, 0.0, 1.0)
        return i, w

    def sample(self, times):
        i, w = self._weights(times)

        def lerp(a):
            return a[:, i] * (1 - w) + a[:, i + 1] * w

        return lerp(self.c), lerp(self.det)

    def theta_at(self, times):
        i, w = self._weights(times)
        return self.theta[:, i] * (1 - w) + self.theta[:, i + 1] * w


def make_drive(pulse: Pulse, cav: CavityParams, field_dt: float = 1e-3) -> Drive:
    """Filter the pulse through the cavity and express it in the pulse-phase frame."""
    field = filter_pulse(pulse, cav, dt_out=min(pulse.dt, field_dt))
    phi = np.interp(field.t, pulse.t, pulse.phi_ext)
    delta = np.interp(field.t, pulse.t, pulse.delta)
    return Drive(field.t[0], field.dt, field.omega_int * np.exp(1j * phi), delta, -phi)


def drive_from_field(field: FieldTrace) -> Drive:
    """Use a given intracavity field directly (cavity bypassed, lab frame)."""
    z = np.zeros(field.t.size)
    return Drive(field.t[0], field.dt, field.omega_int, z, z)


def hh_window(field: FieldTrace, omega_L: float) -> np.ndarray:
    """Hartmann-Hahn window half-width ``sqrt(omega_L**2 - |Omega_int|**2)``.

    Returns an array of half-widths; samples where the drive exceeds the
    Larmor frequency (window closed) are NaN. The window edges are ``+-`` it.
    """
    a2 = omega_L**2 - np.abs(field.omega_int) ** 2
    out = np.full(a2.shape, np.nan)
    ok = a2 >= 0
    out[ok] = np.sqrt(a2[ok])
    return out


# ---------------------------------------------------- exponential integrator


_TAYLOR = [1.0 / math.factorial(k) for k in range(17)]


def _expm_batch(X: np.ndarray, norm: float | None = None) -> np.ndarray:
    """``exp(X)`` for a stack ``(M, d, d)`` of small matrices.

    Degree-16 Taylor polynomial evaluated Paterson-Stockmeyer style (six
    products) after scaling to unit 1-norm, followed by squaring. The
    truncation error is below 3e-15 per call. ``norm`` may pass an upper
    bound of the 1-norm to skip computing it.
    """
    if norm is None:
        norm = float(np.max(np.sum(np.abs(X), axis=-2)))
    s = max(0, int(math.ceil(math.log2(norm)))) if norm > 1.0 else 0
    M, d, _ = X.shape
    Z = np.empty((3, M, d, d), dtype=complex)
    np.multiply(X, 2.0**-s, out=Z[0])
    np.matmul(Z[0], Z[0], out=Z[1])
    np.matmul(Z[1], Z[0], out=Z[2])
    Y4 = Z[1] @ Z[1]
    # blocks[j] = sum_i c[4j+i] Y^i, i = 0..3, as one BLAS call
    blocks = np.tensordot(_TAYLOR_BLOCKS[:, 1:], Z, axes=(1, 0))
    idx = np.arange(d)
    blocks[:, :, idx, idx] += _TAYLOR_BLOCKS[:, :1, None]
    P = blocks[3]
    P += _TAYLOR[16] * Y4
    tmp = np.empty_like(P)
    for j in (2, 1, 0):
        np.matmul(Y4, P, out=tmp)
        tmp += blocks[j]
        P, tmp = tmp, P
    for _ in range(s):
        np.matmul(P, P, out=tmp)
        P, tmp = tmp, P
    return P


_TAYLOR_BLOCKS = np.array(_TAYLOR[:16]).reshape(4, 4)


@dataclass(frozen=True, eq=False)
class BatchResult:
    t: np.ndarray
    p_nuc: np.ndarray  # (B, n_t, n_nuc), last shot
    pop_electron: np.ndarray  # (B, n_t, 3), last shot
    shot_p_mean: np.ndarray  # (B, n_shots): mean polarization after each shot
    rho_active: np.ndarray  # (B, 2n, 2n), lab frame, end of last shot
    rho_shelf: np.ndarray  # (B, n, n)

    def trace(self, b: int = 0) -> PolarizationTrace:
        return PolarizationTrace(self.t, self.p_nuc[b], self.pop_electron[b])

    def final_state(self, b: int = 0) -> DensityState:
        da = self.rho_active.shape[-1]
        ds = self.rho_shelf.shape[-1]
        rho = np.zeros((da + ds, da + ds), dtype=complex)
        rho[:da, :da] = self.rho_active[b]
        rho[da:, da:] = self.rho_shelf[b]
        return DensityState(rho, float(self.t[-1]))


def _split_state(rho: np.ndarray, n: int):
    d = 2 * n
    if np.max(np.abs(rho[..., :d, d:]), initial=0.0) > 1e-12:
        raise ValueError("coherences between the shelf and the driven levels are not supported")
    return rho[..., :d, :d].copy(), rho[..., d:, d:].copy()


def _frame_phase(theta: np.ndarray, n: int) -> np.ndarray:
    """Elementwise factor turning a lab-frame active block into the rotating frame."""
    m = np.repeat([0.5, -0.5], n)
    dm = m[:, None] - m[None, :]
    return np.exp(1j * np.asarray(theta)[..., None, None] * dm)


def evolve_batch(
    params_list: Sequence[SystemParams],
    drive: Drive,
    duration: float | None = None,
    n_out: int = 201,
    *,
    n_shots: int = 1,
    step: float = DEFAULT_STEP,
    substeps: int | None = None,
    order: int = 4,
    rho0: np.ndarray | None = None,
    chunk: int = 4,
) -> BatchResult:
    """Propagate a batch of instances sharing one drive (or one drive per instance).

    Parameters differ per instance (couplings, ``delta_es``) but must share
    the nuclear count, dissipation rates, Larmor frequency and electron
    initialization. ``rho0`` optionally gives lab-frame initial states
    ``(B, D, D)`` for the first shot. Each further shot traces out the
    electron, keeps the full nuclear state and re-attaches a fresh electron.

    ``order=2`` uses the exponential midpoint rule, ``order=4`` the
    two-node Gauss-Legendre Magnus step with its commutator correction.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    params_list = list(params_list)
    B = len(params_list)
    p0 = params_list[0]
    N = p0.n_nuc
    for p in params_list[1:]:
        if (p.n_nuc, p.rates, p.omega_L, p.electron_init) != (N, p0.rates, p0.omega_L, p0.electron_init):
            raise ValueError("batched instances must share n_nuc, rates, omega_L and electron_init")
    if drive.c.shape[0] not in (1, B):
        raise ValueError("drive batch dimension must be 1 or match the instances")
    n = 2**N
    d = 2 * n
    T = drive.duration if duration is None else float(duration)
    if n_out < 2:
        raise ValueError("n_out must be >= 2")
    k = substeps or max(1, int(math.ceil(T / (n_out - 1) / step)))
    n_steps = (n_out - 1) * k
    h = T / n_steps

    S, _ = spin_operators(N)
    Sx, Sy, Sz = (S[a][:d, :d] for a in "xyz")
    Hs = np.stack([static_hamiltonian(p)[:d, :d] for p in params_list])
    r = p0.rates

    # dissipator: exact elementwise decay of the driven block plus shelf feed
    m = np.repeat([0.5, -0.5], n)
    loss = np.repeat([r.gamma_loss0, r.gamma_loss1], n)
    rate = 0.5 * (loss[:, None] + loss[None, :]) + 0.25 * r.gamma_el * (m[:, None] != m[None, :])

    def dissipator(tau):
        return np.exp(-rate * tau), -math.expm1(-r.gamma_loss0 * tau), -math.expm1(-r.gamma_loss1 * tau)

    d_half, d_full = dissipator(h / 2), dissipator(h)
    zeeman = p0.omega_L * 0.5 * nuclear_z_signs(N).sum(axis=0)
    shelf_phase = np.exp(-1j * h * (zeeman[:, None] - zeeman[None, :]))
    zsig = nuclear_z_signs(N)

    if order == 2:
        offsets = np.array([0.5, 0.5])
        kappa = 0.0
    else:
        off = math.sqrt(3) / 6
        offsets = np.array([0.5 - off, 0.5 + off])
        kappa = math.sqrt(3) / 12 * h * h
    starts = h * np.arange(n_steps)
    c_nodes, det_nodes = drive.sample((starts[:, None] + h * offsets[None, :]).ravel())
    c_nodes = np.broadcast_to(c_nodes.reshape(-1, n_steps, 2), (B, n_steps, 2))
    det_nodes = np.broadcast_to(det_nodes.reshape(-1, n_steps, 2), (B, n_steps, 2))

    # the static part is block diagonal in the electron index, the drive acts
    # on the electron alone: H = blockdiag(P, Q) + a . sigma / 2 (x) 1
    Pb, Qb = Hs[:, :n, :n], Hs[:, n:, n:]
    G = Qb - Pb
    hs_norm = float(np.max(np.sum(np.abs(Hs), axis=-2)))
    g_norm = float(np.max(np.sum(np.abs(G), axis=-2)))
    eye_idx = np.arange(n)

    def propagators(j0, j1):
        """Step propagators for steps j0..j1-1, shape (B, j1-j0, d, d).

        Fourth-order Magnus exponent ``-i h/2 (H1 + H2) - kappa [H2, H1]``
        with ``[H2, H1] = [W, H_static] + [V2, V1]``, ``W = V2 - V1``.
        """
        K = j1 - j0
        c1, c2 = c_nodes[:, j0:j1, 0], c_nodes[:, j0:j1, 1]
        d1, d2 = det_nodes[:, j0:j1, 0], det_nodes[:, j0:j1, 1]
        cm, dm = 0.5 * (c1 + c2), 0.5 * (d1 + d2)
        wc = c2 - c1
        # a_q = (Re c, Im c, d); cross = a2 x a1 gives [V2, V1] = (i/2) cross . sigma
        x = c2.imag * d1 - d2 * c1.imag
        y = d2 * c1.real - c2.real * d1
        z = c2.real * c1.imag - c2.imag * c1.real
        X = np.empty((B, K, d, d), dtype=complex)
        X[:, :, :n, :n] = (-1j * h) * Pb[:, None]
        X[:, :, n:, n:] = (-1j * h) * Qb[:, None]
        if kappa:
            X[:, :, :n, n:] = (-0.5 * kappa * np.conj(wc))[..., None, None] * G[:, None]
            X[:, :, n:, :n] = (0.5 * kappa * wc)[..., None, None] * G[:, None]
        else:
            X[:, :, :n, n:] = 0.0
            X[:, :, n:, :n] = 0.0
        s00 = -0.5j * h * dm - 0.5j * kappa * z
        s01 = -0.5j * h * np.conj(cm) - 0.5j * kappa * (x - 1j * y)
        s10 = -0.5j * h * cm - 0.5j * kappa * (x + 1j * y)
        X[:, :, eye_idx, eye_idx] += s00[..., None]
        X[:, :, n + eye_idx, n + eye_idx] -= s00[..., None]
        X[:, :, eye_idx, n + eye_idx] += s01[..., None]
        X[:, :, n + eye_idx, eye_idx] += s10[..., None]
        bound = h * hs_norm + float(np.max(np.abs(s00) + np.abs(s01))) + 0.5 * kappa * float(np.max(np.abs(wc))) * g_norm
        return _expm_batch(X.reshape(-1, d, d), bound).reshape(B, K, d, d)

    def dissipate(ra, rs, dis):
        decay, f0, f1 = dis
        rs = rs + f0 * ra[:, :n, :n] + f1 * ra[:, n:, n:]
        return ra * decay, rs

    def observe(ra, rs):
        da = ra.diagonal(axis1=1, axis2=2).real.reshape(B, 2, n)
        ds = rs.diagonal(axis1=1, axis2=2).real
        pops = np.stack([da[:, 0].sum(1), da[:, 1].sum(1), ds.sum(1)], axis=1)
        pn = (da[:, 0] + da[:, 1] + ds) @ zsig.T
        return pops, pn

    if rho0 is None:
        rho_start = np.broadcast_to(initial_state(p0).rho, (B, 3 * n, 3 * n))
    else:
        rho_start = np.asarray(rho0, dtype=complex)
        if rho_start.shape != (B, 3 * n, 3 * n):
            raise ValueError("rho0 must have shape (B, D, D)")
    ra, rs = _split_state(rho_start, n)
    theta0 = drive.theta_at([0.0])[:, 0]
    ra = ra * _frame_phase(theta0, n)
    pe = np.asarray(p0.electron_init)

    # propagators do not depend on the state: reuse them across shots
    cache: dict[int, np.ndarray] = {}
    reuse = n_shots > 1 and B * n_steps * d * d * 16 <= 512 * 2**20

    def chunk_props(j0):
        if j0 in cache:
            return cache[j0]
        U = propagators(j0, min(j0 + chunk, n_steps))
        if reuse:
            cache[j0] = U
        return U

    t_out = h * k * np.arange(n_out)
    shot_p = np.empty((B, n_shots))
    for shot in range(n_shots):
        if shot > 0:
            nuc = ra[:, :n, :n] + ra[:, n:, n:] + rs
            ra = np.zeros((B, d, d), dtype=complex)
            ra[:, :n, :n] = pe[0] * nuc
            ra[:, n:, n:] = pe[1] * nuc
            rs = pe[2] * nuc
        pops = np.empty((B, n_out, 3))
        pnuc = np.empty((B, n_out, N))
        pops[:, 0], pnuc[:, 0] = observe(ra, rs)
        ra, rs = dissipate(ra, rs, d_half)
        for j0 in range(0, n_steps, chunk):
            U = chunk_props(j0)
            Uh = U.conj().transpose(0, 1, 3, 2)
            for q in range(U.shape[1]):
                j = j0 + q
                ra = U[:, q] @ ra @ Uh[:, q]
                rs = rs * shelf_phase
                if (j + 1) % k == 0:
                    ra, rs = dissipate(ra, rs, d_half)
                    i = (j + 1) // k
                    pops[:, i], pnuc[:, i] = observe(ra, rs)
                    if j + 1 < n_steps:
                        ra, rs = dissipate(ra, rs, d_half)
                else:
                    ra, rs = dissipate(ra, rs, d_full)
        shot_p[:, shot] = pnuc[:, -1].mean(axis=1)

    thetaT = drive.theta_at([T])[:, 0]
    ra_lab = ra * np.conj(_frame_phase(thetaT, n))
    return BatchResult(t_out, pnuc, pops, shot_p, ra_lab, rs)


# ------------------------------------------------------------------ RK path


def _rk_propagate(state: DensityState, drive: Drive, params: SystemParams, T: float,
                  n_out: int, rtol: float, atol: float):
    N = params.n_nuc
    n = 2**N
    D = 3 * n
    S, _ = spin_operators(N)
    Hs = static_hamiltonian(params)
    r = params.rates
    m = np.diag(S["z"]).real
    # the jump operators enter as elementwise or block terms:
    # R1 rho R1^+ = (g_el/2) m_a m_b rho_ab, R2/R3 feed the shelf block
    K = sum(rj.conj().T @ rj for rj in build_lindblad_ops(r, N))
    dephase = 0.5 * r.gamma_el * np.outer(m, m)
    A0 = -1j * Hs - 0.5 * K
    Ax, Ay, Az = (-1j * S[a] for a in "xyz")
    c_re, c_im, det = drive.c[0].real.copy(), drive.c[0].imag.copy(), drive.det[0].copy()
    t0, dt, last = drive.t0, drive.dt, drive.n - 2
    g0, g1 = r.gamma_loss0, r.gamma_loss1

    def frame(theta):
        return np.exp(1j * theta * (m[:, None] - m[None, :]))

    def rhs(t, y):
        x = (t - t0) / dt
        i = min(max(int(x), 0), last)
        w = min(max(x - i, 0.0), 1.0)
        A = (
            A0
            + ((1 - w) * c_re[i] + w * c_re[i + 1]) * Ax
            + ((1 - w) * c_im[i] + w * c_im[i + 1]) * Ay
            + ((1 - w) * det[i] + w * det[i + 1]) * Az
        )
        rho = y.reshape(D, D)
        X = A @ rho
        out = X + X.conj().T + dephase * rho
        out[2 * n :, 2 * n :] += g0 * rho[:n, :n] + g1 * rho[n : 2 * n, n : 2 * n]
        return out.ravel()

    t_eval = np.linspace(0.0, T, n_out)
    y0 = (state.rho * frame(drive.theta_at([0.0])[0, 0])).ravel()
    sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        t_fail = sol.t[-1] if sol.t.size else 0.0
        raise SolverError(f"integration failed near t={t_fail:.6g} us: {sol.message}")
    rhos = sol.y.T.reshape(-1, D, D)
    diag = np.real(np.diagonal(rhos, axis1=1, axis2=2)).reshape(-1, 3, 2**N)
    pops = diag.sum(axis=2)
    pn = diag.sum(axis=1) @ nuclear_z_signs(N).T
    theta = drive.theta_at(t_eval)[0]
    lab = rhos * np.exp(-1j * theta[:, None, None] * (m[:, None] - m[None, :]))
    states = [DensityState(r, state.t + t) for r, t in zip(lab, t_eval)]
    return PolarizationTrace(t_eval, pn, pops, states), states[-1]


def propagate(
    state: DensityState,
    pulse: Pulse | None,
    params: SystemParams,
    cav: CavityParams | None = None,
    n_out: int = 201,
    *,
    field: FieldTrace | None = None,
    method: str = "rk",
    rtol: float = 1e-8,
    atol: float = 1e-10,
    step: float = DEFAULT_STEP,
    order: int = 4,
    check: bool = True,
) -> tuple[PolarizationTrace, DensityState]:
    """Integrate the master equation over the pulse.

    The drive is the cavity-filtered ``pulse`` unless ``field`` supplies the
    intracavity field directly. Returns ``n_out`` equally spaced samples of
    the observables and the final state.
    """
    if state.rho.shape[0] != params.dim:
        raise ValueError("state dimension does not match params")
    if field is not None:
        drive = drive_from_field(field)
    elif pulse is not None:
        drive = make_drive(pulse, cav or CavityParams())
    else:
        raise ValueError("need a pulse or a field")
    T = drive.duration
    if method == "rk":
        trace, final = _rk_propagate(state, drive, params, T, n_out, rtol, atol)
    elif method == "expm":
        res = evolve_batch([params], drive, T, n_out, step=step, order=order, rho0=state.rho[None])
        trace = res.trace(0)
        final = res.final_state(0)
        final = DensityState(final.rho, state.t + T)
    else:
        raise ValueError(f"unknown method {method!r}")
    if check:
        for st in trace.states or [final]:
            st.check()
    return trace, final


def repeat_shots(
    pulse: Pulse,
    params: SystemParams,
    cav: CavityParams | None = None,
    n_shots: int = 1,
    *,
    method: str = "expm",
    **kwargs,
) -> np.ndarray:
    """Mean nuclear polarization after each of ``n_shots`` pulse applications.

    Between shots the electron is traced out and re-initialized; nuclear
    correlations are kept.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    state = initial_state(params)
    out = np.empty(n_shots)
    n = 2**params.n_nuc
    e0 = np.diag(params.electron_init).astype(complex)
    for s in range(n_shots):
        if s > 0:
            rho = state.rho.reshape(3, n, 3, n)
            nuc = np.einsum("aiaj->ij", rho)
            state = DensityState(np.kron(e0, nuc), state.t)
        trace, state = propagate(state, pulse, params, cav, n_out=2, method=method, **kwargs)
        out[s] = trace.p_mean[-1]
    return out


def write_trace(trace: PolarizationTrace, path: str | Path) -> None:
    Path(path).write_text(trace.to_csv())


def plateau_ratio(trace: PolarizationTrace, pulse: Pulse, params: SystemParams,
                  cav: CavityParams | None = None) -> float:
    """Mean ``|dp/dt|`` outside the Hartmann-Hahn window over the mean inside it.

    A sample is inside when the electron offset ``delta(t) + delta_es`` lies
    within ``+-sqrt(omega_L**2 - |Omega_int|**2)``.
    """
    field = filter_pulse(pulse, cav or CavityParams())
    w = np.interp(trace.t, field.t, np.abs(field.omega_int))
    half = hh_window(FieldTrace(trace.t, w.astype(complex)), params.omega_L)
    offset = np.interp(trace.t, pulse.t, pulse.delta) + params.delta_es
    inside = np.abs(offset) <= np.nan_to_num(half, nan=-1.0)
    rate = np.abs(np.gradient(trace.p_mean, trace.t))
    if inside.all() or not inside.any():
        raise ValueError("the sweep never leaves (or never enters) the Hartmann-Hahn window")
    return float(rate[~inside].mean() / rate[inside].mean())
