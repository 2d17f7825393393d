"""Electron(+shelf) x nuclear spin model.

Conventions
-----------
Time is in microseconds and every frequency is stored as an angular
frequency in rad/us. Values entering or leaving the package through files
are linear MHz; use :func:`mhz` / :func:`to_mhz` at the boundary.

The electron lives in a three-dimensional space ordered ``(|0>, |1>, |s>)``.
``S_k`` act as ``sigma_k / 2`` on the ``{|0>, |1>}`` pair and vanish on the
shelf ``|s>``. The electron is the slowest tensor index, so the first
``2 * 2**n_nuc`` basis states form the driven ("active") block and the last
``2**n_nuc`` states the shelf block.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def mhz(value):
    """Linear MHz -> angular rad/us."""
    return TWO_PI * np.asarray(value, dtype=float) if np.ndim(value) else TWO_PI * float(value)


def to_mhz(value):
    """Angular rad/us -> linear MHz."""
    return np.asarray(value) / TWO_PI if np.ndim(value) else float(value) / TWO_PI


# Electron gyromagnetic ratio, rad/us per mT (negative: electron charge).
GAMMA_ELECTRON = -TWO_PI * 28.024951
# Proton gyromagnetic ratio, rad/us per mT.
GAMMA_PROTON = TWO_PI * 0.042577478


@dataclass(frozen=True)
class ZeroFieldParams:
    """Zero-field splitting and Zeeman parameters of the triplet.

    ``E`` is carried for completeness only: the propagated model is the
    two-level reduction, so it never enters the dynamics.
    """

    D: float = TWO_PI * 1395.0
    E: float = TWO_PI * -53.0
    gamma_S: float = GAMMA_ELECTRON
    B0: float = 230.0

    def __post_init__(self):
        for name in ("D", "E", "gamma_S", "B0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.D < 0 or self.B0 < 0:
            raise ValueError("D and B0 must be non-negative")

    @property
    def omega_0S(self) -> float:
        return -self.gamma_S * self.B0


@dataclass(frozen=True)
class HyperfineTensor:
    """Secular hyperfine row (A_zx, A_zy, A_zz) in rad/us."""

    a_zx: float
    a_zy: float
    a_zz: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("hyperfine components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.a_zx, self.a_zy, self.a_zz], dtype=float)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class DissipationRates:
    """Electron dephasing and triplet -> shelf loss rates, 1/us."""

    gamma_el: float = 1.0 / 10.0
    gamma_loss0: float = 1.0 / 80.0
    gamma_loss1: float = 1.0 / 180.0

    def __post_init__(self):
        for name in ("gamma_el", "gamma_loss0", "gamma_loss1"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite non-negative rate")


DEFAULT_COUPLINGS = (
    HyperfineTensor(TWO_PI * 0.9, TWO_PI * 0.3, TWO_PI * -1.2),
    HyperfineTensor(TWO_PI * -0.6, TWO_PI * 0.5, TWO_PI * 0.8),
    HyperfineTensor(TWO_PI * 0.4, TWO_PI * -0.4, TWO_PI * 0.6),
)


@dataclass(frozen=True)
class SystemParams:
    zfs: ZeroFieldParams = field(default_factory=ZeroFieldParams)
    omega_L: float = TWO_PI * 9.2
    couplings: tuple[HyperfineTensor, ...] = DEFAULT_COUPLINGS
    delta_es: float = 0.0
    rates: DissipationRates = field(default_factory=DissipationRates)
    electron_init: tuple[float, float, float] = (1.0, 0.0, 0.0)
    # per-nucleus <2 I_z> at t=0; empty means unpolarized
    nuclear_init: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(self.couplings))
        object.__setattr__(self, "electron_init", tuple(float(p) for p in self.electron_init))
        object.__setattr__(self, "nuclear_init", tuple(float(p) for p in self.nuclear_init))
        if not (math.isfinite(self.omega_L) and self.omega_L >= 0):
            raise ValueError("omega_L must be finite and non-negative")
        if not math.isfinite(self.delta_es):
            raise ValueError("delta_es must be finite")
        p = self.electron_init
        if len(p) != 3 or min(p) < 0 or abs(sum(p) - 1.0) > 1e-12:
            raise ValueError("electron_init must be three non-negative populations summing to 1")
        if self.nuclear_init and len(self.nuclear_init) != len(self.couplings):
            raise ValueError("nuclear_init needs one entry per nucleus")
        if any(abs(x) > 1 for x in self.nuclear_init):
            raise ValueError("nuclear polarizations must lie in [-1, 1]")

    @property
    def n_nuc(self) -> int:
        return len(self.couplings)

    @property
    def dim(self) -> int:
        return 3 * 2**self.n_nuc

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


def resonance_frequency(zfs: ZeroFieldParams) -> float:
    """Carrier frequency resonant with the driven triplet transition, D - omega_0S."""
    return zfs.D - zfs.omega_0S


def _check_n_nuc(n_nuc: int) -> None:
    if n_nuc not in (1, 2, 3):
        raise ValueError(f"number of nuclei must be 1, 2 or 3, got {n_nuc}")


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@lru_cache(maxsize=None)
def spin_operators(n_nuc: int):
    """Return ``(S, I)`` on the full space.

    ``S`` maps ``'x'|'y'|'z'`` to electron operators, ``I`` is a list (one per
    nucleus) of such dicts. Arrays are cached: treat them as read-only.
    """
    _check_n_nuc(n_nuc)
    nd = 2**n_nuc
    S = {}
    for k, s in _PAULI.items():
        e = np.zeros((3, 3), dtype=complex)
        e[:2, :2] = 0.5 * s
        S[k] = np.kron(e, np.eye(nd))
        S[k].setflags(write=False)
    I = []
    for i in range(n_nuc):
        ops = {}
        for k, s in _PAULI.items():
            factors = [np.eye(2)] * n_nuc
            factors[i] = 0.5 * s
            nuc = factors[0]
            for f in factors[1:]:
                nuc = np.kron(nuc, f)
            ops[k] = np.kron(np.eye(3), nuc)
            ops[k].setflags(write=False)
        I.append(ops)
    return S, I


@lru_cache(maxsize=None)
def nuclear_z_signs(n_nuc: int) -> np.ndarray:
    """``(n_nuc, 2**n_nuc)`` array of eigenvalues of ``2 I_z^i`` on the nuclear basis."""
    nd = 2**n_nuc
    idx = np.arange(nd)
    out = np.empty((n_nuc, nd))
    for i in range(n_nuc):
        bit = (idx >> (n_nuc - 1 - i)) & 1
        out[i] = 1.0 - 2.0 * bit
    out.setflags(write=False)
    return out


def static_hamiltonian(params: SystemParams) -> np.ndarray:
    """Drive-free part: detuning, nuclear Zeeman and secular hyperfine terms."""
    _check_n_nuc(params.n_nuc)
    S, I = spin_operators(params.n_nuc)
    H = params.delta_es * S["z"]
    for i, A in enumerate(params.couplings):
        H = H + params.omega_L * I[i]["z"]
        H = H + S["z"] @ (A.a_zx * I[i]["x"] + A.a_zy * I[i]["y"] + A.a_zz * I[i]["z"])
    return H


def build_hamiltonian(params: SystemParams, omega_int: complex) -> np.ndarray:
    """Rotating-frame Hamiltonian (units of hbar) for intracavity field ``omega_int``."""
    omega_int = complex(omega_int)
    if not (math.isfinite(omega_int.real) and math.isfinite(omega_int.imag)):
        raise ValueError("omega_int must be finite")
    S, _ = spin_operators(params.n_nuc)
    return static_hamiltonian(params) + omega_int.real * S["x"] + omega_int.imag * S["y"]


def build_lindblad_ops(rates: DissipationRates, n_nuc: int = 3) -> list[np.ndarray]:
    """Jump operators ``[R1, R2, R3]``: dephasing and the two shelf losses."""
    _check_n_nuc(n_nuc)
    S, _ = spin_operators(n_nuc)
    nd = 2**n_nuc
    lower0 = np.zeros((3, 3), dtype=complex)
    lower0[2, 0] = 1.0
    lower1 = np.zeros((3, 3), dtype=complex)
    lower1[2, 1] = 1.0
    return [
        math.sqrt(rates.gamma_el / 2.0) * S["z"],
        math.sqrt(rates.gamma_loss0) * np.kron(lower0, np.eye(nd)),
        math.sqrt(rates.gamma_loss1) * np.kron(lower1, np.eye(nd)),
    ]


# ---------------------------------------------------------------- config I/O

_CONFIG_KEYS = (
    "D", "E", "gamma_S", "B0", "omega_L", "delta_es",
    "gamma_el", "gamma_loss0", "gamma_loss1",
    "electron_init", "couplings", "nuclear_init",
)

_UNITS = {
    "D": "MHz", "E": "MHz", "gamma_S": "MHz/mT", "B0": "mT",
    "omega_L": "MHz", "delta_es": "MHz",
    "gamma_el": "1/us", "gamma_loss0": "1/us", "gamma_loss1": "1/us",
    "electron_init": "populations p0, p1, ps",
    "couplings": "MHz; A_zx A_zy A_zz per nucleus, nuclei separated by ';'",
    "nuclear_init": "<2 I_z> per nucleus",
}


def _fmt(x: float) -> str:
    return repr(float(x))


def params_to_config(params: SystemParams) -> str:
    """Serialize to ``key = value`` lines (linear MHz, units in comments)."""
    z = params.zfs
    r = params.rates
    values = {
        "D": _fmt(to_mhz(z.D)),
        "E": _fmt(to_mhz(z.E)),
        "gamma_S": _fmt(to_mhz(z.gamma_S)),
        "B0": _fmt(z.B0),
        "omega_L": _fmt(to_mhz(params.omega_L)),
        "delta_es": _fmt(to_mhz(params.delta_es)),
        "gamma_el": _fmt(r.gamma_el),
        "gamma_loss0": _fmt(r.gamma_loss0),
        "gamma_loss1": _fmt(r.gamma_loss1),
        "electron_init": ", ".join(_fmt(p) for p in params.electron_init),
        "couplings": "; ".join(
            " ".join(_fmt(to_mhz(v)) for v in A.as_array()) for A in params.couplings
        ),
        "nuclear_init": ", ".join(_fmt(p) for p in params.nuclear_init),
    }
    lines = [f"{k} = {values[k]}  # {_UNITS[k]}" for k in _CONFIG_KEYS]
    return "\n".join(lines) + "\n"


def _floats(text: str, sep: str = ",") -> list[float]:
    return [float(x) for x in text.replace(sep, " ").split()]


def params_from_mapping(values: dict[str, str], base: SystemParams | None = None) -> SystemParams:
    """Apply string-valued config entries (linear MHz) to ``base``."""
    base = base or SystemParams()
    unknown = set(values) - set(_CONFIG_KEYS)
    if unknown:
        raise KeyError(f"unknown system parameter keys: {sorted(unknown)}")
    z = base.zfs
    r = base.rates
    zfs = ZeroFieldParams(
        D=mhz(float(values["D"])) if "D" in values else z.D,
        E=mhz(float(values["E"])) if "E" in values else z.E,
        gamma_S=mhz(float(values["gamma_S"])) if "gamma_S" in values else z.gamma_S,
        B0=float(values.get("B0", z.B0)),
    )
    rates = DissipationRates(
        gamma_el=float(values.get("gamma_el", r.gamma_el)),
        gamma_loss0=float(values.get("gamma_loss0", r.gamma_loss0)),
        gamma_loss1=float(values.get("gamma_loss1", r.gamma_loss1)),
    )
    couplings = base.couplings
    if "couplings" in values:
        couplings = []
        for chunk in values["couplings"].split(";"):
            comps = _floats(chunk)
            if len(comps) != 3:
                raise ValueError(f"coupling needs 3 components, got {chunk!r}")
            couplings.append(HyperfineTensor(*mhz(np.array(comps))))
    electron_init = base.electron_init
    if "electron_init" in values:
        electron_init = tuple(_floats(values["electron_init"]))
    nuclear_init = base.nuclear_init
    if "nuclear_init" in values:
        nuclear_init = tuple(_floats(values["nuclear_init"]))
    elif "couplings" in values and len(nuclear_init) != len(couplings):
        nuclear_init = ()
    return SystemParams(
        zfs=zfs,
        omega_L=mhz(float(values["omega_L"])) if "omega_L" in values else base.omega_L,
        couplings=tuple(couplings),
        delta_es=mhz(float(values["delta_es"])) if "delta_es" in values else base.delta_es,
        rates=rates,
        electron_init=electron_init,
        nuclear_init=nuclear_init,
    )


def read_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    cp.read_string("[root]\n" + text)
    return dict(cp["root"])


def params_from_config(text: str, base: SystemParams | None = None) -> SystemParams:
    return params_from_mapping(read_kv(text), base)


def couplings_from_mhz(rows: Sequence[Sequence[float]]) -> tuple[HyperfineTensor, ...]:
    return tuple(HyperfineTensor(*mhz(np.asarray(r, dtype=float))) for r in rows)
