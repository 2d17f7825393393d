"""Hyperfine coupling table, ensemble sampling and the ensemble figure of merit.

Each ensemble instance draws a few distinct nuclei from the most strongly
coupled part of a proton table plus a static electron detuning. All
instances share the drive, so they are propagated together with
:func:`arise.solver.evolve_batch`. Sampling uses one generator seeded from
``EnsembleSpec.seed`` for the whole ensemble: every pulse is evaluated on the
same instances (common random numbers), which makes the figure of merit a
deterministic function of the pulse.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .cavity import CavityParams
from .pulses import Pulse
from .solver import SolverError, evolve_batch, make_drive
from .spinsys import GAMMA_ELECTRON, GAMMA_PROTON, TWO_PI, HyperfineTensor, SystemParams

# mu_0 hbar / (4 pi), SI units (T^2 m^3 s / rad^2 ... times gammas in rad/(s T))
MU0_HBAR_4PI = 1.0e-7 * 1.054571817e-34
MIN_DISTANCE_NM = 0.05
# Fixed integrator step (us) for ensemble evaluations, fourth-order Magnus.
FAST_STEP = 20e-3
# An up-sweep starting from |0> polarizes nuclei towards -z in this basis; the
# figure of merit counts polarization along the direction the sweep builds up,
# which is what the detected NMR signal reports as positive.
SIGNAL_SIGN = -1.0
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def compute_hyperfine(
    position_nm: Sequence[float],
    gamma_S: float = GAMMA_ELECTRON,
    gamma_I: float = GAMMA_PROTON,
) -> HyperfineTensor:
    """Point-dipole secular rows ``A_zk = d (delta_zk - 3 n_z n_k)``.

    Gyromagnetic ratios in rad/us/mT, position in nm, result in rad/us.
    """
    r_vec = np.asarray(position_nm, dtype=float)
    r = float(np.linalg.norm(r_vec))
    if not r > MIN_DISTANCE_NM:
        raise ValueError(f"nucleus at {r:.3g} nm is too close for the point-dipole model")
    n = r_vec / r
    # rad/us/mT -> rad/s/T is a factor 1e9
    d = MU0_HBAR_4PI * (gamma_S * 1e9) * (gamma_I * 1e9) / (r * 1e-9) ** 3 * 1e-6
    return HyperfineTensor(*(d * (np.array([0.0, 0.0, 1.0]) - 3.0 * n[2] * n)))


@dataclass(frozen=True, eq=False)
class ProtonTable:
    positions: np.ndarray  # (M, 3), nm
    tensors: tuple[HyperfineTensor, ...]
    ranking: np.ndarray  # indices by coupling norm, strongest first

    def __len__(self) -> int:
        return len(self.tensors)

    @classmethod
    def from_positions(cls, positions, gamma_S: float = GAMMA_ELECTRON,
                       gamma_I: float = GAMMA_PROTON) -> "ProtonTable":
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        tensors = tuple(compute_hyperfine(p, gamma_S, gamma_I) for p in pos)
        norms = np.array([A.norm for A in tensors])
        # stable sort keeps ties in file order
        ranking = np.argsort(-norms, kind="stable")
        return cls(pos, tensors, ranking)

    def norms(self) -> np.ndarray:
        return np.array([A.norm for A in self.tensors])


def positions_to_csv(positions) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_nm", "y_nm", "z_nm"])
    for row in np.asarray(positions, dtype=float):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def positions_from_csv(text: str) -> np.ndarray:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows or [h.strip() for h in rows[0]] != ["x_nm", "y_nm", "z_nm"]:
        raise ValueError("proton table CSV needs the header x_nm,y_nm,z_nm")
    pos = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) == 0:
        raise ValueError("proton table needs at least one x,y,z row")
    return pos


def load_table(path: str | Path | None = None, **kwargs) -> ProtonTable:
    """Read a proton table; without a path, the bundled synthetic table."""
    if path is None:
        text = resources.files("arise").joinpath("data/protons_synthetic.csv").read_text()
    else:
        text = Path(path).read_text()
    return ProtonTable.from_positions(positions_from_csv(text), **kwargs)


def synthetic_positions(n: int = 574, r_min: float = 0.35, r_max: float = 1.2, seed: int = 2024) -> np.ndarray:
    """Illustrative proton geometry, not crystallographic data.

    Points uniform in volume inside a spherical shell around the electron.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(r_min**3, r_max**3, n) ** (1.0 / 3.0)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.round(v * u[:, None], 6)


# ------------------------------------------------------------------ sampling


@dataclass(frozen=True)
class EnsembleSpec:
    n_instances: int = 1000
    n_pick: int = 3
    pool_size: int = 30
    detuning_fwhm: float = TWO_PI * 10.0
    seed: int = 0
    fom_noise: float = 0.0  # std of additive Gaussian noise on the FoM

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if not 1 <= self.n_pick <= 3:
            raise ValueError("n_pick must be 1, 2 or 3")
        if self.pool_size < self.n_pick:
            raise ValueError("pool_size must be >= n_pick")
        if not self.detuning_fwhm >= 0 or not self.fom_noise >= 0:
            raise ValueError("detuning_fwhm and fom_noise must be non-negative")

    @property
    def sigma(self) -> float:
        return self.detuning_fwhm * FWHM_TO_SIGMA


def sample_instance(spec: EnsembleSpec, table: ProtonTable, rng: np.random.Generator):
    """Distinct nuclei from the top ``pool_size`` couplings and a detuning draw."""
    if spec.pool_size > len(table):
        raise ValueError("pool_size exceeds the table length")
    pool = table.ranking[: spec.pool_size]
    idx = rng.choice(pool, size=spec.n_pick, replace=False)
    delta = rng.normal(0.0, spec.sigma) if spec.sigma > 0 else 0.0
    return tuple(int(i) for i in idx), float(delta)


def sample_ensemble(spec: EnsembleSpec, table: ProtonTable):
    rng = np.random.default_rng(spec.seed)
    return [sample_instance(spec, table, rng) for _ in range(spec.n_instances)]


def instance_params(base: SystemParams, table: ProtonTable, indices, delta_es: float) -> SystemParams:
    couplings = tuple(table.tensors[i] for i in indices)
    nuc = base.nuclear_init if len(base.nuclear_init) == len(couplings) else ()
    return base.with_(couplings=couplings, delta_es=delta_es, nuclear_init=nuc)


# --------------------------------------------------------------------- FoM


@dataclass(frozen=True)
class FomResult:
    mean: float
    std_err: float
    per_instance: tuple[float, ...] = field(default=())
    n: int = 0
    seed: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        d["per_instance"] = list(self.per_instance)
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "FomResult":
        d = json.loads(text)
        d["per_instance"] = tuple(d["per_instance"])
        return cls(**d)


def _pulse_digest(pulse: Pulse) -> int:
    h = zlib.crc32(np.ascontiguousarray(pulse.t).tobytes())
    h = zlib.crc32(np.ascontiguousarray(pulse.omega_ext).tobytes(), h)
    return zlib.crc32(np.ascontiguousarray(pulse.phi_ext).tobytes(), h)


def _run_chunk(args):
    params, drive, n_shots, step, order = args
    res = evolve_batch(params, drive, n_out=2, n_shots=n_shots, step=step, order=order)
    pops = res.pop_electron[:, -1].sum(axis=1)
    return res.shot_p_mean[:, -1], pops


def evaluate_fom(
    pulse: Pulse,
    spec: EnsembleSpec,
    base_params: SystemParams | None = None,
    cav: CavityParams | None = None,
    n_shots: int = 1,
    table: ProtonTable | None = None,
    *,
    workers: int = 1,
    batch: int = 50,
    step: float = FAST_STEP,
    order: int = 4,
    orientation: float = SIGNAL_SIGN,
) -> FomResult:
    """Ensemble-mean final nuclear polarization after ``n_shots`` shots.

    Values are ``orientation * <2 I_z>`` averaged over each instance's nuclei.
    Instances are evaluated in batches of ``batch``; with ``workers > 1`` the
    batches run in separate processes and are reassembled in instance order.
    """
    base_params = base_params or SystemParams()
    cav = cav or CavityParams()
    table = table or load_table()
    draws = sample_ensemble(spec, table)
    params = [instance_params(base_params, table, idx, d) for idx, d in draws]
    drive = make_drive(pulse, cav)
    chunks = [(params[i : i + batch], drive, n_shots, step, order) for i in range(0, len(params), batch)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_chunk, chunks))
    else:
        outs = [_run_chunk(c) for c in chunks]
    values = orientation * np.concatenate([o[0] for o in outs])
    pops = np.concatenate([o[1] for o in outs])
    bad = np.flatnonzero(~np.isfinite(values) | (np.abs(pops - 1.0) > 1e-8) | (np.abs(values) > 1 + 1e-8))
    if bad.size:
        i = int(bad[0])
        raise SolverError(f"instance {i}: invalid final state (trace {pops[i]!r}, polarization {values[i]!r})")
    n = values.size
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if spec.fom_noise > 0:
        rng = np.random.default_rng([spec.seed, _pulse_digest(pulse)])
        mean = min(1.0, max(-1.0, mean + float(rng.normal(0.0, spec.fom_noise))))
        se = math.hypot(se, spec.fom_noise)
    return FomResult(mean, se, tuple(float(v) for v in values), n, spec.seed)
