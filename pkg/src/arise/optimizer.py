"""Derivative-free pulse optimization: Nelder-Mead, dCRAB and the ARISE driver.

Every figure-of-merit call is appended to a JSON-lines log as it happens.
Because the optimizer is deterministic for a fixed seed and a deterministic
figure of merit, resuming is a replay: logged values are fed back in order
(after checking the candidate matches) until the log runs out, and the run
then continues live.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .pulses import (
    MultiSweepSpec,
    Pulse,
    SweepSpec,
    bandwidth_cap,
    fourier_pulse,
    linear_sweep,
    sinusoidal_sweep,
)
from .spinsys import TWO_PI

FomEval = Callable[[Pulse], tuple[float, float]]


class OptimizerError(RuntimeError):
    pass


class NonFiniteFom(OptimizerError):
    pass


class BudgetExhausted(OptimizerError):
    """No successful figure-of-merit evaluation was possible within the budget."""


# -------------------------------------------------------------- Nelder-Mead


@dataclass
class NMResult:
    x: np.ndarray
    fun: float
    trace: list[tuple[np.ndarray, float]]
    n_evals: int
    converged: bool


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0: Sequence[float],
    scale: float | Sequence[float] = 1.0,
    budget: int = 200,
    xtol: float = 1e-6,
) -> NMResult:
    """Maximize ``f`` with the standard simplex method.

    Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
    The initial simplex is ``x0`` plus ``scale_i e_i``. Stops when the budget
    of function evaluations is used or when every vertex lies within
    ``xtol * scale`` of the best one.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if n < 1:
        raise ValueError("need at least one dimension")
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (n,)).copy()
    if np.any(scale <= 0):
        raise ValueError("simplex scale must be positive")
    trace: list[tuple[np.ndarray, float]] = []

    def g(x):
        # minimize the negated objective
        v = float(f(x))
        if not math.isfinite(v):
            raise NonFiniteFom(f"objective returned {v!r} at x={x.tolist()}")
        trace.append((x.copy(), v))
        return -v

    def done():
        return len(trace) >= budget

    def result(conv):
        i = int(np.argmin(fs))
        return NMResult(sim[i].copy(), -fs[i], trace, len(trace), conv)

    sim = [x0.copy()]
    fs = [g(x0)]
    for i in range(n):
        if done():
            return result(False)
        x = x0.copy()
        x[i] += scale[i]
        sim.append(x)
        fs.append(g(x))
    sim = np.array(sim)
    fs = np.array(fs)

    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if np.max(np.abs(sim[1:] - sim[0]) / scale) < xtol:
            return result(True)
        if done():
            return result(False)
        c = sim[:-1].mean(axis=0)
        xr = c + (c - sim[-1])
        fr = g(xr)
        if fs[0] <= fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[0]:
            if done():
                sim[-1], fs[-1] = xr, fr
                return result(False)
            xe = c + 2.0 * (xr - c)
            fe = g(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if done():
            return result(False)
        if fr < fs[-1]:
            xc = c + 0.5 * (xr - c)
            fc = g(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = c - 0.5 * (c - sim[-1])
            fc = g(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            if done():
                return result(False)
            sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
            fs[i] = g(sim[i])


# --------------------------------------------------------------------- dCRAB


@dataclass(frozen=True)
class DcrabConfig:
    n_super: int = 5
    n_basis: int = 3
    freq_interval: tuple[float, float] = (TWO_PI * 0.01, TWO_PI * 2.0)
    channels: tuple[str, ...] = ("phase",)
    max_fom_evals: int = 120
    simplex_init_scale: float = 1.0  # rad, phase channel
    amplitude_init_scale: float = TWO_PI * 1.0  # rad/us, amplitude channel
    seed: int = 0
    accept_k: float = 1.0  # candidate must beat the incumbent by accept_k * fom_err

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "freq_interval", tuple(float(w) for w in self.freq_interval))
        lo, hi = self.freq_interval
        if not (0 < lo < hi):
            raise ValueError("freq_interval needs 0 < w_lo < w_hi")
        if self.n_super < 1 or self.n_basis < 1:
            raise ValueError("n_super and n_basis must be >= 1")
        if not self.channels or set(self.channels) - {"amplitude", "phase"} or len(set(self.channels)) != len(self.channels):
            raise ValueError("channels must be a non-empty subset of {amplitude, phase}")
        if self.max_fom_evals < self.n_params + 2:
            raise ValueError(f"budget must be at least {self.n_params + 2} evaluations per super-iteration")
        if self.simplex_init_scale <= 0 or self.amplitude_init_scale <= 0 or self.accept_k < 0:
            raise ValueError("scales must be positive and accept_k non-negative")

    @property
    def n_params(self) -> int:
        return 2 * self.n_basis * len(self.channels)

    def scales(self) -> np.ndarray:
        per = {"phase": self.simplex_init_scale, "amplitude": self.amplitude_init_scale}
        return np.concatenate([np.full(2 * self.n_basis, per[c]) for c in self.channels])


def apply_coefficients(base: Pulse, freqs: np.ndarray, x: np.ndarray, channels: Sequence[str],
                       omega_cap: float | None = None) -> Pulse:
    """Superimpose the Fourier terms ``x`` (A, B per frequency, per channel) on ``base``."""
    nb = freqs.shape[1]
    out = base
    for ci, ch in enumerate(channels):
        seg = x[2 * nb * ci : 2 * nb * (ci + 1)].reshape(nb, 2)
        coeffs = [(float(a), float(b), float(w)) for (a, b), w in zip(seg, freqs[ci])]
        out = fourier_pulse(out, coeffs, target=ch, omega_cap=omega_cap)
    return out


class EvalLog:
    """Append-only JSON-lines log with replay for resumption."""

    def __init__(self, path: str | Path | None = None, resume: bool = True):
        self.path = Path(path) if path is not None else None
        self.entries: list[dict] = []
        self._replay: list[dict] = []
        if self.path is not None and resume and self.path.exists():
            lines = self.path.read_text().splitlines()
            for line in lines:
                try:
                    self._replay.append(json.loads(line))
                except json.JSONDecodeError:
                    break  # torn last line from an interrupted write
            good = "".join(json.dumps(e) + "\n" for e in self._replay)
            self.path.write_text(good)
        elif self.path is not None:
            self.path.write_text("")

    @property
    def replaying(self) -> bool:
        return len(self.entries) < len(self._replay)

    def lookup(self, key: dict) -> dict | None:
        """The logged entry for the next call, if it matches ``key``."""
        if not self.replaying:
            return None
        e = self._replay[len(self.entries)]
        if any(e.get(k) != v for k, v in key.items()):
            raise OptimizerError(
                f"log entry {len(self.entries)} does not match the resumed run; use a fresh output directory"
            )
        return e

    def append(self, entry: dict) -> None:
        replayed = self.replaying
        self.entries.append(entry)
        if self.path is not None and not replayed:
            with self.path.open("a") as fh:
                fh.write(json.dumps(entry) + "\n")


@dataclass
class OptimizationRecord:
    iterations: list[dict] = field(default_factory=list)
    best_pulse: Pulse | None = None
    best_fom: float = -math.inf
    best_err: float = 0.0
    frequencies_per_si: list[list[list[float]]] = field(default_factory=list)

    def best_so_far(self) -> np.ndarray:
        return np.array([it["best"] for it in self.iterations])

    def convergence_csv(self) -> str:
        lines = ["eval,super,fom,fom_err,best"]
        for i, it in enumerate(self.iterations):
            lines.append(f"{i},{it['super']},{it['fom']!r},{it['fom_err']!r},{it['best']!r}")
        return "\n".join(lines) + "\n"


class DcrabAborted(OptimizerError):
    def __init__(self, msg, record: OptimizationRecord):
        super().__init__(msg)
        self.record = record


def _measure(fom_eval: FomEval, pulse: Pulse, log: EvalLog, key: dict):
    hit = log.lookup(key)
    if hit is not None:
        return float(hit["fom"]), float(hit["fom_err"])
    v, e = fom_eval(pulse)
    return float(v), float(e)


def dcrab_optimize(
    guess: Pulse,
    fom_eval: FomEval,
    config: DcrabConfig,
    log: EvalLog | None = None,
    omega_cap: float | None = None,
) -> OptimizationRecord:
    """Closed-loop dCRAB: random Fourier basis per super-iteration, Nelder-Mead inside.

    Each super-iteration starts the simplex at zero coefficients, i.e. at the
    current best pulse, so the incumbent is always re-measured first. The
    pulse duration never changes.
    """
    log = log or EvalLog()
    rng = np.random.default_rng(config.seed)
    lo, hi = config.freq_interval
    cap = bandwidth_cap(guess.dt) if omega_cap is None else omega_cap
    if hi > cap:
        raise ValueError(f"frequency interval reaches {hi:.4g} rad/us, above the bandwidth cap {cap:.4g}")
    rec = OptimizationRecord(best_pulse=guess)
    n_ch = len(config.channels)
    for si in range(config.n_super):
        freqs = rng.uniform(lo, hi, size=(n_ch, config.n_basis))
        rec.frequencies_per_si.append(freqs.tolist())
        base = rec.best_pulse
        evals = [0]

        def objective(x, si=si, freqs=freqs, base=base):
            cand = apply_coefficients(base, freqs, x, config.channels, cap)
            key = {"super": si, "eval": evals[0], "freqs": freqs.tolist(), "coeffs": x.tolist()}
            try:
                v, e = _measure(fom_eval, cand, log, key)
            except OptimizerError:
                raise
            except Exception as exc:
                raise DcrabAborted(f"figure of merit failed in super-iteration {si}: {exc}", rec) from exc
            # the first measurement (the guess) always becomes the incumbent
            accepted = math.isfinite(v) and v > rec.best_fom + config.accept_k * e
            if accepted:
                rec.best_pulse, rec.best_fom, rec.best_err = cand, v, e
            entry = {
                "super": si,
                "eval": evals[0],
                "freqs": freqs.tolist(),
                "coeffs": x.tolist(),
                "fom": v,
                "fom_err": e,
                "accepted": bool(accepted),
                "best": rec.best_fom,
            }
            log.append(entry)
            rec.iterations.append(entry)
            evals[0] += 1
            return v

        try:
            nelder_mead(objective, np.zeros(config.n_params), config.scales(), config.max_fom_evals)
        except NonFiniteFom as exc:
            raise DcrabAborted(str(exc), rec) from exc
    if not rec.iterations:
        raise BudgetExhausted("no figure-of-merit evaluation succeeded")
    return rec


# --------------------------------------------------------------------- ARISE


@dataclass(frozen=True)
class MultiSweepCandidate:
    """Step-2 grid point; ``half_period=None`` means the step-1 sweep duration."""

    n_osc: int
    half_period: float | None = None


@dataclass
class StepResult:
    label: str
    pulse: Pulse
    fom: float
    fom_err: float
    params: dict
    table: list[dict]


@dataclass
class AriseResult:
    step1: StepResult
    step2: StepResult
    record: OptimizationRecord

    def chain(self) -> tuple[float, float, float]:
        return self.step1.fom, self.step2.fom, self.record.best_fom


def _grid_step(label, items, build, fom_eval, log, step_no):
    table = []
    best = None
    for j, (params, pulse) in enumerate((p, build(p)) for p in items):
        key = {"step": step_no, "eval": j, "params": params}
        v, e = _measure(fom_eval, pulse, log, key)
        entry = {"step": step_no, "eval": j, "params": params, "fom": v, "fom_err": e}
        log.append(entry)
        table.append(entry)
        if math.isfinite(v) and (best is None or v > best.fom):
            best = StepResult(label, pulse, v, e, params, table)
    if best is None:
        raise BudgetExhausted(f"{label}: no finite figure of merit")
    return best


def arise(
    step1_grid: Iterable[SweepSpec],
    step2_grid: Iterable[MultiSweepCandidate],
    config: DcrabConfig,
    fom_eval: FomEval,
    *,
    dt: float = 1e-3,
    log: EvalLog | None = None,
) -> AriseResult:
    """Tune a linear sweep, extend it to repeated sinusoidal sweeps, then run dCRAB.

    Step 2 keeps ``delta_max`` and the amplitude of the step-1 winner. The
    step-1 winner stays in the running during step 2, and dCRAB starts from
    the step-2 winner, so the recorded chain of winners never decreases.
    """
    step1_grid = list(step1_grid)
    step2_grid = list(step2_grid)
    if not step1_grid or not step2_grid:
        raise ValueError("ARISE needs non-empty step-1 and step-2 grids")
    log = log or EvalLog()

    s1 = _grid_step(
        "linear", [asdict(s) for s in step1_grid], lambda p: linear_sweep(SweepSpec(**p), dt),
        fom_eval, log, 1,
    )
    lin = SweepSpec(**s1.params)

    def multi(p):
        return sinusoidal_sweep(MultiSweepSpec(lin.delta_max, p["n_osc"], p["tau"], lin.amplitude), dt)

    items = [
        {"n_osc": c.n_osc, "tau": 2.0 * (c.half_period if c.half_period is not None else lin.duration)}
        for c in step2_grid
    ]
    s2 = _grid_step("multi-sweep", items, multi, fom_eval, log, 2)
    if s2.fom < s1.fom:
        s2 = StepResult("multi-sweep", s1.pulse, s1.fom, s1.fom_err, {"linear": s1.params}, s2.table)
    rec = dcrab_optimize(s2.pulse, fom_eval, config, log)
    return AriseResult(s1, s2, rec)
