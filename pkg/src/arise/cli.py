"""Command-line entry point: ``arise {simulate,calibrate,arise,buildup,pulse-gen}``.

Configuration is an INI file. Frequencies are linear MHz, times are us
(minutes in ``[buildup]``). Exit codes: 0 ok, 2 configuration or input
error, 3 solver failure, 4 fit failure, 5 optimizer budget exhausted.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .buildup import FitError, fit_buildup, fit_report, samples_from_csv
from .cavity import CavityParams, calibrate_gamma, filter_pulse, read_grid, simulate_rabi_grid, write_grid
from .ensemble import FAST_STEP, SIGNAL_SIGN, EnsembleSpec, evaluate_fom, load_table
from .optimizer import (
    BudgetExhausted,
    DcrabAborted,
    DcrabConfig,
    EvalLog,
    MultiSweepCandidate,
    OptimizerError,
    arise,
)
from .pulses import (
    DEFAULT_DT,
    MultiSweepSpec,
    Pulse,
    SweepSpec,
    constant_pulse,
    fitted_optimal,
    linear_sweep,
    precompensate,
    read_pulse,
    sinusoidal_sweep,
    write_pulse,
)
from .solver import SolverError, hh_window, initial_state, propagate, write_trace
from .spinsys import TWO_PI, SystemParams, params_from_mapping
from .svgplot import write_chart

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_FIT, EXIT_BUDGET = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


_SECTIONS: dict[str, set[str]] = {
    "system": {
        "D", "E", "gamma_S", "B0", "omega_L", "delta_es", "gamma_el", "gamma_loss0",
        "gamma_loss1", "electron_init", "couplings", "nuclear_init",
    },
    "paths": {"proton_table", "out", "pulse", "grid", "samples"},
    "cavity": {"gamma_cav", "delta_cs"},
    "ensemble": {
        "n_instances", "n_pick", "pool_size", "detuning_fwhm", "seed", "fom_noise",
        "n_shots", "step", "batch", "err_source",
    },
    "pulse": {
        "family", "delta_max", "duration", "amplitude", "n_osc", "half_period", "segment",
        "poly_order", "slowdown_frac", "n_segments", "dt", "precompensate",
    },
    "simulate": {"method", "n_out", "step", "ensemble"},
    "dcrab": {
        "n_super", "n_basis", "freq_lo", "freq_hi", "channels", "max_fom_evals",
        "simplex_init_scale", "amplitude_init_scale", "seed", "accept_k",
    },
    "arise": {"delta_max", "duration", "amplitude", "n_osc", "half_period", "dt"},
    "calibrate": {"candidates", "t_max", "n_samples", "n_detunings", "span", "amplitude"},
    "buildup": {"decay_time", "decay_time_err", "reference", "level_frac", "level"},
}


# ------------------------------------------------------------------ config


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    text: str = ""
    system: SystemParams = field(default_factory=SystemParams)
    cavity: CavityParams = field(default_factory=CavityParams)
    ensemble: EnsembleSpec = field(default_factory=lambda: EnsembleSpec(n_instances=50))
    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    def get(self, section: str, key: str, default=None, conv=str):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc

    def path(self, key: str, override: str | None = None) -> Path | None:
        p = override or self.get("paths", key)
        if p is None:
            return None
        p = Path(p)
        if not p.exists():
            raise ConfigError(f"referenced file does not exist: {p}")
        return p

    @property
    def seed(self) -> int:
        return self.ensemble.seed

    def digest(self) -> str:
        canon = json.dumps(self.sections, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path: str | None, seed: int | None = None) -> RunConfig:
    text = ""
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    sections: dict[str, dict[str, str]] = {}
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        values = dict(cp[name])
        unknown = set(values) - _SECTIONS[name]
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
        sections[name] = values
    if seed is not None:
        sections.setdefault("ensemble", {})["seed"] = str(seed)
        sections.setdefault("dcrab", {})["seed"] = str(seed)
    cfg = RunConfig(text=text, sections=sections)
    try:
        cfg.system = params_from_mapping(sections.get("system", {}))
        cfg.cavity = CavityParams(
            gamma_cav=TWO_PI * cfg.get("cavity", "gamma_cav", 9.24, float),
            delta_cs=TWO_PI * cfg.get("cavity", "delta_cs", 0.0, float),
        )
        cfg.ensemble = EnsembleSpec(
            n_instances=cfg.get("ensemble", "n_instances", 50, int),
            n_pick=cfg.get("ensemble", "n_pick", 3, int),
            pool_size=cfg.get("ensemble", "pool_size", 30, int),
            detuning_fwhm=TWO_PI * cfg.get("ensemble", "detuning_fwhm", 10.0, float),
            seed=cfg.get("ensemble", "seed", 0, int),
            fom_noise=cfg.get("ensemble", "fom_noise", 0.0, float),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.get("ensemble", "err_source", "noise") not in ("noise", "std_err"):
        raise ConfigError("[ensemble] err_source must be 'noise' or 'std_err'")
    return cfg


def build_pulse(cfg: RunConfig, pulse_path: str | None = None) -> Pulse:
    g = cfg.get
    family = g("pulse", "family", "linear")
    dt = g("pulse", "dt", DEFAULT_DT, float)
    amp = TWO_PI * g("pulse", "amplitude", 5.0, float)
    dmax = TWO_PI * g("pulse", "delta_max", 20.0, float)
    try:
        if family == "linear":
            pulse = linear_sweep(SweepSpec(dmax, g("pulse", "duration", 50.0, float), amp), dt)
        elif family == "sinusoidal":
            half = g("pulse", "half_period", 20.0, float)
            pulse = sinusoidal_sweep(MultiSweepSpec(dmax, g("pulse", "n_osc", 8, int), 2.0 * half, amp), dt)
        elif family == "fitted":
            pulse = fitted_optimal(
                dmax,
                g("pulse", "segment", 20.0, float),
                g("pulse", "poly_order", 3, int),
                g("pulse", "slowdown_frac", 0.25, float),
                g("pulse", "n_segments", 4, int),
                amp,
                dt,
            )
        elif family == "constant":
            pulse = constant_pulse(amp, g("pulse", "duration", 50.0, float), dt)
        elif family == "file":
            path = cfg.path("pulse", pulse_path)
            if path is None:
                raise ConfigError("pulse family 'file' needs [paths] pulse or --pulse")
            pulse = read_pulse(path)
        else:
            raise ConfigError(f"unknown pulse family {family!r}")
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[pulse] {exc}") from exc
    if g("pulse", "precompensate", False, _bool):
        pulse = precompensate(pulse, cfg.cavity)
    return pulse


def dcrab_config(cfg: RunConfig) -> DcrabConfig:
    g = cfg.get
    d = DcrabConfig()
    try:
        return DcrabConfig(
            n_super=g("dcrab", "n_super", 3, int),
            n_basis=g("dcrab", "n_basis", 3, int),
            freq_interval=(
                TWO_PI * g("dcrab", "freq_lo", d.freq_interval[0] / TWO_PI, float),
                TWO_PI * g("dcrab", "freq_hi", d.freq_interval[1] / TWO_PI, float),
            ),
            channels=tuple(c.strip() for c in g("dcrab", "channels", "phase").replace(",", " ").split()),
            max_fom_evals=g("dcrab", "max_fom_evals", 60, int),
            simplex_init_scale=g("dcrab", "simplex_init_scale", d.simplex_init_scale, float),
            amplitude_init_scale=TWO_PI * g("dcrab", "amplitude_init_scale", d.amplitude_init_scale / TWO_PI, float),
            seed=g("dcrab", "seed", 0, int),
            accept_k=g("dcrab", "accept_k", d.accept_k, float),
        )
    except ValueError as exc:
        raise ConfigError(f"[dcrab] {exc}") from exc


class EnsembleFom:
    """``pulse -> (FoM, comparison error)`` with results cached by pulse content.

    The comparison error is the configured FoM noise level by default. All
    pulses see the same ensemble draw, so the instance spread (``std_err``)
    does not separate two candidates; it is kept for reporting.
    """

    def __init__(self, cfg: RunConfig, workers: int = 1):
        self.cfg = cfg
        self.workers = workers
        self.table = load_table(cfg.path("proton_table"))
        self.err_source = cfg.get("ensemble", "err_source", "noise")
        self.n_shots = cfg.get("ensemble", "n_shots", 1, int)
        self.step = cfg.get("ensemble", "step", FAST_STEP, float)
        self.batch = cfg.get("ensemble", "batch", 50, int)
        self.cache: dict[str, object] = {}
        self.n_calls = 0

    @staticmethod
    def key(pulse: Pulse) -> str:
        h = hashlib.sha1()
        for a in (pulse.t, pulse.omega_ext, pulse.phi_ext):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        return h.hexdigest()

    def result(self, pulse: Pulse):
        k = self.key(pulse)
        if k not in self.cache:
            self.n_calls += 1
            self.cache[k] = evaluate_fom(
                pulse, self.cfg.ensemble, self.cfg.system, self.cfg.cavity, self.n_shots, self.table,
                workers=self.workers, batch=self.batch, step=self.step,
            )
        return self.cache[k]

    def __call__(self, pulse: Pulse) -> tuple[float, float]:
        r = self.result(pulse)
        err = r.std_err if self.err_source == "std_err" else self.cfg.ensemble.fom_noise
        return r.mean, err


# ------------------------------------------------------------------ output


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.get("paths", "out", "arise_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "dcrab_seed": cfg.get("dcrab", "seed", 0, int),
        "versions": {
            "arise": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else repr(float(v)) for v in r])
    return buf.getvalue()


def _mhz(x):
    return np.asarray(x) / TWO_PI


# ---------------------------------------------------------------- commands


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    pulse = build_pulse(cfg, args.pulse)
    params = cfg.system
    method = cfg.get("simulate", "method", "rk")
    n_out = cfg.get("simulate", "n_out", 501, int)
    if method not in ("rk", "expm"):
        raise ConfigError("[simulate] method must be 'rk' or 'expm'")
    trace, final = propagate(
        initial_state(params), pulse, params, cfg.cavity, n_out,
        method=method, step=cfg.get("simulate", "step", 4e-3, float),
    )
    field_tr = filter_pulse(pulse, cfg.cavity)
    w = np.interp(trace.t, field_tr.t, field_tr.omega_int.real) + 1j * np.interp(
        trace.t, field_tr.t, field_tr.omega_int.imag
    )
    write_trace(trace, out / "trace.csv")
    (out / "field.csv").write_text(
        _csv_text(
            ["t_us", "omega_int_re_MHz", "omega_int_im_MHz", "omega_int_abs_MHz"],
            zip(trace.t, _mhz(w.real), _mhz(w.imag), _mhz(np.abs(w))),
        )
    )
    half = hh_window(type(field_tr)(trace.t, w), params.omega_L)
    offset = np.interp(trace.t, pulse.t, pulse.delta) + params.delta_es
    (out / "hh_window.csv").write_text(
        _csv_text(
            ["t_us", "hh_halfwidth_MHz", "offset_MHz", "inside"],
            zip(trace.t, _mhz(half), _mhz(offset), (np.abs(offset) <= np.nan_to_num(half, nan=-1.0)).astype(float)),
        )
    )
    summary = {
        "pulse_duration_us": pulse.duration,
        "final_p_mean": float(trace.p_mean[-1]),
        "final_p_mean_std_err": 0.0,
        "final_fom": float(SIGNAL_SIGN * trace.p_mean[-1]),
        "final_p_nuc": [float(v) for v in trace.p_nuc[-1]],
        "final_populations": [float(v) for v in trace.pop_electron[-1]],
        "method": method,
    }
    if cfg.get("simulate", "ensemble", False, _bool):
        r = EnsembleFom(cfg, args.workers).result(pulse)
        summary["ensemble"] = {"fom": r.mean, "std_err": r.std_err, "n": r.n, "seed": r.seed}
        summary["final_fom"], summary["final_p_mean_std_err"] = r.mean, r.std_err
        summary["final_p_mean"] = SIGNAL_SIGN * r.mean
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_chart(
        out / "polarization.svg",
        [("p_mean", trace.t, trace.p_mean)] + [(f"nucleus {i + 1}", trace.t, trace.p_nuc[:, i]) for i in range(trace.p_nuc.shape[1])],
        "t (us)", "<2 Iz>", "Nuclear polarization",
    )
    write_chart(
        out / "field.svg",
        [("|Omega_int|", trace.t, _mhz(np.abs(w))), ("offset", trace.t, _mhz(offset)),
         ("+HH", trace.t, _mhz(half)), ("-HH", trace.t, -_mhz(half))],
        "t (us)", "MHz", "Intracavity field and Hartmann-Hahn window",
    )
    write_manifest(out, "simulate", cfg)
    print(f"final p_mean {summary['final_p_mean']:.6g} -> {out}")
    return EXIT_OK


def cmd_pulse_gen(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    pulse = build_pulse(cfg, args.pulse)
    write_pulse(pulse, out / "pulse.csv")
    write_chart(
        out / "pulse.svg",
        [("amplitude", pulse.t, _mhz(pulse.omega_ext)), ("detuning", pulse.t, _mhz(pulse.delta))],
        "t (us)", "MHz", "Pulse",
    )
    write_manifest(out, "pulse-gen", cfg)
    print(f"{pulse.t.size} samples, {pulse.duration:g} us -> {out / 'pulse.csv'}")
    return EXIT_OK


def calibration_candidates(cfg: RunConfig) -> np.ndarray:
    c = cfg.get("calibrate", "candidates", None, _floats)
    if c is None:
        c = list(np.linspace(5.0, 14.0, 10))
    if len(c) < 4:
        raise ConfigError(f"{len(c)} candidate gamma values leave the 4-parameter Gaussian fit underdetermined; need at least 4")
    return TWO_PI * np.asarray(c, dtype=float)


def cmd_calibrate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    cands = calibration_candidates(cfg)
    t_max = cfg.get("calibrate", "t_max", 0.6, float)
    n_samples = cfg.get("calibrate", "n_samples", 256, int)
    amp = TWO_PI * cfg.get("calibrate", "amplitude", 19.3, float)
    dets = TWO_PI * np.linspace(
        -cfg.get("calibrate", "span", 25.0, float), cfg.get("calibrate", "span", 25.0, float),
        cfg.get("calibrate", "n_detunings", 51, int),
    )
    if args.synthetic_gamma is not None:
        measured = simulate_rabi_grid(CavityParams(TWO_PI * args.synthetic_gamma), dets, t_max, cfg.system, amp, n_samples)
        write_grid(measured, out / "measured_grid.csv")
    else:
        path = cfg.path("grid", args.grid)
        if path is None:
            raise ConfigError("calibrate needs a measured grid ([paths] grid, --grid or --synthetic-gamma)")
        try:
            measured = read_grid(path)
        except ValueError as exc:
            raise ConfigError(f"cannot read grid: {exc}") from exc
    cal = calibrate_gamma(measured, cands, cfg.system, t_max, amp)
    sd = math.sqrt(cal.fit_cov[2, 2]) if np.isfinite(cal.fit_cov[2, 2]) and cal.fit_cov[2, 2] >= 0 else None
    result = {
        "gamma_cav_MHz": cal.gamma_cav / TWO_PI,
        "gamma_cav_err_MHz": None if sd is None else sd / TWO_PI,
        "fit_params": {
            "c0": float(cal.fit_params[0]), "c1": float(cal.fit_params[1]),
            "mu_MHz": float(cal.fit_params[2] / TWO_PI), "sigma_MHz": float(abs(cal.fit_params[3]) / TWO_PI),
        },
        "best_candidate_MHz": float(cal.candidates[int(np.argmin(cal.errors))] / TWO_PI),
        "min_error": float(cal.errors.min()),
    }
    (out / "calibration.json").write_text(json.dumps(result, indent=2) + "\n")
    (out / "error_curve.csv").write_text(_csv_text(["gamma_MHz", "error"], zip(_mhz(cal.candidates), cal.errors)))
    write_chart(out / "error_curve.svg", [("error", _mhz(cal.candidates), cal.errors)], "gamma_cav (MHz)", "grid error", "Calibration")
    write_manifest(out, "calibrate", cfg)
    print(f"gamma_cav = {result['gamma_cav_MHz']:.4f} MHz -> {out}")
    return EXIT_OK


def arise_grids(cfg: RunConfig):
    g = cfg.get
    dmax = g("arise", "delta_max", [10.0, 20.0], _floats)
    dur = g("arise", "duration", [10.0, 20.0, 50.0], _floats)
    amp = g("arise", "amplitude", [5.0], _floats)
    try:
        step1 = [SweepSpec(TWO_PI * d, T, TWO_PI * a) for d in dmax for T in dur for a in amp]
        n_osc = [int(v) for v in g("arise", "n_osc", [1.0, 2.0, 4.0, 8.0], _floats)]
        halves = [None if h.strip() in ("lin", "linear") else float(h)
                  for h in g("arise", "half_period", "lin").replace(",", " ").split()]
        step2 = [MultiSweepCandidate(n, h) for n in n_osc for h in halves]
    except ValueError as exc:
        raise ConfigError(f"[arise] {exc}") from exc
    if not step1 or not step2:
        raise ConfigError("[arise] grids must be non-empty")
    return step1, step2


def cmd_arise(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    step1, step2 = arise_grids(cfg)
    dc = dcrab_config(cfg)
    fom = EnsembleFom(cfg, args.workers)
    log = EvalLog(out / "arise_log.jsonl", resume=not args.fresh)
    write_manifest(out, "arise", cfg)
    try:
        res = arise(step1, step2, dc, fom, dt=cfg.get("arise", "dt", DEFAULT_DT, float), log=log)
    except DcrabAborted as exc:
        rec = exc.record
        (out / "convergence.csv").write_text(rec.convergence_csv())
        if rec.best_pulse is not None:
            write_pulse(rec.best_pulse, out / "best_pulse.csv")
        raise
    rec = res.record
    write_pulse(rec.best_pulse, out / "best_pulse.csv")
    (out / "convergence.csv").write_text(rec.convergence_csv())

    def std_err(pulse):
        return fom.result(pulse).std_err if fom.key(pulse) in fom.cache else None

    summary = {
        "step1": {"params": res.step1.params, "fom": res.step1.fom, "std_err": std_err(res.step1.pulse)},
        "step2": {"params": res.step2.params, "fom": res.step2.fom, "std_err": std_err(res.step2.pulse)},
        "dcrab": {
            "best_fom": rec.best_fom,
            "best_err": rec.best_err,
            "std_err": std_err(rec.best_pulse),
            "n_evals": len(rec.iterations),
            "frequencies_MHz": [[[w / TWO_PI for w in ch] for ch in si] for si in rec.frequencies_per_si],
        },
        "log_entries": len(log.entries),
    }
    (out / "arise_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    it = np.arange(len(rec.iterations))
    write_chart(
        out / "convergence.svg",
        [("FoM", it, [e["fom"] for e in rec.iterations]), ("best so far", it, rec.best_so_far())],
        "evaluation", "FoM", "dCRAB convergence",
    )
    print(f"linear {res.step1.fom:.5g}  multi-sweep {res.step2.fom:.5g}  dCRAB {rec.best_fom:.5g} -> {out}")
    return EXIT_OK


def cmd_buildup(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    path = cfg.path("samples", args.samples)
    if path is None:
        raise ConfigError("buildup needs a samples CSV ([paths] samples or --samples)")
    try:
        curves = samples_from_csv(path.read_text())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for label, (t, _) in curves.items():
        if t.size < 3:
            raise ConfigError(f"curve {label!r} has {t.size} samples; need at least 3")
    decay = cfg.get("buildup", "decay_time", 223.0, float)
    decay_err = cfg.get("buildup", "decay_time_err", 0.0, float)
    if not decay > 0:
        raise ConfigError("[buildup] decay_time must be positive")
    gamma, gamma_err = 1.0 / decay, decay_err / decay**2
    fits = {label: fit_buildup(t, p) for label, (t, p) in curves.items()}
    ref = cfg.get("buildup", "reference", next(iter(fits)))
    if ref not in fits:
        raise ConfigError(f"[buildup] reference curve {ref!r} not in samples")
    level = cfg.get("buildup", "level", None, float)
    if level is None:
        level = cfg.get("buildup", "level_frac", 0.98, float) * fits[ref].p_max
    report: dict = {"gamma": gamma, "level": level, "curves": {}}
    times = {}
    for label, f in fits.items():
        try:
            rep = fit_report(f, gamma, level, gamma_err)
        except ValueError:
            rep = fit_report(f, None, level)
            rep["p_max_frac"] = "no polarization power (gamma_tilde <= gamma)"
        report["curves"][label] = rep
        times[label] = rep["t_to_98pct"]
    if len(fits) > 1:
        t_ref = times[ref]
        report["comparison"] = {
            "reference": ref,
            "speedup": {
                k: (t_ref / v if isinstance(v, float) and isinstance(t_ref, float) and v > 0 else None)
                for k, v in times.items() if k != ref
            },
        }
    (out / "buildup_report.json").write_text(json.dumps(report, indent=2) + "\n")
    rows = []
    for label, rep in report["curves"].items():
        t_l = rep["t_to_98pct"]
        sp = report.get("comparison", {}).get("speedup", {}).get(label)
        rows.append([label, rep["gamma_tilde"], rep["p_max"], str(rep["p_max_frac"]) if isinstance(rep["p_max_frac"], str) else rep["p_max_frac"],
                     t_l, "" if sp is None else sp])
    (out / "buildup_table.csv").write_text(
        _csv_text(["label", "gamma_tilde_per_min", "p_max", "p_max_frac", "t_to_level_min", "speedup"], rows)
    )
    series = []
    for label, (t, p) in curves.items():
        tt = np.linspace(0.0, float(t.max()), 200)
        series += [(f"{label} data", t, p), (f"{label} fit", tt, fits[label](tt))]
    write_chart(out / "buildup.svg", series, "t (min)", "signal", "Polarization build-up")
    write_manifest(out, "buildup", cfg)
    for label, rep in report["curves"].items():
        print(f"{label}: gamma_tilde {rep['gamma_tilde']:.5g}/min  p_max_frac {rep['p_max_frac']}  t {rep['t_to_98pct']}")
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="override the ensemble and dCRAB seeds")
    common.add_argument("--workers", type=int, default=1, help="processes for ensemble evaluation")
    common.add_argument("--out", help="output directory")
    ap = argparse.ArgumentParser(prog="arise", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="propagate one system under a pulse")
    p.add_argument("--pulse", help="pulse CSV (family = file)")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("calibrate", parents=[common], help="fit the cavity response factor")
    p.add_argument("--grid", help="measured spectrum grid CSV")
    p.add_argument("--synthetic-gamma", type=float, help="generate the measured grid at this gamma_cav (MHz)")
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("arise", parents=[common], help="run the three-step optimization")
    p.add_argument("--fresh", action="store_true", help="discard an existing log instead of resuming")
    p.set_defaults(func=cmd_arise)
    p = sub.add_parser("buildup", parents=[common], help="fit build-up curves")
    p.add_argument("--samples", help="samples CSV (t_min, signal[, label])")
    p.set_defaults(func=cmd_buildup)
    p = sub.add_parser("pulse-gen", parents=[common], help="write a pulse CSV")
    p.add_argument("--pulse", help="pulse CSV (family = file)")
    p.set_defaults(func=cmd_pulse_gen)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.seed)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExhausted as exc:
        print(f"optimizer budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (SolverError, DcrabAborted) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except FitError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OptimizerError as exc:
        print(f"optimizer error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        # curve_fit non-convergence in calibration surfaces as RuntimeError
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
