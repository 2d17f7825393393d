"""Desk-scale ARISE run plus the multi-sweep versus single-sweep comparison.

Usage: python scripts/run_arise_desk.py [--config configs/desk.ini] [--out desk_out]
"""

import argparse
import json
import time
from pathlib import Path

from arise.cli import EnsembleFom, load_config, main
from arise.pulses import MultiSweepSpec, SweepSpec, linear_sweep, sinusoidal_sweep
from arise.spinsys import TWO_PI

ROOT = Path(__file__).resolve().parents[1]


def compare_sweeps(cfg, half_period=20.0, n_osc=8, delta_max=TWO_PI * 20.0, amplitude=TWO_PI * 5.0):
    fom = EnsembleFom(cfg)
    single = fom.result(linear_sweep(SweepSpec(delta_max, half_period, amplitude)))
    multi = fom.result(sinusoidal_sweep(MultiSweepSpec(delta_max, n_osc, 2.0 * half_period, amplitude)))
    return {
        "single": {"fom": single.mean, "std_err": single.std_err},
        "multi": {"fom": multi.mean, "std_err": multi.std_err, "n_osc": n_osc, "half_period_us": half_period},
    }


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.ini"))
    ap.add_argument("--out", default="desk_out")
    ap.add_argument("--workers", type=int, default=1)
    a = ap.parse_args()
    t0 = time.perf_counter()
    rc = main(["arise", "--config", a.config, "--out", a.out, "--workers", str(a.workers), "--fresh"])
    t_arise = time.perf_counter() - t0
    cmp = compare_sweeps(load_config(a.config))
    cmp["arise_runtime_s"] = t_arise
    Path(a.out, "sweep_comparison.json").write_text(json.dumps(cmp, indent=2) + "\n")
    print(json.dumps(cmp, indent=2))
    raise SystemExit(rc)
